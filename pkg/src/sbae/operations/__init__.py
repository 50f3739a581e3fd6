"""Corpus, training, evaluation and sizing operations -- pure business logic."""
