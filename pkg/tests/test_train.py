"""Tests for batching, gradient accumulation and the training driver."""

import csv
import math
from collections import Counter

import numpy as np
import pytest

from sbae.checkpoint import load_checkpoint
from sbae.config import ModelConfig, TrainConfig
from sbae.errors import ConfigError, CorpusError, DivergenceError
from sbae.model import Autoencoder
from sbae.tensor import cross_entropy, no_grad, precision
from sbae.tokenizer import TokenSequence
from sbae.train import (
    IGNORE_INDEX,
    OptimizerState,
    accumulation_windows,
    batches_from_sequences,
    epoch_batches,
    collate,
    loss_positions,
    lr_for,
    make_batches,
    prefetch,
    train,
    train_step,
)


def _sequences(count, seed=0, vocab_size=23):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        content = rng.integers(5, vocab_size, size=int(rng.integers(1, 7))).tolist()
        out.append(TokenSequence(ids=tuple([2, *content, 3])))
    return out


@pytest.fixture
def train_model_config(synthetic_tokenizer):
    return ModelConfig(
        d=16, ell=1, n_heads=2, vocab_size=len(synthetic_tokenizer.vocab), max_seq_len=32, dropout_p=0.0
    )


# =============================================================================
# Schedule and batching
# =============================================================================


def test_lr_for():
    assert lr_for(768) == 1e-4
    assert lr_for(1024) == 5e-5
    assert lr_for(2048) == 5e-5


def test_loss_positions():
    mask = loss_positions(np.array([3, 5]), 5)
    assert mask.tolist() == [[False, True, True, False, False], [False, True, True, True, True]]
    assert loss_positions(np.array([3]), 4, include_specials=True).tolist() == [[True, True, True, False]]


def test_collate_pads_to_longest():
    batch = collate([TokenSequence(ids=(2, 7, 3)), TokenSequence(ids=(2, 3))], pad_id=0)
    assert batch.ids.tolist() == [[2, 7, 3], [2, 3, 0]]
    assert batch.lengths.tolist() == [3, 2]
    assert batch.n_positions == 3
    assert batch.targets.tolist() == [[IGNORE_INDEX, 7, 3], [IGNORE_INDEX, 3, IGNORE_INDEX]]


def test_batch_sizes_keep_trailing_partial():
    sizes = [batch.size for batch in batches_from_sequences(_sequences(10), 0, 4, seed=1)]
    assert sizes == [4, 4, 2]


def test_batch_order_is_seeded():
    sequences = _sequences(30)

    def order(seed, epoch):
        return [row.tolist() for batch in batches_from_sequences(sequences, 0, 4, seed, epoch) for row in batch.ids]

    assert order(5, 0) == order(5, 0)
    assert order(5, 0) != order(5, 1)
    assert order(5, 0) != order(6, 0)


def test_epoch_covers_every_sentence_once():
    sequences = _sequences(37, seed=2)
    seen = Counter()
    for batch in batches_from_sequences(sequences, 0, 8, seed=3):
        for row, length in zip(batch.ids, batch.lengths):
            seen[tuple(row[:length].tolist())] += 1
    assert seen == Counter(seq.ids for seq in sequences)


def test_empty_corpus():
    with pytest.raises(CorpusError):
        list(batches_from_sequences([], 0, 4, seed=0))


def test_make_batches_from_records(synthetic_records, synthetic_tokenizer):
    records = synthetic_records[:50]
    batches = list(make_batches(records, synthetic_tokenizer, 16, seed=4))
    assert [batch.size for batch in batches] == [16, 16, 16, 2]
    assert sum(int(batch.lengths.sum()) for batch in batches) == sum(
        len(synthetic_tokenizer.encode(record.text)) for record in records
    )
    assert all(batch.ids[:, 0].tolist() == [synthetic_tokenizer.vocab.cls_id] * batch.size for batch in batches)
    with pytest.raises(CorpusError):
        make_batches([], synthetic_tokenizer, 16, seed=4)


def test_accumulation_windows_drop_trailing_partial(caplog):
    batches = list(batches_from_sequences(_sequences(10), 0, 2, seed=0))
    windows = list(accumulation_windows(batches, 2))
    assert [len(window) for window in windows] == [2, 2]
    assert "skipping 1 trailing micro-batches" in caplog.text


def test_epoch_batches_run_epochs_back_to_back():
    sequences = _sequences(5, seed=1)
    stream = list(epoch_batches(sequences, 0, 2, seed=3, epochs=2))
    expected = list(batches_from_sequences(sequences, 0, 2, 3, 0)) + list(batches_from_sequences(sequences, 0, 2, 3, 1))
    assert [batch.ids.tolist() for batch in stream] == [batch.ids.tolist() for batch in expected]
    # 3 micro-batches per epoch fill 3 windows of 2 across the boundary
    assert [len(window) for window in accumulation_windows(stream, 2)] == [2, 2, 2]


def test_prefetch_preserves_order_and_errors():
    assert list(prefetch(iter(range(50)), depth=3)) == list(range(50))
    assert list(prefetch(iter(range(5)), depth=0)) == list(range(5))

    def failing():
        yield 1
        raise RuntimeError("boom")

    with pytest.raises(RuntimeError, match="boom"):
        list(prefetch(failing(), depth=2))


def test_prefetch_stops_early():
    stream = prefetch(iter(range(1000)), depth=2)
    assert next(stream) == 0
    stream.close()


# =============================================================================
# Loss and accumulation
# =============================================================================


def test_initial_loss_is_near_uniform(small_config):
    model = Autoencoder(small_config, seed=0)
    batch = collate(_sequences(8, seed=4), pad_id=0)
    with no_grad():
        loss = cross_entropy(model(batch.ids, batch.lengths), batch.targets).item()
    assert abs(loss - math.log(23)) < 0.1 * math.log(23)


def test_padding_content_does_not_change_loss(small_config):
    model = Autoencoder(small_config, seed=0)
    batch = collate(_sequences(6, seed=5), pad_id=0)
    garbage = batch.ids.copy()
    garbage[~(np.arange(garbage.shape[1])[None, :] < batch.lengths[:, None])] = 17
    with no_grad():
        clean = cross_entropy(model(batch.ids, batch.lengths), batch.targets).item()
        noisy = cross_entropy(model(garbage, batch.lengths), batch.targets).item()
    assert clean == pytest.approx(noisy, abs=1e-6)


def test_accumulation_matches_single_large_batch():
    with precision("float64"):
        config = ModelConfig(d=16, ell=1, n_heads=2, vocab_size=23, max_seq_len=16, dropout_p=0.0)
        sequences = _sequences(8, seed=6)
        accumulated = Autoencoder(config, seed=11)
        single = Autoencoder(config, seed=11)

        window = [collate(sequences[i : i + 2], 0) for i in range(0, 8, 2)]
        loss_a = train_step(accumulated, window, OptimizerState(lr=1e-3, accum_steps=4))
        loss_b = train_step(single, [collate(sequences, 0)], OptimizerState(lr=1e-3, accum_steps=1))

    assert loss_a == pytest.approx(loss_b, rel=1e-10)
    for (name, a), (_, b) in zip(accumulated.named_parameters(), single.named_parameters()):
        np.testing.assert_allclose(a.data, b.data, atol=1e-9, err_msg=name)


def test_train_step_rejects_wrong_window(small_config):
    model = Autoencoder(small_config)
    with pytest.raises(ValueError):
        train_step(model, [collate(_sequences(2), 0)], OptimizerState(lr=1e-3, accum_steps=2))
    with pytest.raises(ValueError):
        train_step(model, [], OptimizerState(lr=1e-3, accum_steps=2))


def test_divergence_is_reported(small_config):
    model = Autoencoder(small_config)
    model.lm_head.bias.data[:] = np.nan
    with pytest.raises(DivergenceError, match="divergence") as info:
        train_step(model, [collate(_sequences(2), 0)], OptimizerState(lr=1e-3))
    assert info.value.exit_code == 3


# =============================================================================
# Driver
# =============================================================================


def test_update_count_and_step_counts(synthetic_records, synthetic_tokenizer, train_model_config, tmp_path):
    model = Autoencoder(train_model_config, seed=0)
    config = TrainConfig(micro_batch=2, accum_steps=2, lr=1e-3, checkpoint_every=1, prefetch=2)
    metrics = tmp_path / "metrics.csv"
    result = train(model, synthetic_records[:10], synthetic_tokenizer, config, tmp_path / "ckpt", metrics)

    # 5 micro-batches fill two windows; the fifth is skipped
    assert result.updates == 2
    assert result.micro_batches == 4
    assert result.sentences == 8
    assert all(param.step_count == 2 for param in model.parameters())
    assert [path.name for path in result.checkpoints] == ["step-000001.sbae", "step-000002.sbae"]
    assert result.final_checkpoint == tmp_path / "ckpt" / "final.sbae"

    with open(metrics, encoding="utf-8", newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["step", "loss", "sentences_per_sec", "elapsed_s"]
    assert [row[0] for row in rows[1:]] == ["1", "2"]
    assert float(rows[-1][1]) == result.final_loss


def test_max_steps_zero_saves_initial_weights(synthetic_records, synthetic_tokenizer, train_model_config, tmp_path):
    model = Autoencoder(train_model_config, seed=0)
    initial = {name: param.data.copy() for name, param in model.named_parameters()}
    result = train(model, synthetic_records[:20], synthetic_tokenizer, TrainConfig(max_steps=0), tmp_path)
    assert result.updates == 0
    assert result.final_loss is None
    restored, updates = load_checkpoint(result.final_checkpoint)
    assert updates == 0
    for name, param in restored.named_parameters():
        np.testing.assert_array_equal(param.data, initial[name])


def test_max_steps_caps_updates(synthetic_records, synthetic_tokenizer, train_model_config):
    model = Autoencoder(train_model_config, seed=0)
    config = TrainConfig(micro_batch=2, accum_steps=1, lr=1e-3, max_steps=3, epochs=4)
    assert train(model, synthetic_records[:20], synthetic_tokenizer, config).updates == 3


def test_training_is_deterministic(synthetic_records, synthetic_tokenizer, train_model_config):
    config = train_model_config.model_copy(update={"dropout_p": 0.1})
    recipe = TrainConfig(micro_batch=4, accum_steps=2, lr=1e-3, seed=9, epochs=2)
    runs = []
    for _ in range(2):
        model = Autoencoder(config, seed=9)
        result = train(model, synthetic_records[:40], synthetic_tokenizer, recipe)
        runs.append((result.final_loss, model))
    assert runs[0][0] == runs[1][0]
    for (_, a), (_, b) in zip(runs[0][1].named_parameters(), runs[1][1].named_parameters()):
        np.testing.assert_array_equal(a.data, b.data)


def test_loss_decreases_on_repeated_data(synthetic_records, synthetic_tokenizer, train_model_config):
    model = Autoencoder(train_model_config, seed=1)
    recipe = TrainConfig(micro_batch=8, accum_steps=1, lr=3e-3, epochs=30, prefetch=0)
    records = synthetic_records[:16]
    first = train(model, records, synthetic_tokenizer, recipe.model_copy(update={"epochs": 1})).final_loss
    last = train(model, records, synthetic_tokenizer, recipe).final_loss
    assert last < first


def test_train_rejects_empty_corpus(small_config, synthetic_tokenizer):
    with pytest.raises(CorpusError):
        train(Autoencoder(small_config), [], synthetic_tokenizer, TrainConfig())


def test_corpus_smaller_than_one_effective_batch_is_rejected(synthetic_records, synthetic_tokenizer, train_model_config):
    model = Autoencoder(train_model_config, seed=0)
    with pytest.raises(ConfigError, match="smaller than one effective batch") as info:
        train(model, synthetic_records[:100], synthetic_tokenizer, TrainConfig())
    assert info.value.exit_code == 1
    assert all(param.step_count == 0 for param in model.parameters())


def test_windows_carry_across_epochs(synthetic_records, synthetic_tokenizer, train_model_config):
    model = Autoencoder(train_model_config, seed=0)
    before = {name: param.data.copy() for name, param in model.named_parameters()}
    result = train(model, synthetic_records[:100], synthetic_tokenizer, TrainConfig(lr=1e-3, epochs=3))

    # 7 micro-batches per epoch (six of 16, one of 4): 21 make two windows of 8
    assert result.updates == 2
    assert result.micro_batches == 16
    assert result.sentences == 232
    assert all(param.step_count == result.micro_batches // 8 for param in model.parameters())
    assert any(not np.array_equal(param.data, before[name]) for name, param in model.named_parameters())


def test_full_batch_overfit_loss_is_nearly_monotone(synthetic_records, synthetic_tokenizer, train_model_config, tmp_path):
    model = Autoencoder(train_model_config, seed=3)
    recipe = TrainConfig(micro_batch=8, accum_steps=1, lr=2e-3, epochs=40, prefetch=0)
    metrics = tmp_path / "overfit.csv"
    train(model, synthetic_records[:8], synthetic_tokenizer, recipe, metrics_path=metrics)

    with open(metrics, encoding="utf-8", newline="") as handle:
        losses = [float(row["loss"]) for row in csv.DictReader(handle)]
    assert len(losses) == 40
    assert losses[-1] < 0.9 * losses[0]
    for previous, current in zip(losses, losses[1:]):
        assert current <= 1.05 * previous
