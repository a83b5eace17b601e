import copy

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from mmcl.checkpoint import state_digest
from mmcl.data import SyntheticConfig, generate_synthetic
from mmcl.errors import CheckpointMismatchError, ConfigError, UndefinedMetricError
from mmcl.evaluation import EarlyStopping, EvalConfig, auc, finetune, topk_accuracy, train_head
from mmcl.model import ModelConfig
from mmcl.train import TrainConfig, pretrain

TINY = ModelConfig(image_channels=(4, 8), embedding_dim=16, tabular_hidden=16, tabular_embedding=16, projection_dim=8)
QUICK = dict(lr_grid=(1e-2, 1e-3), seeds=(0, 1), max_epochs=5, patience=2)


@pytest.fixture(scope="module")
def ckpt(small_dataset):
    return pretrain(small_dataset, TrainConfig(epochs=2, warmup_epochs=1, batch_size=32, model=TINY)).checkpoint


def test_auc_examples():
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], [1, 1])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 200), st.booleans())
def test_auc_matches_pairwise_oracle(seed, n, coarse):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    labels[:2] = [0, 1]
    scores = rng.integers(0, 5, n) / 4 if coarse else rng.normal(size=n)
    # exact equality; both sides are rationals with denominator n_pos*n_neg
    assert auc(scores, labels) == pytest.approx(oracles.pairwise_auc(scores.tolist(), labels.tolist()), abs=1e-15)


def test_topk_examples():
    assert topk_accuracy(np.eye(5), np.arange(5)) == 1.0
    labels = np.array([0, 1, 2, 0, 0, 3])
    assert topk_accuracy(np.zeros((6, 4)), labels) == 3 / 6
    assert topk_accuracy(np.zeros((6, 4)), labels, k=2) == 4 / 6
    assert topk_accuracy(np.array([[0.1, 0.9, 0.5]]), np.array([2]), k=2) == 1.0


def test_topk_random_logits_near_chance():
    rng = np.random.default_rng(0)
    n, c = 10_000, 286
    acc = topk_accuracy(rng.normal(size=(n, c)), rng.integers(0, c, n))
    p = 1 / c
    assert abs(acc - p) <= 3 * np.sqrt(p * (1 - p) / n)


def test_early_stopping_definition():
    stopper = EarlyStopping(min_delta=0.0002, patience=10)
    assert not stopper.step(0.5)
    # gains below min_delta do not count
    stops = [stopper.step(0.5 + 0.0001 * (k % 2)) for k in range(1, 11)]
    assert stops == [False] * 9 + [True]
    assert stopper.best == 0.5 and stopper.best_epoch == 0

    stopper = EarlyStopping(min_delta=0.0002, patience=3)
    for v in (0.1, 0.2, 0.3):
        assert not stopper.step(v)
    assert not stopper.step(0.3003)  # counts as improvement (> min_delta)
    assert stopper.best_epoch == 3
    assert [stopper.step(0.0) for _ in range(3)] == [False, False, True]


def test_eval_config_validation():
    with pytest.raises(ConfigError):
        EvalConfig(lr_grid=())
    with pytest.raises(ConfigError):
        EvalConfig(patience=0)
    with pytest.raises(ConfigError):
        EvalConfig(mode="probe")


def test_frozen_finetune_keeps_encoder_bit_identical(ckpt, small_dataset):
    before = state_digest(ckpt.model)
    res = finetune(ckpt, small_dataset, EvalConfig(**QUICK))
    assert state_digest(ckpt.model) == before
    assert res.best_lr in QUICK["lr_grid"]
    assert len(res.test_metrics) == 2 and len(res.cells) == 4
    assert res.metric_name == "top1"
    assert res.std == pytest.approx(np.std(res.test_metrics, ddof=1))


def test_single_seed_has_zero_std(ckpt, small_dataset):
    res = finetune(ckpt, small_dataset, EvalConfig(lr_grid=(1e-2,), seeds=(3,), max_epochs=3, patience=1))
    assert res.std == 0.0


def test_trainable_mode_updates_encoder_copy(ckpt, small_dataset):
    res = finetune(ckpt, small_dataset, EvalConfig(mode="trainable", lr_grid=(1e-2,), seeds=(0,), max_epochs=2))
    assert 0 <= res.mean <= 1
    enc = copy.deepcopy(ckpt.model.image_encoder)
    before = {k: v.clone() for k, v in enc.state_dict().items()}
    ds = small_dataset
    x = torch.rand(16, 3, 32, 32)
    y = np.arange(16) % 4
    train_head(enc, x, y, x, y, x, y, 4, 1e-2, 0, EvalConfig(max_epochs=1))
    assert all(not torch.equal(before[k], v) for k, v in enc.state_dict().items())
    assert len(ds) == 200


def test_tabular_probe_and_laaf_column_hidden(small_dataset):
    res = pretrain(small_dataset, TrainConfig(epochs=2, warmup_epochs=1, batch_size=32, model=TINY, laaf=True))
    out = finetune(res.checkpoint, small_dataset, EvalConfig(modality="tabular", **QUICK))
    assert 0 <= out.mean <= 1


def test_binary_task_uses_auc():
    ds = generate_synthetic(SyntheticConfig(n_samples=200, n_classes=2, seed=4))
    ck = pretrain(ds, TrainConfig(epochs=1, warmup_epochs=0, batch_size=32, model=TINY)).checkpoint
    res = finetune(ck, ds, EvalConfig(**QUICK))
    assert res.metric_name == "auc"


def test_low_data_fraction_shrinks_train_set(ckpt):
    ds = generate_synthetic(SyntheticConfig(n_samples=400, n_classes=4, n_noise_features=3, seed=1))
    full = finetune(ckpt, ds, EvalConfig(**QUICK))
    tenth = finetune(ckpt, ds, EvalConfig(fraction=0.1, **QUICK))
    assert tenth.n_train < full.n_train


def test_incompatible_checkpoint_refused(ckpt):
    other = generate_synthetic(SyntheticConfig(n_samples=100, n_classes=4, n_noise_features=6, seed=1))
    with pytest.raises(CheckpointMismatchError):
        finetune(ckpt, other, EvalConfig(**QUICK))
