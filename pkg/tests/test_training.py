import numpy as np
import pytest

from hessmatch.aa_system import Frames
from hessmatch.cg_model import PairMLP, FeatureConfig, QuadraticBaseline
from hessmatch.errors import DimensionMismatch, EmptyBatch, NonFiniteLoss, StoreMismatch
from hessmatch.numerics import Rng
from hessmatch.probes import generate_probes
from hessmatch.targets import HvpTargetRecord
from hessmatch.training import (
    LossWeights,
    TrainConfig,
    adamw_step,
    batch_objective,
    loss_fm,
    loss_hvp,
    split_indices,
    total_loss,
    train,
    write_history,
)


def test_loss_fm_examples():
    assert loss_fm([[0.3, 0.1]], [[0.3, 0.1]]) == 0.0
    assert loss_fm([[1.0, 1.0]], [[0.0, 0.0]]) == 1.0
    assert loss_fm([[2.0, 2.0]], [[0.0, 0.0]]) == 4.0
    with pytest.raises(EmptyBatch):
        loss_fm(np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(DimensionMismatch):
        loss_fm([[1.0, 2.0]], [[1.0]])


def test_loss_hvp_examples():
    assert loss_hvp([[[3.0, 4.0]]], [[[0.0, 0.0]]]) == 12.5
    rng = np.random.default_rng(0)
    p, t = rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 4, 2))
    doubled = loss_hvp(np.concatenate([p, p], axis=1), np.concatenate([t, t], axis=1))
    assert doubled == pytest.approx(loss_hvp(p, t), rel=1e-15)
    with pytest.raises(DimensionMismatch):
        loss_hvp(p, t[:, :3])
    with pytest.raises(EmptyBatch):
        loss_hvp(np.zeros((2, 0, 2)), np.zeros((2, 0, 2)))


def test_total_loss_examples():
    assert total_loss(2.0, 10.0, LossWeights(1.0, 0.01)) == pytest.approx(2.1, rel=1e-15)
    assert total_loss(0.0, 0.0, LossWeights()) == 0.0
    assert total_loss(3.0, 99.0, LossWeights(1.0, 0.0)) == 3.0
    with pytest.raises(ValueError):
        LossWeights(-1.0, 0.0)


def test_total_loss_derivative_in_hvp_weight():
    fm, hvp = 1.7, 4.3
    a = total_loss(fm, hvp, LossWeights(1.0, 0.25))
    b = total_loss(fm, hvp, LossWeights(1.0, 0.75))
    assert (b - a) / 0.5 == pytest.approx(hvp, rel=1e-14)


def test_adamw_examples():
    cfg = TrainConfig(lr=0.1, weight_decay=0.0)
    zero = (np.zeros(1), np.zeros(1))
    p, _ = adamw_step(np.array([2.0]), np.array([1.0]), zero, cfg, 1)
    assert p[0] - 2.0 == pytest.approx(-0.1, rel=1e-6)
    p, _ = adamw_step(np.array([2.0]), np.array([0.0]), zero, cfg, 1)
    assert p[0] == 2.0
    cfg = TrainConfig(lr=0.1, weight_decay=0.5)
    p, _ = adamw_step(np.array([2.0, -4.0]), np.zeros(2), (np.zeros(2), np.zeros(2)), cfg, 1)
    np.testing.assert_allclose(p, np.array([2.0, -4.0]) * (1 - 0.05), rtol=1e-15)


def test_adamw_by_hand_second_step():
    cfg = TrainConfig(lr=0.01, weight_decay=0.0)
    p, mom = adamw_step(np.array([0.0]), np.array([1.0]), (np.zeros(1), np.zeros(1)), cfg, 1)
    p, mom = adamw_step(p, np.array([-2.0]), mom, cfg, 2)
    m = 0.9 * 0.1 + 0.1 * -2.0
    v = 0.999 * 0.001 + 0.001 * 4.0
    step2 = (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    assert p[0] == pytest.approx(-0.01 * (1.0 / (1.0 + 1e-8)) - 0.01 * step2, rel=1e-12)


def test_split_is_last_tenth():
    tr, va = split_indices(100, 0.1)
    np.testing.assert_array_equal(va, np.arange(90, 100))
    np.testing.assert_array_equal(tr, np.arange(90))
    tr, va = split_indices(5, 0.1)
    assert len(va) == 1
    tr, va = split_indices(1, 0.1)
    assert len(va) == 0


def scalar_data(T, seed=0, K=2):
    """CG frames of the Gaussian pair with exact targets ``F = -1.5 R``, ``Hv = 1.5 v``."""
    R = Rng(seed).normal((T, 1)) * np.sqrt(1 / 1.5)
    frames = Frames(R, 1, 1, forces=-1.5 * R, space="CG")
    recs = []
    for t in range(T):
        p = generate_probes(seed, t, K, 1)
        recs.append(HvpTargetRecord(t, p.seed, K, 1e-5, p.vectors, 1.5 * p.vectors))
    return frames, recs


def test_realizable_quadratic_training_converges():
    frames, recs = scalar_data(500)
    cfg = TrainConfig(lr=1e-2, batch_size=50, epochs=1000, weight_decay=0.0, max_steps=2000,
                      weights=LossWeights(1.0, 0.01))
    model, hist = train(frames, recs, QuadraticBaseline([[1.0]]), cfg)
    assert abs(model.A[0, 0] - 1.5) <= 1e-3
    assert hist[-1]["loss_hvp"] < 1e-6


def test_quadratic_at_exact_operator_has_zero_hvp_loss():
    frames, recs = scalar_data(20)
    probes = np.stack([r.probes for r in recs])
    term1 = np.stack([r.term1 for r in recs])
    cfg = TrainConfig()
    fm, hvp, *_ = batch_objective(QuadraticBaseline([[1.5]]), frames.positions, frames.forces,
                                  probes, term1, cfg)
    assert hvp <= 1e-8 and fm <= 1e-8


def mlp_batch(np_rng):
    model = PairMLP(3, 2, hidden=(5,), features=FeatureConfig(6, 0.3, 1.2), seed=1)
    R = np.stack([np.array([0.0, 0.0, 0.7, 0.1, 0.2, 0.8]) + 0.05 * np_rng.normal(size=6)
                  for _ in range(4)])
    F = np_rng.normal(size=(4, 6))
    probes = np_rng.normal(size=(4, 3, 6))
    term1 = np_rng.normal(size=(4, 3, 6))
    return model, R, F, probes, term1


@pytest.mark.parametrize("cov", [False, True])
def test_targets_are_constants_to_the_optimizer(np_rng, cov):
    model, R, F, probes, term1 = mlp_batch(np_rng)
    cfg = TrainConfig(use_covariance=cov, beta=1.3, weights=LossWeights(1.0, 0.5))
    *_, grad, _ = batch_objective(model, R, F, probes, term1, cfg)
    # targets frozen at their value for the current parameters
    delta_j = F - model.forces(R)
    frozen = term1
    if cov:
        frozen = term1 - 1.3 * np.sum(delta_j[:, None] * probes, -1, keepdims=True) * delta_j[:, None]
    plain = TrainConfig(use_covariance=False, weights=cfg.weights)

    def loss(p):
        return batch_objective(model.with_params(p), R, F, probes, frozen, plain, want_grad=False)[2]

    h = 1e-6
    for i in range(0, model.n_params, 3):
        e = np.zeros(model.n_params)
        e[i] = h
        fd = (loss(model.params + e) - loss(model.params - e)) / (2 * h)
        assert grad[i] == pytest.approx(fd, rel=1e-5, abs=1e-9)
    # perturbing targets moves the loss
    moved = batch_objective(model, R, F, probes, term1 + 0.1, cfg, want_grad=False)[2]
    assert moved != batch_objective(model, R, F, probes, term1, cfg, want_grad=False)[2]


def test_training_is_deterministic(tmp_path):
    frames, recs = scalar_data(60, seed=3)
    cfg = TrainConfig(lr=1e-2, batch_size=16, epochs=3, global_seed=9)
    a, ha = train(frames, recs, QuadraticBaseline([[1.0]]), cfg)
    b, hb = train(frames, recs, QuadraticBaseline([[1.0]]), cfg)
    assert np.array_equal(a.params, b.params)
    assert ha == hb
    write_history(tmp_path / "a.csv", ha)
    write_history(tmp_path / "b.csv", hb)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "epoch,split,loss_fm,loss_hvp,loss_total"
    assert len(lines) == 1 + 2 * 3


def test_fm_only_training_ignores_hvp_targets():
    frames, recs = scalar_data(40)
    cfg = TrainConfig(lr=1e-2, batch_size=10, epochs=2, weights=LossWeights(1.0, 0.0))
    a, _ = train(frames, recs, QuadraticBaseline([[1.0]]), cfg)
    for r in recs:
        r.term1 = r.term1 * 7.0
    b, _ = train(frames, recs, QuadraticBaseline([[1.0]]), cfg)
    assert np.array_equal(a.params, b.params)


def test_store_mismatch():
    frames, recs = scalar_data(10)
    cfg = TrainConfig(epochs=1)
    with pytest.raises(StoreMismatch):
        train(frames, recs[:-1], QuadraticBaseline([[1.0]]), cfg)
    recs[3].frame_index = 99
    with pytest.raises(StoreMismatch):
        train(frames, recs, QuadraticBaseline([[1.0]]), cfg)


def test_non_finite_loss_aborts_with_diagnostics():
    frames, recs = scalar_data(10)
    frames.forces[2, 0] = np.nan
    with pytest.raises(NonFiniteLoss) as info:
        train(frames, recs, QuadraticBaseline([[1.0]]), TrainConfig(epochs=1, batch_size=4))
    assert "step" in info.value.diagnostics


def test_variants():
    assert TrainConfig.for_variant("FM").weights.w_hvp == 0.0
    assert not TrainConfig.for_variant("FM+AAp").use_covariance
    assert TrainConfig.for_variant("FM+AAp+Cov").use_covariance
    with pytest.raises(ValueError):
        TrainConfig.for_variant("HVP")
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
