import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hessmatch.aa_system import ForceField, Frames, LennardJones, QuadraticForm, aa_hessian, sample_boltzmann
from hessmatch.cg_map import LinearCGMap, RadialFromPinned
from hessmatch.errors import DimensionMismatch, MissingResidual, StoreMismatch
from hessmatch.numerics import Rng
from hessmatch.probes import generate_probes
from hessmatch.systems import gaussian_chain, gaussian_pair
from hessmatch.targets import (
    ForceResidual,
    HvpTargetRecord,
    assemble_target,
    precompute_term1,
    read_target_store,
    term2_correction,
    write_target_store,
)


def test_term1_gaussian_pair_is_two():
    ff, cg = gaussian_pair()
    frames = Frames(np.array([[0.3, -0.1], [1.0, 2.0]]), 2, 1)
    for rec in precompute_term1(frames, ff, cg, global_seed=4, K=3):
        # one CG dimension: probes are signs and term1 = 2 v
        np.testing.assert_allclose(rec.term1, 2.0 * rec.probes, rtol=1e-9)


def test_term1_matches_projected_hessian_on_chain(np_rng):
    ff, cg = gaussian_chain()
    frames = Frames(np_rng.normal(size=(5, 4)), 4, 1)
    xi = cg.force_projection()
    for rec, pos in zip(precompute_term1(frames, ff, cg, global_seed=9, K=4), frames.positions):
        oracle = rec.probes @ xi @ aa_hessian(pos, ff) @ xi.T
        np.testing.assert_allclose(rec.term1, oracle, rtol=1e-8, atol=1e-12)


def test_term1_lj_dimer_against_analytic_hessian(np_rng):
    ff = ForceField(2, 3, [LennardJones(0, 1, 1.0, 1.0)])
    cg = LinearCGMap.select([1], 2, 3)
    pos = []
    for _ in range(10):
        u = np_rng.normal(size=3)
        pos.append(np.r_[np.zeros(3), u / np.linalg.norm(u) * np_rng.uniform(1.0, 1.8)])
    frames = Frames(np.array(pos), 2, 3)
    xi = cg.force_projection()
    for rec, r in zip(precompute_term1(frames, ff, cg, 5, K=8, epsilon=1e-5), frames.positions):
        oracle = rec.probes @ xi @ aa_hessian(r, ff) @ xi.T
        err = np.linalg.norm(rec.term1 - oracle, axis=1) / np.linalg.norm(oracle, axis=1)
        assert err.max() <= 1e-5


def test_term1_unit_scale_and_nonlinear_rejection():
    ff, cg = gaussian_pair()
    frames = Frames(np.array([[0.3, -0.1]]), 2, 1)
    a = precompute_term1(frames, ff, cg, 1, K=2)[0]
    b = precompute_term1(frames, ff, cg, 1, K=2, unit_scale=4.184)[0]
    np.testing.assert_allclose(b.term1, 4.184 * a.term1, rtol=1e-15)
    with pytest.raises(NotImplementedError):
        precompute_term1(Frames(np.array([[1.0, 0.5]]), 1, 2), ff, RadialFromPinned(0, 1, 2), 1)


def test_stored_probes_are_the_generated_probes():
    ff, cg = gaussian_chain()
    frames = Frames(np.zeros((3, 4)), 4, 1, frame_index=[7, 11, 40])
    for rec in precompute_term1(frames, ff, cg, global_seed=123, K=5):
        expected = generate_probes(123, rec.frame_index, 5, 2)
        assert np.array_equal(rec.probes, expected.vectors)
        assert rec.seed == expected.seed


def test_term2_examples():
    v = np.array([0.6, 0.8])
    np.testing.assert_array_equal(term2_correction(ForceResidual(np.zeros(2)), v, 1.0), 0.0)
    np.testing.assert_allclose(term2_correction(ForceResidual(v), v, 1.0), v, rtol=1e-15)
    np.testing.assert_array_equal(term2_correction(ForceResidual([1.0, 2.0]), [1.0, 0.0], 2.0),
                                  [2.0, 4.0])
    with pytest.raises(DimensionMismatch):
        term2_correction(ForceResidual([1.0, 2.0]), [1.0, 0.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        ForceResidual([np.nan, 0.0])


def _record(np_rng, K=3, d=2):
    V = np_rng.normal(size=(K, d))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    return HvpTargetRecord(0, 0, K, 1e-5, V, np_rng.normal(size=(K, d)))


def test_assemble_flag_behaviour(np_rng):
    rec = _record(np_rng)
    off = assemble_target(rec, 1, None, 1.0, False)
    np.testing.assert_array_equal(off, rec.term1[1])
    np.testing.assert_array_equal(assemble_target(rec, 1, ForceResidual(np.zeros(2)), 1.0, True),
                                  off)
    dj = ForceResidual([0.5, -1.0])
    np.testing.assert_allclose(assemble_target(rec, 2, dj, 2.0, True),
                               rec.term1[2] - term2_correction(dj, rec.probes[2], 2.0))
    with pytest.raises(MissingResidual):
        assemble_target(rec, 0, None, 1.0, True)
    with pytest.raises(IndexError):
        assemble_target(rec, 3, None, 1.0, False)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_term2_linear_in_probe(a, b):
    dj = ForceResidual([0.3, -1.1, 0.4])
    v1, v2 = np.array([1.0, 0.2, -0.5]), np.array([-0.4, 0.9, 0.1])
    lhs = term2_correction(dj, a * v1 + b * v2, 1.7)
    rhs = a * term2_correction(dj, v1, 1.7) + b * term2_correction(dj, v2, 1.7)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_record_invariants():
    with pytest.raises(DimensionMismatch):
        HvpTargetRecord(0, 0, 2, 1e-5, np.zeros((2, 3)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        HvpTargetRecord(0, 0, 1, 0.0, np.ones((1, 2)), np.ones((1, 2)))


def test_ensemble_average_of_assembled_targets():
    """With the exact mean force as the model, targets average to H_CG v."""
    ff, cg = gaussian_pair()
    frames = sample_boltzmann(ff, 1.0, 40_000, dt=0.05, rng=Rng(17), thinning=10, chains=8)
    recs = precompute_term1(frames, ff, cg, global_seed=2, K=1)
    xi = cg.force_projection()
    R = frames.positions @ xi.T
    residual = frames.forces @ xi.T - (-1.5 * R)
    ratio = [assemble_target(rec, 0, ForceResidual(dj), 1.0, True) / rec.probes[0]
             for rec, dj in zip(recs, residual)]
    assert np.mean(ratio) == pytest.approx(1.5, rel=0.05)


def test_store_round_trip_is_bitwise(tmp_path, np_rng):
    ff, cg = gaussian_chain()
    frames = Frames(np_rng.normal(size=(6, 4)), 4, 1, frame_index=np.arange(6) * 3)
    recs = precompute_term1(frames, ff, cg, global_seed=77, K=4, epsilon=2e-5)
    path = tmp_path / "targets.txt"
    write_target_store(path, recs, 77)
    back, head = read_target_store(path)
    assert head == {"d": 2, "K": 4, "eps": 2e-5, "seed": 77, "scale": 1.0}
    assert len(back) == len(recs)
    for a, b in zip(recs, back):
        assert a.frame_index == b.frame_index and a.seed == b.seed
        assert np.array_equal(a.probes, b.probes)
        assert np.array_equal(a.term1, b.term1)
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".tmp-")]


def test_store_rejects_damaged_files(tmp_path, np_rng):
    path = tmp_path / "t.txt"
    write_target_store(path, [_record(np_rng)], 0)
    lines = path.read_text().splitlines()
    (tmp_path / "short.txt").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(StoreMismatch):
        read_target_store(tmp_path / "short.txt")
    (tmp_path / "magic.txt").write_text("NOTTARGETS v1\n")
    with pytest.raises(StoreMismatch):
        read_target_store(tmp_path / "magic.txt")
    with pytest.raises(StoreMismatch):
        write_target_store(path, [_record(np_rng, K=3), _record(np_rng, K=2)], 0)
