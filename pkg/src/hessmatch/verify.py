"""Oracle suite behind ``hessmatch verify``.

Every check compares an estimator against an independent closed form,
quadrature or finite-difference value and reports the measured error.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import analysis
from .aa_system import Frames
from .cg_model import PairMLP, QuadraticBaseline, SumModel
from .dynamics import SimConfig, simulate
from .ensemble import (
    cg_hessian_estimate,
    cg_mean_force,
    quadrature_derivatives,
    sample_conditional,
)
from .numerics import Rng
from .probes import frobenius_estimate, generate_probes
from .systems import gaussian_chain, gaussian_pair, radial_tether
from .targets import HvpTargetRecord, precompute_term1
from .training import TrainConfig, batch_objective, train


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _rel(a, b):
    return abs(a - b) / abs(b)


def check_linear_identity(count=100_000, fault=None):
    ff, cg = gaussian_pair()
    ens = sample_conditional(ff, cg, [0.7], 1.0, count, rng=Rng(11))
    sign = 1.0 if fault == "term2-sign" else -1.0
    est = cg_hessian_estimate(ens, ff, cg, term2_sign=sign)
    h = est.hessian[0, 0]
    t1 = est.terms["projected_hessian"][0, 0]
    cov = abs(est.terms["force_covariance"][0, 0])
    _, h_quad = quadrature_derivatives(ff, cg, [0.7], 1.0)
    ok = (_rel(h, 1.5) < 0.05 and _rel(t1, 2.0) < 0.05 and _rel(cov, 0.5) < 0.05
          and _rel(h, h_quad[0, 0]) < 0.05 and abs(h_quad[0, 0] - 1.5) < 1e-3)
    return ok, (f"H={h:.4f} (1.5) term1={t1:.4f} (2) beta*cov={cov:.4f} (0.5) "
                f"quadrature={h_quad[0, 0]:.6f}")


def check_restraint_vs_exact(count=100_000):
    ff, cg = gaussian_pair()
    exact = sample_conditional(ff, cg, [0.7], 1.0, count, rng=Rng(12))
    restr = sample_conditional(ff, cg, [0.7], 1.0, count, rng=Rng(13), method="restraint")
    fe, fr = cg_mean_force(exact, ff, cg)[0], cg_mean_force(restr, ff, cg)[0]
    he = cg_hessian_estimate(exact, ff, cg).hessian[0, 0]
    hr = cg_hessian_estimate(restr, ff, cg).hessian[0, 0]
    ok = _rel(fr, fe) < 0.03 and _rel(hr, he) < 0.03
    return ok, f"mean force {fr:.4f} vs {fe:.4f}, H {hr:.4f} vs {he:.4f}"


def check_nonlinear_identity(count=100_000):
    ff, cg = radial_tether()
    ens = sample_conditional(ff, cg, [1.0], 1.0, count, rng=Rng(21))
    f = cg_mean_force(ens, ff, cg)[0]
    est = cg_hessian_estimate(ens, ff, cg)
    f_quad, h_quad = quadrature_derivatives(ff, cg, [1.0], 1.0)
    h = est.hessian[0, 0]
    # the general path on a linear map must add exact zeros
    lff, lcg = gaussian_pair()
    lens = sample_conditional(lff, lcg, [0.7], 1.0, 1000, rng=Rng(22))
    gen = cg_hessian_estimate(lens, lff, lcg, method="general")
    lin = cg_hessian_estimate(lens, lff, lcg, method="linear")
    extras = max(np.abs(gen.terms[k]).max()
                 for k in ("t_matrix", "force_divergence_covariance", "divergence_terms"))
    ok = (_rel(f, f_quad[0]) < 0.05 and _rel(h, h_quad[0, 0]) < 0.05 and extras == 0.0
          and np.array_equal(gen.hessian, lin.hessian) and est.asymmetry_z < 5)
    return ok, (f"mean force {f:.4f} (quad {f_quad[0]:.4f}) H {h:.4f} (quad {h_quad[0, 0]:.4f}) "
                f"linear-map extras {extras:g} asym z {est.asymmetry_z:.2f}")


def check_frobenius(count=100_000):
    rng = Rng(31)
    H = rng.normal((5, 5))
    V = rng.normal((count, 5))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    est = frobenius_estimate(H, V)
    exact = float(np.sum(H * H))
    ident = frobenius_estimate(np.eye(5), generate_probes(3, 0, 8, 5).vectors)
    ok = _rel(est, exact) < 0.01 and abs(ident - 5.0) < 1e-12
    return ok, f"estimate {est:.4f} vs |H|_F^2 {exact:.4f}; identity {ident:.15g}"


def _tower_geometry(rng, n, dim):
    """Bead positions whose pair distances all lie inside the feature range."""
    while True:
        x = rng.uniform((n, dim)) * 1.2
        d = np.linalg.norm(x[:, None] - x[None], axis=-1)[np.triu_indices(n, 1)]
        if d.min() > 0.45 and d.max() < 1.1:
            return x.ravel()


def check_derivative_tower(draws=50):
    rng = Rng(41)
    worst = dict(force=0.0, hvp=0.0, sym=0.0, param=0.0)
    for draw in range(draws):
        m = PairMLP(3, 3, (8, 8), seed=draw)
        m.params = m.params + 0.2 * rng.normal(m.params.size)
        R = _tower_geometry(rng, 3, 3)
        F = m.forces(R)
        h = 1e-5
        eye = np.eye(m.d)
        fd = np.array([-(m.energy(R + h * e) - m.energy(R - h * e)) / (2 * h) for e in eye])
        worst["force"] = max(worst["force"], np.linalg.norm(fd - F) / np.linalg.norm(F))
        v1, v2 = rng.normal(m.d), rng.normal(m.d)
        hv1, hv2 = m.hvp(R, v1), m.hvp(R, v2)
        eps = 1e-5
        fd_hv = -(m.forces(R + eps * v1) - m.forces(R - eps * v1)) / (2 * eps)
        worst["hvp"] = max(worst["hvp"], np.linalg.norm(fd_hv - hv1) / np.linalg.norm(hv1))
        worst["sym"] = max(worst["sym"], abs(v1 @ hv2 - v2 @ hv1))
        Rb = R[None]
        V = np.stack([v1, v2])[None]
        fb, hb = rng.normal((1, m.d)), rng.normal((1, 2, m.d))

        def loss(p):
            _, f, hv, _ = m.with_params(p).vjp(Rb, V)
            return np.sum(fb * f) + np.sum(hb * hv)

        _, _, _, pull = m.vjp(Rb, V)
        g = pull(None, fb, hb)
        coords = rng.permutation(m.params.size)[:10]
        hp = 1e-6
        for c in coords:
            e = np.zeros(m.params.size)
            e[c] = hp
            fdp = (loss(m.params + e) - loss(m.params - e)) / (2 * hp)
            worst["param"] = max(worst["param"], abs(fdp - g[c]) / max(np.abs(g).max(), 1e-300))
    ok = (worst["force"] <= 1e-6 and worst["hvp"] <= 1e-5 and worst["param"] <= 1e-5
          and worst["sym"] <= 1e-10)
    return ok, " ".join(f"{k}={v:.2e}" for k, v in worst.items())


def check_term1_exactness():
    ff, cg = gaussian_chain()
    rng = Rng(51)
    frames = Frames(rng.normal((200, ff.size)), ff.n, ff.dim)
    recs = precompute_term1(frames, ff, cg, 5, K=8, epsilon=1e-5)
    xi = cg.force_projection()
    op = xi @ ff.terms[0].K @ xi.T
    worst = max(np.abs(r.term1 - r.probes @ op.T).max() / np.abs(r.probes @ op.T).max()
                for r in recs)
    return worst <= 1e-8, f"max relative error {worst:.2e}"


def curvature_pair():
    """Two CG models with identical forces at ``R*`` and different curvature.

    Returns ``(w1, w2, data, records)`` where the data sit exactly at
    ``R*`` on the 4-atom chain with sites 0 and 3.
    """
    ff, cg = gaussian_chain()
    R_star = np.array([0.0, 0.8])
    ens = sample_conditional(ff, cg, R_star, 1.0, 400, rng=Rng(61))
    aa = Frames(ens.positions, ff.n, ff.dim, forces=ff.forces(ens.positions))
    recs = precompute_term1(aa, ff, cg, 9, K=8, epsilon=1e-5)
    data = Frames(cg.value(aa.positions), 2, 1, forces=(cg.force_projection() @ aa.forces.T).T,
                  space="CG")
    w1 = PairMLP(2, 1, (8, 8), seed=3)
    B = np.array([[1.0, 0.3], [0.3, 0.5]])
    w2 = SumModel([w1.copy(), QuadraticBaseline(B, R_star)])
    return w1, w2, data, recs


def check_curvature_discrimination():
    w1, w2, data, recs = curvature_pair()
    probes = np.stack([r.probes for r in recs])
    term1 = np.stack([r.term1 for r in recs])
    cfg = TrainConfig()
    fm1, hvp1, *_ = batch_objective(w1, data.positions, data.forces, probes, term1, cfg, False)
    fm2, hvp2, *_ = batch_objective(w2, data.positions, data.forces, probes, term1, cfg, False)
    fm_gap, hvp_gap = abs(fm1 - fm2), abs(hvp1 - hvp2)
    ok = fm_gap <= 1e-8 and hvp_gap >= 10 * max(fm_gap, 1e-8)
    return ok, f"FM gap {fm_gap:.2e}, HVP gap {hvp_gap:.3e} (FM {fm1:.4g}, HVP {hvp1:.4g} vs {hvp2:.4g})"


def realizable_data(T=500, K=8):
    """CG frames and exact targets for the Gaussian pair: ``F = -1.5 R``, ``Hv = 1.5 v``."""
    R = Rng(71).normal((T, 1)) * np.sqrt(1 / 1.5)
    data = Frames(R, 1, 1, forces=-1.5 * R, space="CG")
    recs = []
    for t in range(T):
        p = generate_probes(72, t, K, 1)
        recs.append(HvpTargetRecord(t, p.seed, K, 1e-5, p.vectors, 1.5 * p.vectors))
    return data, recs


def check_realizable_training():
    data, recs = realizable_data()
    model = QuadraticBaseline(np.eye(1))
    cfg = TrainConfig(lr=1e-2, batch_size=50, epochs=1000, weight_decay=0.0, max_steps=2000,
                      global_seed=73)
    model, _ = train(data, recs, model, cfg)
    a = model.A[0, 0]
    return abs(a - 1.5) < 1e-3, f"A = {a:.8f} after at most 2000 steps"


def check_dynamics(steps=1_000_000):
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    traj = simulate(QuadraticBaseline(A), SimConfig(dt=0.01, steps=steps, thinning=10, seed=81))[0]
    C = np.cov(traj.T)
    target = np.linalg.inv(A)
    scale = np.sqrt(np.outer(np.diag(target), np.diag(target)))
    err = float(np.max(np.abs(C - target) / scale))
    return err < 0.05, f"max normalised covariance error {err:.4f} over {steps} steps"


def check_metric_kernels():
    rng = Rng(91)
    a = rng.uniform(10_000)
    b = rng.uniform(10_000) + 0.5
    w = analysis.w1_1d(a, b)
    p = rng.normal(100_000)
    q = rng.normal(100_000) + 1.0
    kl = analysis.kl_1d(p, q, 50)
    T = 100_000
    x = np.zeros((T, 2))
    z = rng.normal((T, 2))
    phi = np.array([0.99, 0.5])
    for t in range(1, T):
        x[t] = phi * x[t - 1] + z[t]
    model = analysis.tica_fit(x, 1)
    c = model.components[:, 0]
    cos = abs(c[0]) / np.linalg.norm(c)
    ok = abs(w - 0.5) <= 0.01 and abs(kl - 0.5) <= 0.075 and cos > 0.95
    return ok, f"W1 shift {w:.4f} (0.5), KL {kl:.4f} (0.5), TIC0 |cos| {cos:.5f}"


def run_suite(fault=None, quick=False):
    n = 20_000 if quick else 100_000
    checks = [
        ("linear Hessian identity", lambda: check_linear_identity(n, fault)),
        ("restraint vs exact sampler", lambda: check_restraint_vs_exact(n)),
        ("nonlinear Hessian identity", lambda: check_nonlinear_identity(n)),
        ("Frobenius unbiasedness", lambda: check_frobenius(n)),
        ("derivative tower", lambda: check_derivative_tower(10 if quick else 50)),
        ("Term-1 exactness", check_term1_exactness),
        ("curvature discrimination", check_curvature_discrimination),
        ("realizable training", check_realizable_training),
        ("dynamics stationarity", check_dynamics),
        ("metric kernels", check_metric_kernels),
    ]
    results = []
    for name, fn in checks:
        start = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - start))
    return results
