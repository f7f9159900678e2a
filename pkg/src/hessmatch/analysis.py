"""Trajectory comparison metrics: TICA projections, 1-d W1 and KL, sliced 2-d
W1, and structural distributions (bonds, angles, dihedrals, gyration radius).
"""

import csv
import io
import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyInput, TrajectoryTooShort
from .numerics import Rng, sym_eig

log = logging.getLogger(__name__)

PSEUDOCOUNT = 1e-10


@dataclass
class Histogram1D:
    edges: np.ndarray
    masses: np.ndarray


def histogram(samples, edges):
    """Normalised masses on fixed edges, with a pseudocount in every bin."""
    counts, _ = np.histogram(samples, bins=edges)
    m = counts.astype(np.float64) + PSEUDOCOUNT
    return Histogram1D(np.asarray(edges), m / m.sum())


@dataclass
class TicaModel:
    lag: int
    mean: np.ndarray
    eigenvalues: np.ndarray
    components: np.ndarray  # (features, n_components)


def _stack(trajectories):
    if isinstance(trajectories, np.ndarray) and trajectories.ndim == 2:
        trajectories = [trajectories]
    return [np.atleast_2d(np.asarray(t, dtype=np.float64)) for t in trajectories]


def tica_fit(trajectories, lag, regularization=1e-6):
    """Time-lagged independent component analysis.

    The mean and instantaneous covariance ``C0`` use every frame (divisor
    frame count); the lagged covariance ``C_tau`` is symmetrised over all
    ``(t, t + lag)`` pairs. ``C0`` is whitened with eigenvalues below
    ``regularization`` dropped, so the fitted components are
    ``C0``-orthonormal and projections of the fitting data have unit variance.
    """
    if lag < 1:
        raise ValueError("lag must be >= 1")
    trajs = _stack(trajectories)
    for t in trajs:
        if len(t) <= lag:
            raise TrajectoryTooShort(f"trajectory of length {len(t)} with lag {lag}")
    allx = np.concatenate(trajs)
    mean = allx.mean(axis=0)
    c0 = (allx - mean).T @ (allx - mean) / len(allx)
    ct = np.zeros_like(c0)
    pairs = 0
    for t in trajs:
        x0, x1 = t[:-lag] - mean, t[lag:] - mean
        ct += x0.T @ x1
        pairs += len(x0)
    ct /= pairs
    ct = 0.5 * (ct + ct.T)
    c0 = 0.5 * (c0 + c0.T)
    w0, v0 = sym_eig(c0)
    keep = w0 > regularization
    W = v0[:, keep] / np.sqrt(w0[keep])
    lam, U = sym_eig(W.T @ ct @ W)
    comps = W @ U
    for j in range(comps.shape[1]):
        nz = np.flatnonzero(np.abs(comps[:, j]) > 1e-12)
        if len(nz) and comps[nz[0], j] < 0:
            comps[:, j] = -comps[:, j]
    return TicaModel(lag, mean, lam, comps)


def project(model, trajectory):
    x = np.atleast_2d(np.asarray(trajectory, dtype=np.float64))
    if x.shape[1] != len(model.mean):
        raise DimensionMismatch(f"trajectory width {x.shape[1]} != {len(model.mean)}")
    return (x - model.mean) @ model.components


def _nonempty(*arrays):
    out = []
    for a in arrays:
        a = np.ravel(np.asarray(a, dtype=np.float64))
        if a.size == 0:
            raise EmptyInput("empty sample set")
        out.append(a)
    return out


def w1_1d(samples_a, samples_b):
    """Exact 1-d Wasserstein-1 distance between two empirical distributions."""
    a, b = _nonempty(samples_a, samples_b)
    a, b = np.sort(a), np.sort(b)
    if len(a) == len(b):
        return float(np.mean(np.abs(a - b)))
    # integrate |F_a - F_b| between consecutive pooled sample values
    grid = np.sort(np.concatenate([a, b]))
    Fa = np.searchsorted(a, grid[:-1], side="right") / len(a)
    Fb = np.searchsorted(b, grid[:-1], side="right") / len(b)
    return float(np.sum(np.abs(Fa - Fb) * np.diff(grid)))


def shared_edges(p, q, bins):
    lo = min(p.min(), q.min())
    hi = max(p.max(), q.max())
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, bins + 1)


def kl_1d(samples_p, samples_q, bins=50):
    """KL divergence of histogram masses on bins spanning the pooled range."""
    p, q = _nonempty(samples_p, samples_q)
    edges = shared_edges(p, q, bins)
    hp, hq = histogram(p, edges).masses, histogram(q, edges).masses
    return float(np.sum(hp * np.log(hp / hq)))


def sliced_w1_2d(points_a, points_b, directions=64, seed=0):
    """Mean 1-d W1 over evenly spaced directions in ``[0, pi)`` with a seeded offset."""
    a = np.atleast_2d(np.asarray(points_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(points_b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise EmptyInput("empty point set")
    if a.shape[1] != 2 or b.shape[1] != 2:
        raise DimensionMismatch("sliced W1 expects 2-d points")
    offset = Rng(seed).uniform(1)[0]
    theta = np.pi * (np.arange(directions) + offset) / directions
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return float(np.mean([w1_1d(a @ u, b @ u) for u in dirs]))


# ---------------------------------------------------------------------------
# structural metrics
# ---------------------------------------------------------------------------


def _angle(p0, p1, p2):
    u, v = p0 - p1, p2 - p1
    c = np.sum(u * v, axis=-1) / (np.linalg.norm(u, axis=-1) * np.linalg.norm(v, axis=-1))
    return np.arccos(np.clip(c, -1.0, 1.0))


def _dihedral(p0, p1, p2, p3):
    b0, b1, b2 = p1 - p0, p2 - p1, p3 - p2
    n1, n2 = np.cross(b0, b1), np.cross(b1, b2)
    m1 = np.cross(n1, b1 / np.linalg.norm(b1, axis=-1, keepdims=True))
    return np.arctan2(np.sum(m1 * n2, axis=-1), np.sum(n1 * n2, axis=-1))


def structural_metrics(trajectory, dim):
    """Bond, angle and dihedral distributions along the bead chain, plus
    radius of gyration.

    Returns a dict with arrays ``bond`` ``(T, N-1)``, ``angle`` ``(T, N-2)``,
    ``dihedral`` ``(T, N-3)``, ``gyration`` ``(T,)`` and a ``skipped`` list
    naming metrics the geometry cannot support.
    """
    x = np.atleast_2d(np.asarray(trajectory, dtype=np.float64))
    N = x.shape[1] // dim
    p = x.reshape(len(x), N, dim)
    out = {"skipped": []}
    if N >= 2:
        out["bond"] = np.linalg.norm(p[:, 1:] - p[:, :-1], axis=-1)
    else:
        out["skipped"].append("bond")
    if N >= 3 and dim >= 2:
        out["angle"] = _angle(p[:, :-2], p[:, 1:-1], p[:, 2:])
    else:
        out["skipped"].append("angle")
    if N >= 4 and dim == 3:
        out["dihedral"] = _dihedral(p[:, :-3], p[:, 1:-2], p[:, 2:-1], p[:, 3:])
    else:
        out["skipped"].append("dihedral")
    centered = p - p.mean(axis=1, keepdims=True)
    out["gyration"] = np.sqrt(np.mean(np.sum(centered * centered, axis=-1), axis=1))
    for name in out["skipped"]:
        log.info("skipping %s distribution: %d beads in %d-dim", name, N, dim)
    return out


def tica_features(trajectory, dim):
    """Pair distances for multi-bead systems, raw coordinates otherwise."""
    x = np.atleast_2d(np.asarray(trajectory, dtype=np.float64))
    N = x.shape[1] // dim
    if N < 2:
        return x
    p = x.reshape(len(x), N, dim)
    a, b = np.triu_indices(N, 1)
    return np.linalg.norm(p[:, a] - p[:, b], axis=-1)


TABLE_METRICS = [
    ("tica_2d_w1", "0-1"),
    ("tic_kl", "0"),
    ("tic_kl", "1"),
    ("tic_kl", "2"),
    ("tic_kl", "3"),
    ("dihedral_w1", "all"),
    ("angle_w1", "all"),
    ("bond_w1", "all"),
    ("gyration_w1", "all"),
]


def compare_trajectories(reference, model_trajs, dim, lag=10, bins=50, directions=64, seed=0):
    """The nine comparison metrics between reference and model trajectories.

    TICA is fitted on the reference set and both sets are projected.
    Metrics that the system cannot support are reported as NaN.

    Returns
    -------
    rows : list of (metric, component, value)
    densities : list of (metric, component, bin_center, reference_density, model_density)
    """
    ref = _stack(reference)
    mod = _stack(model_trajs)
    if ref[0].shape[1] != mod[0].shape[1]:
        raise DimensionMismatch(f"reference width {ref[0].shape[1]} != model {mod[0].shape[1]}")
    values = {}
    densities = []
    tica = tica_fit([tica_features(t, dim) for t in ref], lag)
    pr = np.concatenate([project(tica, tica_features(t, dim)) for t in ref])
    pm = np.concatenate([project(tica, tica_features(t, dim)) for t in mod])
    n_tic = pr.shape[1]
    if n_tic >= 2:
        values[("tica_2d_w1", "0-1")] = sliced_w1_2d(pr[:, :2], pm[:, :2], directions, seed)
    for k in range(4):
        if k < n_tic:
            values[("tic_kl", str(k))] = kl_1d(pr[:, k], pm[:, k], bins)
            edges = shared_edges(pr[:, k], pm[:, k], bins)
            centers = 0.5 * (edges[1:] + edges[:-1])
            width = np.diff(edges)
            hr = histogram(pr[:, k], edges).masses / width
            hm = histogram(pm[:, k], edges).masses / width
            densities.extend(("tic", str(k), c, a, b) for c, a, b in zip(centers, hr, hm))
    sr = [structural_metrics(t, dim) for t in ref]
    sm = [structural_metrics(t, dim) for t in mod]
    for name in ("dihedral", "angle", "bond", "gyration"):
        if name in sr[0]:
            a = np.concatenate([s[name].ravel() for s in sr])
            b = np.concatenate([s[name].ravel() for s in sm])
            values[(f"{name}_w1", "all")] = w1_1d(a, b)
    rows = [(m, c, values.get((m, c), float("nan"))) for m, c in TABLE_METRICS]
    return rows, densities


def format_report(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "component", "value"])
    for m, c, v in rows:
        w.writerow([m, c, f"{v:.17g}"])
    return buf.getvalue()


def format_densities(densities):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "component", "bin_center", "reference_density", "model_density"])
    for m, c, x, a, b in densities:
        w.writerow([m, c, f"{x:.17g}", f"{a:.17g}", f"{b:.17g}"])
    return buf.getvalue()
