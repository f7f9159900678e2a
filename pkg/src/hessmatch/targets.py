"""Hessian-vector-product training targets.

Term 1 of each target, the projected fine-grained HVP ``Xi_F H_AA Xi_F^T v``,
depends only on the frame and the probe, so it is computed once by central
differences of the fine-grained forces and stored. Term 2,
``beta (dJ . v) dJ`` with the current force residual ``dJ``, depends on the
model and is assembled during training.
"""

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .aa_system import Frames, aa_hvp_fd
from .errors import DimensionMismatch, MissingResidual, StoreMismatch
from .probes import generate_probes, stream_seed


@dataclass
class HvpTargetRecord:
    frame_index: int
    seed: int
    K: int
    epsilon: float
    probes: np.ndarray  # (K, d)
    term1: np.ndarray  # (K, d)
    unit_scale: float = 1.0

    def __post_init__(self):
        self.probes = np.atleast_2d(np.asarray(self.probes, dtype=np.float64))
        self.term1 = np.atleast_2d(np.asarray(self.term1, dtype=np.float64))
        if self.probes.shape != self.term1.shape or self.probes.shape[0] != self.K:
            raise DimensionMismatch(
                f"probes {self.probes.shape} and term1 {self.term1.shape} disagree with K={self.K}"
            )
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass
class ForceResidual:
    """``Xi_F F_AA - F_model`` for one frame; treated as a constant."""

    delta_j: np.ndarray

    def __post_init__(self):
        self.delta_j = np.asarray(self.delta_j, dtype=np.float64).copy()
        if not np.all(np.isfinite(self.delta_j)):
            raise ValueError("force residual must be finite")


def precompute_term1(frames, ff, cg_map, global_seed, K=8, epsilon=1e-5, unit_scale=1.0,
                     chunk=4096):
    """Projected fine-grained HVPs for every frame and probe.

    Each CG probe ``v`` is lifted to ``Xi_F^T v``, pushed through a central
    difference of the fine-grained forces with step ``epsilon``, and
    projected back with ``Xi_F``. Linear maps only.
    """
    if not cg_map.is_linear:
        raise NotImplementedError("Term-1 precompute supports linear maps only")
    if not isinstance(frames, Frames):
        frames = Frames(np.stack([f.positions for f in frames]), ff.n, ff.dim,
                        frame_index=[f.frame_index for f in frames])
    xi_f = cg_map.force_projection()
    d = xi_f.shape[0]
    records = []
    for start in range(0, len(frames), chunk):
        pos = frames.positions[start:start + chunk]
        idx = frames.frame_index[start:start + chunk]
        sets = [generate_probes(global_seed, int(t), K, d) for t in idx]
        V = np.stack([p.vectors for p in sets])  # (B, K, d)
        lifted = V @ xi_f  # (B, K, D)
        r = np.repeat(pos[:, None, :], K, axis=1)
        hvp = aa_hvp_fd(r, ff, lifted, epsilon)
        term1 = hvp @ xi_f.T * unit_scale
        for p, t1 in zip(sets, term1):
            records.append(HvpTargetRecord(p.frame_index, p.seed, K, epsilon, p.vectors, t1,
                                           unit_scale))
    return records


def term2_correction(residual, probe, beta):
    """``beta (dJ . v) dJ``."""
    dj = residual.delta_j if isinstance(residual, ForceResidual) else np.asarray(residual)
    v = np.asarray(probe, dtype=np.float64)
    if dj.shape[-1] != v.shape[-1]:
        raise DimensionMismatch(f"residual length {dj.shape[-1]} != probe length {v.shape[-1]}")
    return beta * np.sum(dj * v, axis=-1, keepdims=True) * dj


def assemble_target(record, k, residual, beta, use_covariance):
    """HVP target for probe ``k`` of ``record``.

    Term 1 alone when ``use_covariance`` is off, otherwise Term 1 minus the
    residual outer-product correction.
    """
    if not 0 <= k < record.K:
        raise IndexError(f"probe index {k} outside 0..{record.K - 1}")
    if not use_covariance:
        return record.term1[k].copy()
    if residual is None:
        raise MissingResidual("covariance correction requested without a force residual")
    return record.term1[k] - term2_correction(residual, record.probes[k], beta)


# ---------------------------------------------------------------------------
# target store
# ---------------------------------------------------------------------------


def _fmt(row):
    return " ".join(f"{x:.17g}" for x in row)


def atomic_write(path, text):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_target_store(path, records, global_seed):
    if not records:
        raise ValueError("no records to write")
    first = records[0]
    d = first.probes.shape[1]
    lines = [f"HVPTARGETS v1 d={d} K={first.K} eps={first.epsilon:.17g} "
             f"seed={int(global_seed)} scale={first.unit_scale:.17g}"]
    for rec in records:
        if rec.K != first.K or rec.probes.shape[1] != d:
            raise StoreMismatch(f"record for frame {rec.frame_index} has a different shape")
        lines.append(f"frame={rec.frame_index}")
        lines.extend(_fmt(row) for row in rec.probes)
        lines.extend(_fmt(row) for row in rec.term1)
    atomic_write(path, "\n".join(lines) + "\n")


def _header_fields(line, magic):
    parts = line.split()
    if len(parts) < 2 or parts[0] != magic or parts[1] != "v1":
        raise StoreMismatch(f"not a {magic} v1 file")
    return dict(p.split("=", 1) for p in parts[2:])


def read_target_store(path):
    """Read a target store; returns ``(records, header)``."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise StoreMismatch(f"{path} is empty")
    head = _header_fields(lines[0], "HVPTARGETS")
    d, K = int(head["d"]), int(head["K"])
    eps, seed, scale = float(head["eps"]), int(head["seed"]), float(head["scale"])
    body = lines[1:]
    block = 1 + 2 * K
    if len(body) % block:
        raise StoreMismatch(f"{path}: truncated record")
    records = []
    for start in range(0, len(body), block):
        tag = body[start]
        if not tag.startswith("frame="):
            raise StoreMismatch(f"{path}: expected a frame line, got {tag!r}")
        t = int(tag[len("frame="):])
        rows = np.array([[float(x) for x in ln.split()] for ln in body[start + 1:start + block]])
        if rows.shape != (2 * K, d):
            raise StoreMismatch(f"{path}: frame {t} has shape {rows.shape}")
        records.append(HvpTargetRecord(t, stream_seed(seed, t), K, eps, rows[:K], rows[K:], scale))
    return records, {"d": d, "K": K, "eps": eps, "seed": seed, "scale": scale}
