"""Per-frame probe directions and the Frobenius-norm estimator they feed."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, ZeroVector
from .numerics import GOLDEN, MASK64, standard_normals

MAX_RETRIES = 3


@dataclass
class ProbeSet:
    frame_index: int
    seed: int
    vectors: np.ndarray  # (K, d), unit rows

    @property
    def K(self):
        return self.vectors.shape[0]


def stream_seed(global_seed, frame_index):
    """Per-frame stream seed ``global_seed XOR (frame_index * GOLDEN mod 2^64)``."""
    return (int(global_seed) ^ ((int(frame_index) * GOLDEN) & MASK64)) & MASK64


def generate_probes(global_seed, frame_index, K=8, d=1):
    """Draw ``K`` unit probe vectors of length ``d`` for one frame.

    ``K * d`` standard normals are drawn in order from the frame's stream and
    each consecutive ``d``-block is normalised. A zero block (vanishingly
    unlikely) triggers a redraw from the advanced stream, at most three times.
    """
    if K < 1 or d < 1:
        raise ValueError(f"K and d must be >= 1, got K={K}, d={d}")
    seed = stream_seed(global_seed, frame_index)
    state = seed
    for _ in range(MAX_RETRIES + 1):
        state, z = standard_normals(state, K * d)
        z = z.reshape(K, d)
        norms = np.linalg.norm(z, axis=1)
        if np.all(norms > 0):
            return ProbeSet(int(frame_index), seed, z / norms[:, None])
    raise ZeroVector(f"zero probe for frame {frame_index} after {MAX_RETRIES} retries")


def frobenius_estimate(H, probes):
    """``d * mean_k |H v_k|^2``, an unbiased estimate of ``|H|_F^2`` for unit probes
    drawn uniformly from the sphere."""
    H = np.asarray(H, dtype=np.float64)
    V = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DimensionMismatch(f"H must be square, got {H.shape}")
    d = H.shape[0]
    if V.shape[-1] != d:
        raise DimensionMismatch(f"probe length {V.shape[-1]} != {d}")
    hv = V @ H.T
    return d * float(np.mean(np.sum(hv * hv, axis=1)))
