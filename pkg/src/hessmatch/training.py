"""Force- and HVP-matching losses, AdamW, and the training loop.

Targets never carry gradients: Term 1 is read from the target store and the
Term-2 force residual is computed from the current model output and then
treated as a constant when the loss is differentiated.
"""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .aa_system import Frames
from .errors import DimensionMismatch, EmptyBatch, NonFiniteLoss, StoreMismatch
from .numerics import Rng

log = logging.getLogger(__name__)


@dataclass
class LossWeights:
    w_fm: float = 1.0
    w_hvp: float = 0.01

    def __post_init__(self):
        if self.w_fm < 0 or self.w_hvp < 0:
            raise ValueError("loss weights must be non-negative")


VARIANTS = {
    "FM": (LossWeights(1.0, 0.0), False),
    "FM+AAp": (LossWeights(1.0, 0.01), False),
    "FM+AAp+Cov": (LossWeights(1.0, 0.01), True),
}


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 200
    epochs: int = 10
    beta: float = 1.0
    use_covariance: bool = False
    global_seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    weights: LossWeights = field(default_factory=LossWeights)
    max_steps: int = None
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1 or self.beta <= 0:
            raise ValueError("lr, batch_size, epochs and beta must be positive")

    @classmethod
    def for_variant(cls, name, **kwargs):
        if name not in VARIANTS:
            raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
        weights, cov = VARIANTS[name]
        return cls(weights=LossWeights(weights.w_fm, weights.w_hvp), use_covariance=cov, **kwargs)


def loss_fm(predicted, target):
    """``(1/T) sum_t |F_pred - F_target|^2 / d`` with ``d = dim * N``."""
    p = np.atleast_2d(np.asarray(predicted, dtype=np.float64))
    t = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if p.shape != t.shape:
        raise DimensionMismatch(f"prediction {p.shape} vs target {t.shape}")
    if p.shape[0] == 0:
        raise EmptyBatch("no frames")
    r = p - t
    return float(np.mean(np.sum(r * r, axis=-1)) / p.shape[-1])


def loss_hvp(predicted, target):
    """``(1/T) sum_t (1/K) sum_k |Hv_pred - target|^2 / d`` on ``(T, K, d)`` arrays."""
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.ndim != 3 or p.shape != t.shape:
        raise DimensionMismatch(f"expected matching (T, K, d) arrays, got {p.shape} and {t.shape}")
    if p.shape[0] == 0 or p.shape[1] == 0:
        raise EmptyBatch("no frames or probes")
    r = p - t
    return float(np.mean(np.sum(r * r, axis=-1)) / p.shape[-1])


def total_loss(fm, hvp, w):
    return w.w_fm * fm + w.w_hvp * hvp


def adamw_step(params, grads, moments, config, step_index):
    """One AdamW update with decoupled weight decay.

    ``moments`` is ``(m, v)``; ``step_index`` counts from 1. Returns the new
    parameters and moments without modifying the inputs.
    """
    m, v = moments
    b1, b2 = config.beta1, config.beta2
    p = params * (1.0 - config.lr * config.weight_decay)
    m = b1 * m + (1.0 - b1) * grads
    v = b2 * v + (1.0 - b2) * grads * grads
    m_hat = m / (1.0 - b1**step_index)
    v_hat = v / (1.0 - b2**step_index)
    p = p - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return p, (m, v)


# ---------------------------------------------------------------------------
# data plumbing
# ---------------------------------------------------------------------------


def cg_training_set(frames, cg_map):
    """Project fine-grained frames to CG coordinates and projected forces."""
    if frames.forces is None:
        raise ValueError("frames carry no forces")
    xi_f = cg_map.force_projection(frames.positions)
    R = cg_map.value(frames.positions)
    F = np.einsum("...mD,...D->...m", xi_f, frames.forces)
    n_cg = R.shape[1] // frames.dim if R.shape[1] % frames.dim == 0 else R.shape[1]
    dim = frames.dim if R.shape[1] % frames.dim == 0 else 1
    return Frames(R, n_cg, dim, frame_index=frames.frame_index, forces=F, space="CG")


def _check_store(frames, records):
    if len(records) != len(frames):
        raise StoreMismatch(f"{len(records)} target records for {len(frames)} frames")
    idx = np.array([r.frame_index for r in records])
    if not np.array_equal(idx, frames.frame_index):
        raise StoreMismatch("target store frame indices differ from the frames")
    if records[0].probes.shape[1] != frames.positions.shape[1]:
        raise StoreMismatch(
            f"targets have d={records[0].probes.shape[1]}, frames have {frames.positions.shape[1]}"
        )


def batch_objective(model, R, F_target, probes, term1, config, want_grad=True):
    """Losses (and parameter gradient) on one batch.

    Returns ``(fm, hvp, total, grad, term2_norm)``; ``term2_norm`` is the mean
    Euclidean norm of the covariance correction (zero when it is off).
    """
    w = config.weights
    e, F, HV, pull = model.vjp(R, probes)
    B, K, d = probes.shape
    delta_j = F_target - F  # detached: a constant from here on
    targets = term1
    t2_norm = 0.0
    if config.use_covariance:
        corr = config.beta * np.sum(delta_j[:, None, :] * probes, axis=-1, keepdims=True) * delta_j[:, None, :]
        targets = term1 - corr
        t2_norm = float(np.mean(np.linalg.norm(corr, axis=-1)))
    fm = loss_fm(F, F_target)
    hvp = loss_hvp(HV, targets) if K else 0.0
    total = total_loss(fm, hvp, w)
    grad = None
    if want_grad:
        f_bar = w.w_fm * 2.0 * (F - F_target) / (B * d)
        h_bar = w.w_hvp * 2.0 * (HV - targets) / (B * K * d) if K else None
        grad = pull(None, f_bar, h_bar)
    return fm, hvp, total, grad, t2_norm


def split_indices(T, fraction):
    """Training and validation indices; validation is the last ``fraction`` of frames."""
    n_val = int(math.floor(T * fraction)) if T >= 2 else 0
    if fraction > 0 and T >= 2:
        n_val = max(n_val, 1)
    return np.arange(T - n_val), np.arange(T - n_val, T)


def evaluate_split(model, frames, probes, term1, idx, config):
    if len(idx) == 0:
        return None
    fm, hvp, total, _, t2 = batch_objective(
        model, frames.positions[idx], frames.forces[idx], probes[idx], term1[idx], config,
        want_grad=False,
    )
    return fm, hvp, total, t2


def train(frames, records, model, config, on_epoch=None):
    """Fit ``model`` to forces and HVP targets.

    Parameters
    ----------
    frames : Frames
        CG frames whose ``forces`` are the projected fine-grained forces.
    records : list of HvpTargetRecord or None
        One per frame, in frame order. ``None`` trains on forces alone.
    model : model from :mod:`hessmatch.cg_model`
        Updated in place and returned.

    Returns
    -------
    model, history
        ``history`` holds one dict per (epoch, split) with the three losses
        and the mean Term-2 norm.
    """
    if records is None:
        # force matching only: no probes, HVP loss reported as zero
        probes = term1 = np.zeros((len(frames), 0, frames.positions.shape[1]))
    else:
        _check_store(frames, records)
        probes = np.stack([r.probes for r in records])
        term1 = np.stack([r.term1 for r in records])
    train_idx, val_idx = split_indices(len(frames), config.validation_fraction)
    if len(train_idx) == 0:
        raise EmptyBatch("no training frames")
    rng = Rng(config.global_seed)
    params = model.params.copy()
    moments = (np.zeros_like(params), np.zeros_like(params))
    history = []
    step = 0
    for epoch in range(config.epochs):
        order = train_idx[rng.permutation(len(train_idx))]
        for start in range(0, len(order), config.batch_size):
            if config.max_steps is not None and step >= config.max_steps:
                break
            batch = np.sort(order[start:start + config.batch_size])
            model.params = params
            fm, hvp, total, grad, _ = batch_objective(
                model, frames.positions[batch], frames.forces[batch], probes[batch],
                term1[batch], config,
            )
            if not (np.isfinite(total) and np.all(np.isfinite(grad))):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch}, step {step}",
                    diagnostics={
                        "epoch": epoch, "step": step, "loss_fm": fm, "loss_hvp": hvp,
                        "param_norm": float(np.linalg.norm(params)),
                        "frames": frames.frame_index[batch].tolist(),
                    },
                )
            step += 1
            params, moments = adamw_step(params, grad, moments, config, step)
        model.params = params
        for split, idx in (("train", train_idx), ("validation", val_idx)):
            res = evaluate_split(model, frames, probes, term1, idx, config)
            if res is None:
                continue
            row = dict(epoch=epoch, split=split, loss_fm=res[0], loss_hvp=res[1],
                       loss_total=res[2], term2_norm=res[3])
            if not np.isfinite(row["loss_total"]):
                raise NonFiniteLoss(f"non-finite {split} loss after epoch {epoch}", diagnostics=row)
            history.append(row)
        log.info("epoch %d step %d train %.6g term2 %.3g", epoch, step,
                 history[-1]["loss_total"], history[-1]["term2_norm"])
        if on_epoch is not None:
            on_epoch(epoch, model, history)
        if config.max_steps is not None and step >= config.max_steps:
            break
    return model, history


def write_history(path, history):
    from .targets import atomic_write
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "split", "loss_fm", "loss_hvp", "loss_total"])
    for row in history:
        w.writerow([row["epoch"], row["split"], f"{row['loss_fm']:.17g}",
                    f"{row['loss_hvp']:.17g}", f"{row['loss_total']:.17g}"])
    atomic_write(path, buf.getvalue())
