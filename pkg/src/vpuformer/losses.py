"""Training objectives: normalized focal loss, dice, and the
prompt-to-pixel contrastive term that aligns prompt embeddings with the
pixel embeddings of their intended class.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, matmul


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.5
    gamma: float = 2.0
    lam: float = 2.0
    eps: float = 1e-7

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ContractError("alpha must be in (0, 1)")
        if self.gamma < 0 or self.lam < 0:
            raise ContractError("gamma and lambda must be nonnegative")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def nfl_loss(prob, gt: np.ndarray, cfg: LossConfig) -> Tensor:
    """Focal cross-entropy whose focal weights are normalized to unit sum.

    Per pixel: w_j = (1 - p_t)^gamma, then w_j / sum(w); the alpha balance
    weights foreground vs background log-likelihood terms.
    """
    prob = _as_tensor(prob)
    gt = np.asarray(gt, dtype=prob.data.dtype)
    if prob.shape != gt.shape:
        raise ShapeError(f"prob {prob.shape} vs gt {gt.shape}")
    pt = prob * gt + (1.0 - prob) * (1.0 - gt)
    pt = pt.clip(cfg.eps, 1.0 - cfg.eps)
    w = (1.0 - pt) ** cfg.gamma
    w_norm = w / w.sum()
    alpha_map = cfg.alpha * gt + (1.0 - cfg.alpha) * (1.0 - gt)
    return (w_norm * alpha_map * (-pt.log())).sum()


def dice_loss(prob, gt: np.ndarray) -> Tensor:
    prob = _as_tensor(prob)
    gt = np.asarray(gt, dtype=prob.data.dtype)
    if prob.shape != gt.shape:
        raise ShapeError(f"prob {prob.shape} vs gt {gt.shape}")
    inter = (prob * gt).sum()
    return 1.0 - (2.0 * inter + 1.0) / (prob.sum() + float(gt.sum()) + 1.0)


def normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    norm = ((x * x).sum(axis=-1, keepdims=True) + eps).sqrt()
    return x / norm


def p2cl_similarity(z_q: Tensor, z_v: Tensor) -> Tensor:
    """rho = (cosine + 1) / 2 for every prompt-pixel pair, in [0, 1]."""
    for z in (z_q, z_v):
        norms = np.sqrt((z.numpy() ** 2).sum(axis=-1))
        if np.abs(norms - 1.0).max() > 1e-4:
            raise ContractError("embedding rows must be unit-normalized")
    return 0.5 * (matmul(z_q, z_v.T) + 1.0)


def p2cl_loss(rho: Tensor, intents: list[bool], gt_flat: np.ndarray,
              cfg: LossConfig) -> Tensor:
    """Mean log-loss over prompt-pixel pairs.

    A pair matches when the pixel's ground-truth class equals the prompt's
    intent (positive prompt with foreground pixel or negative with
    background); matching pairs are pulled toward rho=1, the rest to 0.
    """
    if len(intents) == 0:
        raise ContractError("at least one prompt required")
    gt_flat = np.asarray(gt_flat, dtype=rho.data.dtype).reshape(-1)
    if rho.shape != (len(intents), gt_flat.size):
        raise ShapeError(f"rho {rho.shape} vs {len(intents)}x{gt_flat.size}")
    intent = np.array(intents, dtype=rho.data.dtype).reshape(-1, 1)
    match = intent * gt_flat + (1.0 - intent) * (1.0 - gt_flat)  # N x L in {0,1}
    rho_c = rho.clip(cfg.eps, 1.0 - cfg.eps)
    per_pair = -(match * rho_c.log() + (1.0 - match) * (1.0 - rho_c).log())
    return per_pair.mean()


def total_loss(prob, gt: np.ndarray, z_q: Tensor, z_v: Tensor,
               intents: list[bool], gt_coarse: np.ndarray,
               cfg: LossConfig) -> tuple[Tensor, dict[str, float]]:
    """NFL + DICE + lambda * P2CL, with a per-component breakdown."""
    nfl = nfl_loss(prob, gt, cfg)
    dice = dice_loss(prob, gt)
    if cfg.lam > 0:
        rho = p2cl_similarity(z_q, z_v)
        p2cl = p2cl_loss(rho, intents, gt_coarse, cfg)
        total = combine_loss(nfl, dice, p2cl, cfg)
        p2cl_val = p2cl.item()
    else:
        total = combine_loss(nfl, dice, None, cfg)
        p2cl_val = 0.0
    return total, {"nfl": nfl.item(), "dice": dice.item(), "p2cl": p2cl_val,
                   "total": total.item()}


def combine_loss(nfl, dice, p2cl, cfg: LossConfig):
    """Weighted sum nfl + dice + lam * p2cl; p2cl may be None when lam = 0.

    Kept separate so the arithmetic is testable independently of the
    component implementations. With lam = 0 the contrastive term is skipped
    entirely, so the result is bit-identical to nfl + dice.
    """
    if p2cl is None:
        if cfg.lam != 0:
            raise ContractError("p2cl term required when lam is nonzero")
        return nfl + dice
    return nfl + dice + cfg.lam * p2cl


def coarse_gt(gt: np.ndarray, factor: int = 4) -> np.ndarray:
    """Max-pool a full-resolution binary mask to the feature grid."""
    gt = np.asarray(gt)
    h, w = gt.shape
    return gt.reshape(h // factor, factor, w // factor, factor).max(axis=(1, 3))
