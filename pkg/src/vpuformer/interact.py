"""Simulated user: error-region prompt generation, the mixed-prompt
switching rule, session execution, and NoC/NoF/IoU@k aggregation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .pue import Prompt, PromptKind, round_half_up
from .tensor import ShapeError


class ContractError(ValueError):
    pass


class ProtocolComplete(Exception):
    """Raised when no error regions remain to prompt from."""


@dataclass
class ErrorComponent:
    kind: str          # "fp" or "fn"
    area: int
    mask: np.ndarray   # boolean, full image size


@dataclass
class ErrorRegions:
    fp: np.ndarray
    fn: np.ndarray
    components: list[ErrorComponent]


@dataclass(frozen=True)
class ProtocolConfig:
    theta: float = 0.85
    min_improvement: float = 0.05
    max_interactions: int = 20
    targets: tuple[float, ...] = (0.85, 0.90)
    mode: str = "click_only"  # or "mixed"
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ContractError("theta must be in (0, 1)")
        if self.max_interactions < 1:
            raise ContractError("max_interactions must be >= 1")
        if self.mode not in ("click_only", "mixed"):
            raise ContractError(f"unknown mode {self.mode!r}")


@dataclass
class SessionStep:
    prompt: Prompt
    pred: np.ndarray
    iou: float


@dataclass
class SessionRecord:
    instance_id: str
    seed: int
    steps: list[SessionStep] = field(default_factory=list)
    reached: dict[float, int | None] = field(default_factory=dict)
    failed: bool = False

    @property
    def iou_trace(self) -> list[float]:
        return [s.iou for s in self.steps]

    def to_json_dict(self) -> dict:
        geometry = []
        for s in self.steps:
            p = s.prompt
            if p.kind is PromptKind.CLICK:
                geo = {"click": {"x": p.click[0], "y": p.click[1]}}
            elif p.kind is PromptKind.BOX:
                cx, cy, w, h = p.box
                geo = {"box": {"cx": cx, "cy": cy, "w": w, "h": h}}
            else:
                geo = {"scribble": {"points": [list(pt) for pt in p.scribble]}}
            geometry.append({"kind": p.kind.value, "positive": p.positive,
                             "geometry": geo, "iou": s.iou})
        return {
            "instance_id": self.instance_id,
            "seed": self.seed,
            "steps": geometry,
            "reached": {f"{t:.2f}": v for t, v in self.reached.items()},
        }


@dataclass
class MetricsReport:
    noc: dict[float, float]
    nof: dict[float, int]
    iou_at_k: list[float]
    instances: int
    max_interactions: int

    def to_json_dict(self) -> dict:
        return {
            "noc": {f"{t:.2f}": v for t, v in self.noc.items()},
            "nof": {f"{t:.2f}": v for t, v in self.nof.items()},
            "iou_at_k": self.iou_at_k,
            "instances": self.instances,
            "max_interactions": self.max_interactions,
        }

    def curve_csv(self) -> str:
        lines = ["k,mean_iou"]
        for k, v in enumerate(self.iou_at_k, start=1):
            lines.append(f"{k},{v:.9g}")
        return "\n".join(lines) + "\n"


def compute_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


def error_regions(pred: np.ndarray, gt: np.ndarray) -> ErrorRegions:
    """4-connected FP/FN components, sorted by descending area."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    fp = pred & ~gt
    fn = ~pred & gt
    components: list[ErrorComponent] = []
    for kind, mask in (("fp", fp), ("fn", fn)):
        labels, n = ndimage.label(mask, structure=_FOUR_CONN)
        for i in range(1, n + 1):
            comp = labels == i
            components.append(ErrorComponent(kind, int(comp.sum()), comp))
    components.sort(key=lambda c: -c.area)
    return ErrorRegions(fp=fp, fn=fn, components=components)


def _largest(err: ErrorRegions) -> ErrorComponent:
    if not err.components:
        raise ProtocolComplete("prediction matches ground truth")
    return err.components[0]


def next_click(err: ErrorRegions, rng=None) -> Prompt:
    """Click the interior point with max 4-connected distance to the
    component boundary (image border counts as boundary); ties row-major."""
    comp = _largest(err)
    padded = np.pad(comp.mask, 1)
    dist = ndimage.distance_transform_cdt(padded, metric="taxicab")[1:-1, 1:-1]
    flat = int(np.argmax(dist))
    y, x = np.unravel_index(flat, dist.shape)
    return Prompt.make_click(int(x), int(y), positive=(comp.kind == "fn"))


def next_box(err: ErrorRegions) -> Prompt:
    comp = _largest(err)
    ys, xs = np.nonzero(comp.mask)
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    cx = round_half_up((x0 + x1) / 2.0)
    cy = round_half_up((y0 + y1) / 2.0)
    return Prompt.make_box(cx, cy, x1 - x0 + 1, y1 - y0 + 1,
                           positive=(comp.kind == "fn"))


def next_scribble(err: ErrorRegions, rng: np.random.Generator) -> Prompt:
    """Greedy 4-connected walk through the largest component along its
    principal axis; at most (box width + box height) points."""
    comp = _largest(err)
    ys, xs = np.nonzero(comp.mask)
    budget = (int(xs.max()) - int(xs.min()) + 1) + (int(ys.max()) - int(ys.min()) + 1)
    pts = np.stack([xs, ys], axis=1).astype(np.float64)
    centered = pts - pts.mean(axis=0)
    if len(pts) == 1:
        path = [(int(xs[0]), int(ys[0]))]
        return Prompt.make_scribble(path, positive=(comp.kind == "fn"))
    # principal axis via the 2x2 covariance eigenvector
    cov = centered.T @ centered
    evals, evecs = np.linalg.eigh(cov)
    axis = evecs[:, int(np.argmax(evals))]
    proj = centered @ axis
    start_idx = int(np.argmin(proj))
    cur = (int(xs[start_idx]), int(ys[start_idx]))
    inside = comp.mask
    path = [cur]
    visited = {cur}
    while len(path) < budget:
        x, y = cur
        candidates = []
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nx, ny = x + dx, y + dy
            if (nx, ny) in visited:
                continue
            if 0 <= ny < inside.shape[0] and 0 <= nx < inside.shape[1] and inside[ny, nx]:
                adv = (nx - pts.mean(axis=0)[0]) * axis[0] + (ny - pts.mean(axis=0)[1]) * axis[1]
                candidates.append((adv, nx, ny))
        if not candidates:
            break
        best = max(c[0] for c in candidates)
        top = [c for c in candidates if c[0] == best]
        _, nx, ny = top[int(rng.integers(len(top)))] if len(top) > 1 else top[0]
        cur = (nx, ny)
        visited.add(cur)
        path.append(cur)
    return Prompt.make_scribble(path, positive=(comp.kind == "fn"))


def should_switch(iou_history: list[float], cfg: ProtocolConfig) -> bool:
    """Suggest box/scribble when accuracy is low or progress has stalled."""
    if not iou_history:
        raise ContractError("history must be nonempty")
    if iou_history[-1] < cfg.theta:
        return True
    if len(iou_history) >= 2 and iou_history[-1] - iou_history[-2] < cfg.min_improvement:
        return True
    return False


def run_session(instance, predict_fn, cfg: ProtocolConfig,
                instance_id: str | None = None) -> SessionRecord:
    """Drive one simulated interactive session.

    `predict_fn(image, prev_mask, prompts) -> probability map`; `instance`
    carries `.image` (ImagePlane) and `.gt` (binary mask). The first step
    is always a click; mixed mode may switch to a box or scribble
    afterwards per `should_switch`.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    gt = np.asarray(instance.gt, dtype=bool)
    record = SessionRecord(instance_id=instance_id or getattr(instance, "id", "?"),
                           seed=cfg.rng_seed,
                           reached={t: None for t in cfg.targets})
    prev_prob = np.zeros(gt.shape, dtype=np.float64)
    prompts: list[Prompt] = []
    top_target = max(cfg.targets)
    try:
        for step in range(1, cfg.max_interactions + 1):
            pred = prev_prob >= 0.5
            err = error_regions(pred, gt)
            if step == 1 or cfg.mode == "click_only":
                prompt = next_click(err, rng)
            else:
                if should_switch(record.iou_trace, cfg):
                    if rng.integers(2) == 0:
                        prompt = next_box(err)
                    else:
                        prompt = next_scribble(err, rng)
                else:
                    prompt = next_click(err, rng)
            prompts.append(prompt)
            prob = predict_fn(instance.image, prev_prob, list(prompts))
            prev_prob = np.asarray(prob, dtype=np.float64)
            iou = compute_iou(prev_prob >= 0.5, gt)
            record.steps.append(SessionStep(prompt=prompt, pred=prev_prob >= 0.5,
                                            iou=iou))
            for t in cfg.targets:
                if record.reached[t] is None and iou >= t:
                    record.reached[t] = step
            if iou >= top_target:
                break
    except ProtocolComplete:
        pass
    except Exception:
        record.failed = True
        raise
    return record


def aggregate_metrics(records: list[SessionRecord],
                      targets: tuple[float, ...],
                      max_interactions: int = 20) -> MetricsReport:
    """NoC (failures counted at the cap), NoF, and carry-forward IoU@k."""
    if not records:
        raise ContractError("no session records")
    noc: dict[float, float] = {}
    nof: dict[float, int] = {}
    for t in targets:
        counts = []
        fails = 0
        for r in records:
            at = r.reached.get(t)
            if at is None:
                fails += 1
                counts.append(max_interactions)
            else:
                counts.append(at)
        noc[t] = math.fsum(counts) / len(counts)
        nof[t] = fails
    iou_at_k = []
    for k in range(1, max_interactions + 1):
        vals = []
        for r in records:
            trace = r.iou_trace
            if not trace:
                continue
            vals.append(trace[min(k, len(trace)) - 1])
        iou_at_k.append(math.fsum(vals) / len(vals) if vals else 0.0)
    return MetricsReport(noc=noc, nof=nof, iou_at_k=iou_at_k,
                         instances=len(records),
                         max_interactions=max_interactions)
