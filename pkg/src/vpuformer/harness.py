"""Training loop with iterative prompt sampling, Adam, gradient checking,
and the evaluation driver that produces NoC/NoF/IoU@k reports.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import interact
from .data import InstanceSample
from .interact import (MetricsReport, ProtocolConfig, SessionRecord,
                       aggregate_metrics, error_regions, next_box, next_click,
                       next_scribble, run_session)
from .losses import LossConfig, coarse_gt, normalize_rows, total_loss
from .model import (ModelConfig, ForwardState, Tensor, init_params,
                    load_checkpoint, model_forward, save_checkpoint)
from .pue import EncoderConfig, ImagePlane, Prompt, PromptKind, encode_prompt
from .tensor import matmul


class NumericError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 2
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    decay_epoch: int = 50
    decay_factor: float = 0.1
    rounds: int = 3
    sigma: float = 3.0
    seed: int = 0
    precision: str = "single"  # "single" or "double"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.precision not in ("single", "double"):
            raise ValueError("precision must be 'single' or 'double'")

    @property
    def dtype(self):
        return np.float32 if self.precision == "single" else np.float64


@dataclass
class TrainState:
    params: dict[str, Tensor]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    loss_history: list[dict] = field(default_factory=list)

    @staticmethod
    def fresh(params: dict[str, Tensor]) -> "TrainState":
        return TrainState(
            params=params,
            m={k: np.zeros_like(t.data) for k, t in params.items()},
            v={k: np.zeros_like(t.data) for k, t in params.items()},
        )


def adam_step(state: TrainState, grads: dict[str, np.ndarray],
              cfg: TrainConfig, lr: float | None = None) -> None:
    """Bias-corrected Adam update, in place."""
    lr = cfg.lr if lr is None else lr
    state.step += 1
    t = state.step
    for name, p in state.params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter {name!r}")
        state.m[name] = cfg.beta1 * state.m[name] + (1 - cfg.beta1) * g
        state.v[name] = cfg.beta2 * state.v[name] + (1 - cfg.beta2) * g * g
        m_hat = state.m[name] / (1 - cfg.beta1 ** t)
        v_hat = state.v[name] / (1 - cfg.beta2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def p2cl_embeddings(state: ForwardState,
                    params: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Unit-norm prompt and pixel embeddings for the contrastive term."""
    z_q = normalize_rows(matmul(state.q_prime, params["p2cl.wq"]) + params["p2cl.bq"])
    z_v = normalize_rows(state.fused)
    return z_q, z_v


def _training_prompt(kind_pick: int, err, rng) -> Prompt:
    if kind_pick == 0:
        return next_click(err, rng)
    if kind_pick == 1:
        return next_box(err)
    return next_scribble(err, rng)


def sample_loss(sample: InstanceSample, params: dict[str, Tensor],
                mcfg: ModelConfig, lcfg: LossConfig, tcfg: TrainConfig,
                rng: np.random.Generator) -> tuple[Tensor, dict[str, float]]:
    """Simulated multi-round loss for one instance.

    Round 1 is a click on the ground truth; later rounds draw a random
    prompt kind from the current error regions, feeding the previous
    round's probability map back in (detached).
    """
    enc_cfg = EncoderConfig(sigma=tcfg.sigma)
    gt = sample.gt.astype(np.float64)
    gt4 = coarse_gt(gt, 4).reshape(-1)
    prev = np.zeros_like(gt)
    prompts: list[Prompt] = []
    vectors = []
    acc: Tensor | None = None
    breakdown = {"nfl": 0.0, "dice": 0.0, "p2cl": 0.0, "total": 0.0}
    for rnd in range(tcfg.rounds):
        err = error_regions(prev >= 0.5, sample.gt)
        if not err.components:
            break
        if rnd == 0:
            prompt = next_click(err, rng)
        else:
            prompt = _training_prompt(int(rng.integers(3)), err, rng)
        prompts.append(prompt)
        vectors.append(encode_prompt(sample.image, prompt, enc_cfg,
                                     rng_seed=int(rng.integers(2 ** 31))))
        if len(vectors) > mcfg.max_prompts:
            del vectors[0], prompts[0]
        fstate = model_forward(sample.image, prev, vectors, params, mcfg)
        z_q, z_v = p2cl_embeddings(fstate, params)
        loss, parts = total_loss(fstate.prob, gt, z_q, z_v,
                                 [p.positive for p in prompts[-len(vectors):]],
                                 gt4, lcfg)
        acc = loss if acc is None else acc + loss
        for k in breakdown:
            breakdown[k] += parts[k]
        prev = fstate.prob_map.copy()
    n = max(1, len(vectors))
    rounds_done = min(tcfg.rounds, len(prompts)) or 1
    acc = acc * (1.0 / rounds_done)
    for k in breakdown:
        breakdown[k] /= rounds_done
    return acc, breakdown


def train_step(state: TrainState, batch: list[InstanceSample],
               mcfg: ModelConfig, lcfg: LossConfig, tcfg: TrainConfig,
               rng: np.random.Generator, lr: float) -> dict[str, float]:
    total: Tensor | None = None
    agg = {"nfl": 0.0, "dice": 0.0, "p2cl": 0.0, "total": 0.0}
    for sample in batch:
        loss, parts = sample_loss(sample, state.params, mcfg, lcfg, tcfg, rng)
        total = loss if total is None else total + loss
        for k in agg:
            agg[k] += parts[k]
    total = total * (1.0 / len(batch))
    for k in agg:
        agg[k] /= len(batch)
    for p in state.params.values():
        p.grad = None
    total.backward()
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
             for k, p in state.params.items()}
    adam_step(state, grads, tcfg, lr=lr)
    state.loss_history.append(agg)
    return agg


def train(train_set: list[InstanceSample], mcfg: ModelConfig, lcfg: LossConfig,
          tcfg: TrainConfig, log_every: int = 0,
          max_steps: int | None = None) -> TrainState:
    """Full training run; deterministic given the config seed."""
    params = init_params(mcfg, seed=tcfg.seed)
    dtype = tcfg.dtype
    for p in params.values():
        p.data = p.data.astype(np.float32).astype(dtype)
    state = TrainState.fresh(params)
    rng = np.random.default_rng(tcfg.seed)
    order = np.arange(len(train_set))
    start = time.time()
    for epoch in range(tcfg.epochs):
        lr = tcfg.lr * (tcfg.decay_factor if epoch >= tcfg.decay_epoch else 1.0)
        rng.shuffle(order)
        for i in range(0, len(order), tcfg.batch_size):
            batch = [train_set[j] for j in order[i:i + tcfg.batch_size]]
            agg = train_step(state, batch, mcfg, lcfg, tcfg, rng, lr)
            if log_every and state.step % log_every == 0:
                print(f"epoch {epoch} step {state.step} "
                      f"loss {agg['total']:.4f} "
                      f"(nfl {agg['nfl']:.4f} dice {agg['dice']:.4f} "
                      f"p2cl {agg['p2cl']:.4f}) "
                      f"[{time.time() - start:.0f}s]", flush=True)
            if max_steps is not None and state.step >= max_steps:
                return state
    return state


def make_predictor(params: dict[str, Tensor], mcfg: ModelConfig,
                   sigma: float = 3.0, base_seed: int = 0):
    """predict_fn(image, prev_mask, prompts) for the interaction loop."""
    enc_cfg = EncoderConfig(sigma=sigma)

    def predict(image: ImagePlane, prev_mask: np.ndarray,
                prompts: list[Prompt]) -> np.ndarray:
        kept = prompts[-mcfg.max_prompts:]
        vectors = [encode_prompt(image, p, enc_cfg,
                                 rng_seed=base_seed + 1000 * i)
                   for i, p in enumerate(kept)]
        fstate = model_forward(image, prev_mask, vectors, params, mcfg)
        return fstate.prob_map

    return predict


def evaluate(params: dict[str, Tensor], dataset: list[InstanceSample],
             protocol: ProtocolConfig, mcfg: ModelConfig,
             sigma: float = 3.0) -> tuple[MetricsReport, list[SessionRecord]]:
    records = []
    for idx, sample in enumerate(dataset):
        session_cfg = replace(protocol, rng_seed=protocol.rng_seed + idx)
        predict = make_predictor(params, mcfg, sigma=sigma,
                                 base_seed=session_cfg.rng_seed)
        records.append(run_session(sample, predict, session_cfg,
                                   instance_id=sample.id))
    report = aggregate_metrics(records, protocol.targets,
                               protocol.max_interactions)
    return report, records


def gradient_check(mcfg: ModelConfig | None = None,
                   lcfg: LossConfig | None = None, seed: int = 0, h: float = 1e-4,
                   max_coords_per_param: int = 4) -> dict[str, float]:
    """Finite-difference check of the full forward + total loss.

    Every parameter tensor is probed on a deterministic subset of
    coordinates; returns the max relative error per parameter.
    """
    from .data import generate_instance

    mcfg = mcfg or ModelConfig(input_size=16, patch=4, d_model=8, heads=2,
                               dma_layers=1, decoder_scales=(4,))
    lcfg = lcfg or LossConfig()
    rng = np.random.default_rng(seed)
    params = init_params(mcfg, seed=seed, zero_head=False)
    sample = generate_instance(seed, size=mcfg.input_size)
    gt = sample.gt.astype(np.float64)
    gt4 = coarse_gt(gt, 4).reshape(-1)
    enc = EncoderConfig(sigma=3.0)
    err = error_regions(np.zeros_like(sample.gt), sample.gt)
    prompt = next_click(err, rng)
    vectors = [encode_prompt(sample.image, prompt, enc)]
    prev = np.zeros_like(gt)

    def loss_tensor() -> Tensor:
        fstate = model_forward(sample.image, prev, vectors, params, mcfg)
        z_q, z_v = p2cl_embeddings(fstate, params)
        loss, _ = total_loss(fstate.prob, gt, z_q, z_v, [prompt.positive],
                             gt4, lcfg)
        return loss

    for p in params.values():
        p.grad = None
    loss_tensor().backward()
    results: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        g_ad = (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)
        n = flat.size
        coords = (np.arange(n) if n <= max_coords_per_param
                  else rng.choice(n, size=max_coords_per_param, replace=False))
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            hi = loss_tensor().item()
            flat[c] = orig - h
            lo = loss_tensor().item()
            flat[c] = orig
            g_fd = (hi - lo) / (2 * h)
            denom = max(1e-8, abs(g_ad[c]) + abs(g_fd))
            worst = max(worst, abs(g_ad[c] - g_fd) / denom)
        results[name] = worst
    return results


# re-exported for the CLI surface
checkpoint_save = save_checkpoint
checkpoint_load = load_checkpoint
