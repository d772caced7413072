"""Semi-supervised training with hard-positive augmentation of unlabeled data.

Each step minimises

    w_sup  * CE(y, F(x_l))
  + w_pl   * mean_u 1[max F(x_u) >= threshold] * CE(F^(x_u), F(s(x_u)))
  + w_aug  * mean_u 1[u selected] * CE(F^(x_u), F(x'_u))
  + w_neg  * mean_u 1[u selected] * CE(Y'', F(x''_u))          (optional)

where ``F^`` is the sharpened prediction treated as a constant, ``s`` is a
weak flip/shift/noise augmentation, ``x'`` comes from the Lagrangian attack
on the frozen network and the selection keeps the unlabeled samples with the
lowest time-consistency score.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .attack import (AdaptiveEpsState, AttackParams, adaptive_epsilon_step, fast_lagrangian_attack, log_probs,
                     negative_attack, sharpen)
from .data import ExampleBatch, Splits
from .perceptual import lpips_value
from .network import Network, convnet_spec, init_network, mlp_spec, save_checkpoint
from .rng import substream
from .selection import TCSTracker

log = logging.getLogger(__name__)

WORKERS_ENV = "LPA3_WORKERS"
NEGATIVE_MODES = ("off", "subtract", "targeted")


@dataclass
class WeakAugSpec:
    shift: int = 2
    flip: bool = False
    noise_std: float = 0.0

    def __post_init__(self):
        if self.shift < 0 or self.noise_std < 0:
            raise ValueError("shift and noise_std must be >= 0")


@dataclass
class TrainConfig:
    conf_threshold: float = 0.95
    tau_pct: float = 90.0
    learning_rate: float = 0.03
    batch_labeled: int = 32
    batch_unlabeled: int = 64
    epochs: int = 10
    seed: int = 0
    lpa3: bool = True
    augmentation: str = "lpa3"               # lpa3 | adaptive_eps
    gate_lpa3: bool = False
    lpa3_start_epoch: int = 0
    gamma_c: float = 0.9
    refresh_every: int = 1
    negative_term: str = "off"
    acknowledge_subtract: bool = False
    negative_target: str = "uniform"         # uniform | argmax
    weight_supervised: float = 1.0
    weight_pseudo: float = 1.0
    weight_lpa3: float = 1.0
    weight_negative: float = 1.0
    arch: str = "mlp"
    hidden: tuple[int, ...] = (128, 64)
    channels: int = 8
    checkpoint_every: int = 0
    attack_chunk: int = 64
    attack: AttackParams = field(default_factory=AttackParams)
    weak_aug: WeakAugSpec = field(default_factory=WeakAugSpec)

    def __post_init__(self):
        checks = [
            (0.0 < self.conf_threshold <= 1.0, "conf_threshold must lie in (0, 1]"),
            (0.0 <= self.tau_pct <= 100.0, "tau_pct must lie in [0, 100]"),
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (self.batch_labeled >= 1 and self.batch_unlabeled >= 1, "batch sizes must be >= 1"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.augmentation in ("lpa3", "adaptive_eps"), "augmentation must be 'lpa3' or 'adaptive_eps'"),
            (0.0 <= self.gamma_c <= 1.0, "gamma_c must lie in [0, 1]"),
            (self.refresh_every >= 1, "refresh_every must be >= 1"),
            (self.negative_term in NEGATIVE_MODES, f"negative_term must be one of {NEGATIVE_MODES}"),
            (self.negative_target in ("uniform", "argmax"), "negative_target must be 'uniform' or 'argmax'"),
            (self.arch in ("mlp", "conv"), "arch must be 'mlp' or 'conv'"),
            (self.lpa3_start_epoch >= 0, "lpa3_start_epoch must be >= 0"),
            (self.checkpoint_every >= 0, "checkpoint_every must be >= 0"),
            (self.attack_chunk >= 1, "attack_chunk must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        if self.negative_term == "subtract" and not self.acknowledge_subtract:
            raise ValueError("negative_term = subtract is unstable (its gradient can explode); "
                             "set acknowledge_subtract = true to use it anyway")
        self.hidden = tuple(int(h) for h in self.hidden)


# ------------------------------------------------------------ weak augment


def shift_images(x: np.ndarray, dx, dy) -> np.ndarray:
    """Shift each image by (dx columns, dy rows) with zero fill."""
    x = np.asarray(x, dtype=np.float64)
    n, h, w = x.shape[0], x.shape[-2], x.shape[-1]
    dx = np.broadcast_to(np.asarray(dx, dtype=np.int64), (n,))
    dy = np.broadcast_to(np.asarray(dy, dtype=np.int64), (n,))
    if np.any(np.abs(dx) >= w) or np.any(np.abs(dy) >= h):
        raise ValueError(f"shift exceeds the {h}x{w} image")
    out = np.zeros_like(x)
    for i in range(n):
        a, b = int(dy[i]), int(dx[i])
        src = x[i, ..., max(0, -a): h - max(0, a), max(0, -b): w - max(0, b)]
        out[i, ..., max(0, a): h - max(0, -a), max(0, b): w - max(0, -b)] = src
    return out


def flip_images(x: np.ndarray, mask) -> np.ndarray:
    """Mirror the images selected by ``mask`` left-right."""
    x = np.asarray(x, dtype=np.float64)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), (x.shape[0],))
    out = x.copy()
    out[mask] = x[mask][..., ::-1]
    return out


def weak_augment(x: np.ndarray, spec: WeakAugSpec, seed, bounds=(0.0, 1.0)) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    dx = rng.integers(-spec.shift, spec.shift + 1, size=n)
    dy = rng.integers(-spec.shift, spec.shift + 1, size=n)
    flips = rng.random(n) < 0.5
    noise = rng.standard_normal(x.shape)
    out = x
    if spec.shift:
        if x.ndim < 3:
            raise ValueError("shift needs image-shaped input")
        out = shift_images(out, dx, dy)
    if spec.flip:
        if x.ndim < 3:
            raise ValueError("flip needs image-shaped input")
        out = flip_images(out, flips)
    if spec.noise_std:
        out = np.clip(out + spec.noise_std * noise, *bounds)
    return out


# --------------------------------------------------------------- optimiser


class SGD:
    """Plain SGD with a constant learning rate."""

    def __init__(self, params, lr: float):
        self.params = list(params)
        self.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad


def soft_cross_entropy(logits: T.Tensor, targets: np.ndarray, weights: np.ndarray | None = None,
                       denom: float | None = None) -> T.Tensor:
    """sum_i w_i * (-targets_i . log softmax_i) / denom, with clamped probabilities."""
    per = T.neg(T.sum(T.mul(log_probs(logits), np.asarray(targets, dtype=np.float64)), axis=1))
    if weights is not None:
        per = T.mul(per, np.asarray(weights, dtype=np.float64))
    return T.div(T.sum(per), float(denom if denom is not None else logits.shape[0]))


def one_hot(y, k: int) -> np.ndarray:
    out = np.zeros((len(y), k))
    out[np.arange(len(y)), np.asarray(y, dtype=np.int64)] = 1.0
    return out


def build_network(cfg: TrainConfig, input_shape, num_classes: int) -> Network:
    if cfg.arch == "mlp":
        layers = mlp_spec(input_shape, cfg.hidden, num_classes)
    else:
        layers = convnet_spec(input_shape, cfg.channels, num_classes=num_classes)
    init_seed = int(substream(cfg.seed, "init").integers(2**32))
    return init_network(layers, input_shape, init_seed)


def accuracy(net: Network, batch: ExampleBatch, chunk: int = 500) -> float:
    if len(batch) == 0:
        return float("nan")
    correct = 0
    with T.no_grad():
        for s in range(0, len(batch), chunk):
            logits, _ = net.forward(batch.inputs[s: s + chunk])
            correct += int(np.sum(logits.data.argmax(axis=1) == batch.labels[s: s + chunk]))
    return correct / len(batch)


def predict_probs(net: Network, x: np.ndarray, chunk: int = 500) -> np.ndarray:
    out = []
    with T.no_grad():
        for s in range(0, len(x), chunk):
            out.append(net.predict_proba(x[s: s + chunk]).data)
    return np.concatenate(out) if out else np.zeros((0, net.num_classes))


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


def attack_chunks(net: Network, x: np.ndarray, y: np.ndarray, params: AttackParams, noise: np.ndarray,
                  chunk: int = 64, workers: int | None = None) -> list:
    """Positive attack over fixed-size chunks, optionally on several threads.

    Chunk boundaries do not depend on the worker count, so results are
    identical for any number of workers.
    """
    workers = worker_count() if workers is None else workers
    starts = list(range(0, len(x), chunk))

    def run(s):
        return fast_lagrangian_attack(net, x[s: s + chunk], y[s: s + chunk], params, noise=noise[s: s + chunk])

    # freeze once here so worker threads never toggle the shared parameter flags
    with net.frozen():
        if workers > 1 and len(starts) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(run, starts))
        return [run(s) for s in starts]


def chunked_attack(net: Network, x: np.ndarray, y: np.ndarray, params: AttackParams, noise: np.ndarray,
                   chunk: int = 64, workers: int | None = None):
    """``(x', slack, lpips)`` for the whole batch via :func:`attack_chunks`."""
    parts = attack_chunks(net, x, y, params, noise, chunk, workers)
    return (np.concatenate([p.x_prime for p in parts]), np.concatenate([p.slack for p in parts]),
            np.concatenate([p.lpips for p in parts]))


# -------------------------------------------------------------------- step


@dataclass
class StepState:
    """Mutable per-run state carried between steps."""

    tcs: TCSTracker | None = None
    eps: AdaptiveEpsState | None = None
    cache: dict = field(default_factory=dict)   # id -> (epoch generated, x')
    epoch: int = 0
    step: int = 0


def _loss_value(t: T.Tensor | None) -> float:
    return 0.0 if t is None else float(t.data)


def semi_supervised_step(net: Network, labeled: ExampleBatch, unlabeled: ExampleBatch, cfg: TrainConfig,
                         state: StepState, optimizer: SGD) -> dict:
    """One SGD step on the combined loss; returns the step metrics."""
    params = cfg.attack
    k = net.num_classes
    seed, epoch, step = cfg.seed, state.epoch, state.step
    nu = len(unlabeled)
    metrics = {"n_labeled": len(labeled), "n_unlabeled": nu, "n_selected": 0, "n_masked": 0,
               "slack": np.zeros(0), "lpips": np.zeros(0), "aborted": False}

    if len(labeled) == 0:
        log.warning("empty labeled batch at epoch %d step %d; supervised term skipped", epoch, step)

    # constant targets from the current network
    if nu:
        probs_u = predict_probs(net, unlabeled.inputs)
        targets = sharpen(probs_u, params.sharpen, params.temperature)
        pseudo = probs_u.argmax(axis=1)
        mask = (probs_u.max(axis=1) >= cfg.conf_threshold).astype(np.float64)
        metrics["n_masked"] = int(mask.sum())
        weak = weak_augment(unlabeled.inputs, cfg.weak_aug, substream(seed, "weak", epoch, step),
                            params.pixel_bounds)

        selected = np.zeros(nu, dtype=bool)
        if cfg.lpa3 and cfg.tau_pct > 0 and epoch >= cfg.lpa3_start_epoch:
            chosen = state.tcs.select(unlabeled.ids, cfg.tau_pct)
            selected = np.isin(unlabeled.ids, chosen)
        sel = np.flatnonzero(selected)
        metrics["n_selected"] = len(sel)

        x_aug = None
        if len(sel):
            x_aug, metrics["lpips"] = _augment(net, unlabeled, weak, pseudo, sel, cfg, state)
            with T.no_grad():
                logits_aug = net.forward(x_aug, params.mode)[0].data
            lp = np.log(np.clip(_softmax(logits_aug), 1e-12, None))
            lp_x = np.log(np.clip(probs_u[sel], 1e-12, None))
            rows = np.arange(len(sel))
            metrics["slack"] = lp[rows, pseudo[sel]] - lp_x[rows, pseudo[sel]] + params.sigma

        x_neg = None
        if len(sel) and cfg.negative_term != "off":
            noise = substream(seed, "negative-noise", epoch, step).standard_normal(unlabeled.inputs[sel].shape)
            x_neg = negative_attack(net, unlabeled.inputs[sel], params, noise=noise).x_prime

    net.zero_grad()
    terms = {}
    try:
        total = None
        if len(labeled):
            logits_l, _ = net.forward(labeled.inputs, training=True)
            terms["supervised"] = soft_cross_entropy(logits_l, one_hot(labeled.labels, k))
            total = T.mul(terms["supervised"], cfg.weight_supervised)
        if nu:
            logits_w, _ = net.forward(weak, training=True)
            terms["pseudo"] = soft_cross_entropy(logits_w, targets, mask, nu)
            total = _acc(total, T.mul(terms["pseudo"], cfg.weight_pseudo))
            if x_aug is not None:
                gate = mask[sel] if cfg.gate_lpa3 else None
                logits_a, _ = net.forward(x_aug, params.mode, training=True)
                terms["lpa3"] = soft_cross_entropy(logits_a, targets[sel], gate, nu)
                total = _acc(total, T.mul(terms["lpa3"], cfg.weight_lpa3))
            if x_neg is not None:
                logits_n, _ = net.forward(x_neg, params.mode, training=True)
                if cfg.negative_term == "targeted":
                    if cfg.negative_target == "uniform":
                        y_neg = np.full((len(sel), k), 1.0 / k)
                    else:
                        y_neg = one_hot(logits_n.data.argmax(axis=1), k)
                    terms["negative"] = soft_cross_entropy(logits_n, y_neg, None, nu)
                    total = _acc(total, T.mul(terms["negative"], cfg.weight_negative))
                else:
                    terms["negative"] = soft_cross_entropy(logits_n, targets[sel], None, nu)
                    total = _acc(total, T.mul(terms["negative"], -cfg.weight_negative))
        if total is not None:
            total.backward()
            grads = [p.grad for p in optimizer.params if p.grad is not None]
            if not all(np.all(np.isfinite(g)) for g in grads):
                raise FloatingPointError("non-finite gradient")
            optimizer.step()
    except FloatingPointError as exc:
        log.warning("step aborted at epoch %d step %d: %s", epoch, step, exc)
        metrics["aborted"] = True
        net.zero_grad()
        total = None
    for name in ("supervised", "pseudo", "lpa3", "negative"):
        metrics[f"loss_{name}"] = _loss_value(terms.get(name))
    metrics["loss_total"] = _loss_value(total) if not metrics["aborted"] else float("nan")
    state.step += 1
    return metrics


def _acc(total, term):
    return term if total is None else T.add(total, term)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _augment(net, unlabeled, weak, pseudo, sel, cfg, state) -> np.ndarray:
    params = cfg.attack
    ids = unlabeled.ids[sel]
    x = unlabeled.inputs[sel]
    if cfg.augmentation == "adaptive_eps":
        pos = np.searchsorted(state.eps.ids, ids)
        sub = AdaptiveEpsState(ids, state.eps.eps[pos])
        x_aug, new = adaptive_epsilon_step(net, x, weak[sel], sub, params.sigma, params.eta,
                                           params.epsilon_max, params)
        state.eps.eps[pos] = new.eps
        return x_aug, lpips_value(net, x, x_aug, params.mode)
    fresh = np.array([not (int(i) in state.cache and state.cache[int(i)][0] > state.epoch - cfg.refresh_every)
                      for i in ids], dtype=bool)
    x_aug = np.empty_like(x)
    lp = np.zeros(len(sel))
    if fresh.any():
        noise = substream(cfg.seed, "attack-noise", state.epoch, state.step).standard_normal(x[fresh].shape)
        xp, _, d = chunked_attack(net, x[fresh], pseudo[sel][fresh], params, noise, cfg.attack_chunk)
        x_aug[fresh] = xp
        lp[fresh] = d
        if cfg.refresh_every > 1:
            for i, v in zip(ids[fresh], xp):
                state.cache[int(i)] = (state.epoch, v)
    for j in np.flatnonzero(~fresh):
        x_aug[j] = state.cache[int(ids[j])][1]
    if (~fresh).any():
        lp[~fresh] = lpips_value(net, x[~fresh], x_aug[~fresh], params.mode)
    return x_aug, lp


# ------------------------------------------------------------------- train


@dataclass
class TrainResult:
    net: Network
    history: list[dict]
    tcs: TCSTracker | None
    slacks: list[np.ndarray] = field(default_factory=list)   # per epoch, every augmented sample


def labeled_batches(n: int, batch: int, seed: int):
    """Endless labeled index batches: seeded permutations cut into chunks (the last one may be short)."""
    k = 0
    while True:
        if n == 0:
            yield np.zeros(0, dtype=np.int64)
            continue
        perm = substream(seed, "shuffle-labeled", k).permutation(n)
        k += 1
        for s in range(0, n, batch):
            yield perm[s: s + batch]


def _epoch_record(epoch, steps, net, splits, cfg, slack, lp) -> dict:
    n_aug = len(slack)
    rec = {"epoch": epoch, "steps": len(steps)}
    for name in ("supervised", "pseudo", "lpa3", "negative", "total"):
        vals = [s[f"loss_{name}"] for s in steps if not s["aborted"]]
        rec[f"loss_{name}"] = float(np.mean(vals)) if vals else 0.0
    nu = sum(s["n_unlabeled"] for s in steps)
    rec["pseudo_mask_rate"] = sum(s["n_masked"] for s in steps) / nu if nu else 0.0
    rec["selected_fraction"] = sum(s["n_selected"] for s in steps) / nu if nu else 0.0
    rec["n_augmented"] = n_aug
    rec["constraint_satisfaction"] = float(np.mean(slack >= 0)) if n_aug else 0.0
    rec["constraint_violation_rate"] = float(np.mean(slack < 0)) if n_aug else 0.0
    rec["mean_lpips"] = float(np.mean(lp)) if n_aug else 0.0
    rec["aborted_steps"] = sum(bool(s["aborted"]) for s in steps)
    rec["labeled_accuracy"] = accuracy(net, splits.labeled) if len(splits.labeled) else 0.0
    rec["test_accuracy"] = accuracy(net, splits.test) if len(splits.test) else 0.0
    return rec


def train(splits: Splits, cfg: TrainConfig, out_dir=None, writer=None, net: Network | None = None) -> TrainResult:
    """Run ``cfg.epochs`` epochs; metrics go to ``writer`` and checkpoints to ``out_dir``."""
    overlap = np.intersect1d(splits.labeled.ids, splits.unlabeled.ids)
    if len(overlap):
        raise ValueError(f"labeled and unlabeled splits share ids, e.g. {overlap[:5].tolist()}")
    net = net or build_network(cfg, splits.input_shape, splits.num_classes)
    if cfg.epochs == 0:
        return TrainResult(net, [], None)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None and cfg.checkpoint_every:
        out_dir.mkdir(parents=True, exist_ok=True)
    unl = splits.unlabeled
    state = StepState()
    if len(unl):
        state.tcs = TCSTracker(unl.ids, net.num_classes, cfg.gamma_c)
        order = np.argsort(unl.ids)
        state.eps = AdaptiveEpsState(unl.ids[order], np.zeros(len(unl)))
    opt = SGD(net.parameters(), cfg.learning_rate)
    lab_iter = labeled_batches(len(splits.labeled), cfg.batch_labeled, cfg.seed)
    history, slacks = [], []
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        if len(unl):
            state.tcs.update(unl.ids, predict_probs(net, unl.inputs))
            perm = substream(cfg.seed, "shuffle-unlabeled", epoch).permutation(len(unl))
            n_steps = math.ceil(len(unl) / cfg.batch_unlabeled)
        else:
            n_steps = math.ceil(len(splits.labeled) / cfg.batch_labeled)
        steps = []
        for s in range(n_steps):
            lab = splits.labeled.subset(next(lab_iter))
            if len(unl):
                batch = unl.subset(perm[s * cfg.batch_unlabeled: (s + 1) * cfg.batch_unlabeled])
            else:
                batch = unl.subset(np.zeros(0, dtype=np.int64))
            steps.append(semi_supervised_step(net, lab, batch, cfg, state, opt))
        slack = np.concatenate([s["slack"] for s in steps]) if steps else np.zeros(0)
        lp = np.concatenate([s["lpips"] for s in steps]) if steps else np.zeros(0)
        slacks.append(slack)
        rec = _epoch_record(epoch, steps, net, splits, cfg, slack, lp)
        history.append(rec)
        if writer is not None:
            writer.write(rec)
        if out_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            path = out_dir / f"checkpoint_epoch{epoch + 1:04d}.bin"
            try:
                save_checkpoint(net, path)
            except OSError as exc:
                raise OSError(f"could not write checkpoint {path}: {exc}") from exc
    return TrainResult(net, history, state.tcs, slacks)


def train_supervised(labeled: ExampleBatch, cfg: TrainConfig, input_shape, num_classes: int,
                     net: Network | None = None) -> tuple[Network, list[float]]:
    """Plain cross-entropy SGD on labeled data; returns the network and the per-step losses."""
    net = net or build_network(cfg, input_shape, num_classes)
    opt = SGD(net.parameters(), cfg.learning_rate)
    batches = labeled_batches(len(labeled), cfg.batch_labeled, cfg.seed)
    losses = []
    for _ in range(cfg.epochs):
        for _ in range(math.ceil(len(labeled) / cfg.batch_labeled)):
            b = labeled.subset(next(batches))
            opt.zero_grad()
            logits, _ = net.forward(b.inputs, training=True)
            loss = soft_cross_entropy(logits, one_hot(b.labels, num_classes))
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
    return net, losses
