"""Label-preserving hard positives, negative samples and the adaptive-epsilon variant.

The positive augmentation solves

    min_{x'}  -||phi(x) - phi(x')||_2 + lam * max(0, log F(x)[y] - log F(x')[y] - sigma)

with a few normalised first-order steps while ``lam`` grows geometrically
from ``lambda_min`` to ``lambda_max``. Everything here operates on batches;
samples never interact, so a batch result equals the per-sample results.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .network import Network
from .perceptual import distance, embed_activations
from .tensor import Tensor

PROB_FLOOR = 1e-12


class AttackError(RuntimeError):
    """The attack hit a non-finite gradient."""


@dataclass
class AttackParams:
    sigma: float = 0.02
    sigma_neg: float = 0.5
    steps: int = 5
    epsilon: float = 0.002
    noise_scale: float = 0.01
    fd_step: float = 0.5
    lambda_min: float = 1.0
    lambda_max: float = 10.0
    pixel_bounds: tuple[float, float] = (0.0, 1.0)
    eta: float = 0.01
    epsilon_max: float = 0.1
    m_floor: float = 1e-3
    literal_update: bool = False
    sharpen: str = "onehot"
    temperature: float = 0.5
    mode: str = "aug_stats"
    normalize: str = "channel"

    def __post_init__(self):
        self.pixel_bounds = (float(self.pixel_bounds[0]), float(self.pixel_bounds[1]))
        checks = [
            (self.sigma >= 0, "sigma must be >= 0"),
            (self.sigma_neg >= 0, "sigma_neg must be >= 0"),
            (int(self.steps) == self.steps and self.steps >= 1, "steps must be a positive integer"),
            (self.epsilon > 0, "epsilon must be > 0"),
            (self.fd_step > 0, "fd_step must be > 0"),
            (self.lambda_max >= self.lambda_min > 0, "need lambda_max >= lambda_min > 0"),
            (self.epsilon_max >= 0, "epsilon_max must be >= 0"),
            (self.eta >= 0, "eta must be >= 0"),
            (self.noise_scale >= 0, "noise_scale must be >= 0"),
            (self.m_floor > 0, "m_floor must be > 0"),
            (self.pixel_bounds[0] < self.pixel_bounds[1], "pixel_bounds must be (lo, hi) with lo < hi"),
            (self.sharpen in ("onehot", "temperature"), "sharpen must be 'onehot' or 'temperature'"),
            (self.temperature > 0, "temperature must be > 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        self.steps = int(self.steps)

    def lambda_schedule(self) -> np.ndarray:
        """lam_t = lambda_min * (lambda_max / lambda_min) ** (t / T), t = 1..T."""
        ratio = self.lambda_max / self.lambda_min
        return np.array([self.lambda_min * ratio ** (t / self.steps) for t in range(1, self.steps + 1)])

    def step_schedule(self) -> np.ndarray:
        """gamma_t = epsilon * 0.1 ** (t / T)."""
        return np.array([self.epsilon * 0.1 ** (t / self.steps) for t in range(1, self.steps + 1)])


# ---------------------------------------------------------------- helpers


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _rows(a: np.ndarray) -> np.ndarray:
    return a.reshape(a.shape[0], -1)


def _bcast(v: np.ndarray, like: np.ndarray) -> np.ndarray:
    return v.reshape((-1,) + (1,) * (like.ndim - 1))


def log_probs(logits: Tensor) -> Tensor:
    """log of clamped softmax probabilities."""
    return T.log(T.clamp(T.softmax(logits, axis=-1), PROB_FLOOR, 1.0))


def class_log_prob(logits: Tensor, y) -> Tensor:
    return T.take_rows(log_probs(logits), y)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise KL(p || q) with q clamped at 1e-12 and 0 * log 0 = 0."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    q = np.clip(np.atleast_2d(np.asarray(q, dtype=np.float64)), PROB_FLOOR, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(np.clip(p, PROB_FLOOR, None)) - np.log(q)), 0.0)
    return terms.sum(axis=1)


def sharpen(probs: np.ndarray, how: str = "onehot", temperature: float = 0.5) -> np.ndarray:
    probs = np.atleast_2d(probs)
    if how == "onehot":
        out = np.zeros_like(probs)
        out[np.arange(len(probs)), probs.argmax(axis=1)] = 1.0
        return out
    z = np.log(np.clip(probs, PROB_FLOOR, None)) / temperature
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_labels(y, n, num_classes):
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels, got {y.shape}")
    if np.any(y < 0) or np.any(y >= num_classes):
        raise ValueError(f"class index out of range [0, {num_classes})")
    return y


def _reference(net: Network, x: np.ndarray, mode: str, normalize: str):
    with T.no_grad():
        logits, acts = net.forward(T.tensor(x), mode)
        phi = embed_activations(acts, normalize).vector
    return logits, phi


# ------------------------------------------------------------- objective


def lagrangian_terms(net: Network, x, x_prime, y, lam: float, sigma: float, mode: str = "aug_stats",
                     normalize: str = "channel"):
    """Per-sample ``(objective, lpips, hinge)`` tensors; differentiable in ``x_prime``."""
    x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    xp = x_prime if isinstance(x_prime, Tensor) else T.tensor(x_prime)
    if x.shape != xp.shape:
        raise ValueError(f"x and x_prime shapes differ: {x.shape} vs {xp.shape}")
    if x.shape == net.input_shape:
        x = x[None]
        xp = T.reshape(xp, (1,) + net.input_shape)
    y = _check_labels(y, x.shape[0], net.num_classes)
    logits_x, phi_x = _reference(net, x, mode, normalize)
    ref = class_log_prob(logits_x, y).data
    logits, acts = net.forward(xp, mode)
    d = distance(embed_activations(acts, normalize).vector, phi_x)
    hinge = T.relu(T.sub(T.sub(ref, class_log_prob(logits, y)), sigma))
    return T.add(T.neg(d), T.mul(hinge, float(lam))), d, hinge


def lagrangian_objective(net: Network, x, x_prime, y, lam: float, sigma: float, mode: str = "aug_stats",
                         normalize: str = "channel") -> Tensor:
    """Penalised objective summed over the batch (a scalar)."""
    obj, _, _ = lagrangian_terms(net, x, x_prime, y, lam, sigma, mode, normalize)
    return T.sum(obj)


# ---------------------------------------------------------------- results


@dataclass
class AttackResult:
    x: np.ndarray
    x_prime: np.ndarray
    y: np.ndarray
    lpips: np.ndarray
    slack: np.ndarray
    satisfied: np.ndarray
    iterations: np.ndarray
    lambdas: np.ndarray
    gammas: np.ndarray
    trace: dict = field(default_factory=dict)

    def diagnostics(self, ids=None) -> list[dict]:
        """One JSON-ready record per sample."""
        ids = np.arange(len(self.x_prime)) if ids is None else np.asarray(ids)
        out = []
        for i in range(len(self.x_prime)):
            out.append({
                "id": int(ids[i]),
                "label": int(self.y[i]),
                "lpips": float(self.lpips[i]),
                "constraint_slack": float(self.slack[i]),
                "satisfied": bool(self.satisfied[i]),
                "iterations": int(self.iterations[i]),
                "lambda_trace": [float(v) for v in self.lambdas[: self.iterations[i]]],
                "objective_trace": [float(v) for v in self.trace["objective"][: self.iterations[i], i]],
                "lpips_trace": [float(v) for v in self.trace["lpips"][: self.iterations[i], i]],
            })
        return out


def _prepare(net, x, params):
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    single = x.shape == net.input_shape
    if single:
        x = x[None]
    lo, hi = params.pixel_bounds
    if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
        raise ValueError("input outside pixel_bounds")
    return x, single


# ------------------------------------------------------------ positive


def fast_lagrangian_attack(net: Network, x, y, params: AttackParams | None = None, seed=0,
                           noise: np.ndarray | None = None) -> AttackResult:
    """Hard positive x' for every row of ``x`` with the network held fixed.

    ``noise`` overrides the N(0, 1) draw used for the starting point
    ``x + noise_scale * noise``; otherwise it comes from ``seed``.
    """
    params = params or AttackParams()
    x, _ = _prepare(net, x, params)
    n = x.shape[0]
    y = _check_labels(y, n, net.num_classes)
    lo, hi = params.pixel_bounds
    mode, norm = params.mode, params.normalize
    lambdas, gammas = params.lambda_schedule(), params.step_schedule()
    steps = params.steps

    trace = {k: np.zeros((steps, n)) for k in ("objective", "objective_flipped_sign", "lpips", "hinge", "slope", "step")}
    iterations = np.zeros(n, dtype=np.int64)
    with net.frozen():
        logits_x, phi_x = _reference(net, x, mode, norm)
        ref_logp = class_log_prob(logits_x, y).data
        ref_p = T.softmax(logits_x).data[np.arange(n), y]
        if noise is None:
            noise = _rng(seed).standard_normal(x.shape)
        xp = np.clip(x + params.noise_scale * noise, lo, hi)
        active = np.ones(n, dtype=bool)
        for t in range(steps):
            lam = lambdas[t]
            xt = T.Tensor(xp, requires_grad=True)
            logits, acts = net.forward(xt, mode)
            d = distance(embed_activations(acts, norm).vector, phi_x)
            hinge = T.relu(T.sub(T.sub(ref_logp, class_log_prob(logits, y)), params.sigma))
            obj = T.add(T.neg(d), T.mul(hinge, float(lam)))
            T.sum(obj).backward()
            direction = -xt.grad
            if not np.all(np.isfinite(direction)):
                raise AttackError(f"non-finite gradient at iteration {t + 1}")
            norms = np.linalg.norm(_rows(direction), axis=1)
            active &= norms > 0
            trace["objective"][t] = obj.data
            trace["objective_flipped_sign"][t] = -obj.data
            trace["lpips"][t] = d.data
            trace["hinge"][t] = hinge.data
            iterations[active] += 1
            if not active.any():
                break
            unit = direction / _bcast(np.where(norms > 0, norms, 1.0), direction)
            with T.no_grad():
                probe = T.softmax(net.forward(T.tensor(xp + params.fd_step * unit), mode)[0]).data
            slope = (ref_p - probe[np.arange(n), y]) / params.fd_step
            step = np.where(active, gammas[t] / np.maximum(np.abs(slope), params.m_floor), 0.0)
            trace["slope"][t] = slope
            trace["step"][t] = step
            base = x if params.literal_update else xp
            xp = np.where(_bcast(active, xp), np.clip(base + _bcast(step, unit) * unit, lo, hi), xp)
        xp = np.clip(xp, lo, hi)
        with T.no_grad():
            logits_f, acts_f = net.forward(T.tensor(xp), mode)
            final_lpips = distance(embed_activations(acts_f, norm).vector, phi_x).data
            slack = class_log_prob(logits_f, y).data - ref_logp + params.sigma
    return AttackResult(x=x, x_prime=xp, y=y, lpips=final_lpips, slack=slack, satisfied=slack >= 0,
                        iterations=iterations, lambdas=lambdas, gammas=gammas, trace=trace)


# ------------------------------------------------------------ negative


@dataclass
class NegativeResult:
    x: np.ndarray
    x_prime: np.ndarray
    lpips: np.ndarray
    kl: np.ndarray
    satisfied: np.ndarray
    lambdas: np.ndarray
    trace: dict = field(default_factory=dict)


def _negative_objective(net, xp_tensor, phi_x, ref_probs, lam, sigma_neg, mode, norm):
    logits, acts = net.forward(xp_tensor, mode)
    d = distance(embed_activations(acts, norm).vector, phi_x)
    p = T.clamp(T.softmax(logits), PROB_FLOOR, 1.0)
    kl = T.sum(T.mul(p, T.sub(T.log(p), np.log(np.clip(ref_probs, PROB_FLOOR, None)))), axis=1)
    hinge = T.relu(T.sub(sigma_neg, kl))
    return T.add(d, T.mul(hinge, float(lam))), d, kl


def negative_attack(net: Network, x, params: AttackParams | None = None, seed=0, noise=None,
                    max_backtracks: int = 8) -> NegativeResult:
    """Perceptually close x'' whose prediction moves by at least ``sigma_neg`` nats of KL.

    Minimises ``lpips(x, x'') + lam * max(0, sigma_neg - KL(F(x'') || F(x)))`` on
    the same multiplier schedule as the positive attack. Each step is sized so
    the linearised objective would drop to zero (a drop of at least
    ``gamma_t``), then halved until the objective does not increase, so the
    penalised objective is non-increasing at every fixed multiplier.
    """
    params = params or AttackParams()
    x, _ = _prepare(net, x, params)
    n = x.shape[0]
    lo, hi = params.pixel_bounds
    mode, norm = params.mode, params.normalize
    lambdas, gammas = params.lambda_schedule(), params.step_schedule()
    trace = {k: np.zeros((params.steps, n)) for k in ("objective", "lpips", "kl")}

    def value(xp, lam):
        with T.no_grad():
            obj, d, kl = _negative_objective(net, T.tensor(xp), phi_x, ref_probs, lam, params.sigma_neg, mode, norm)
        return obj.data, d.data, kl.data

    with net.frozen():
        logits_x, phi_x = _reference(net, x, mode, norm)
        ref_probs = T.softmax(logits_x).data
        if noise is None:
            noise = _rng(seed).standard_normal(x.shape)
        xp = np.clip(x + params.noise_scale * noise, lo, hi)
        for t in range(params.steps):
            lam = lambdas[t]
            xt = T.Tensor(xp, requires_grad=True)
            obj, d, kl = _negative_objective(net, xt, phi_x, ref_probs, lam, params.sigma_neg, mode, norm)
            T.sum(obj).backward()
            direction = -xt.grad
            if not np.all(np.isfinite(direction)):
                raise AttackError(f"non-finite gradient at iteration {t + 1}")
            trace["objective"][t], trace["lpips"][t], trace["kl"][t] = obj.data, d.data, kl.data
            norms = np.linalg.norm(_rows(direction), axis=1)
            moving = norms > 0
            if not moving.any():
                break
            unit = direction / _bcast(np.where(moving, norms, 1.0), direction)
            probe, _, _ = value(np.clip(xp + params.fd_step * unit, lo, hi), lam)
            slope = (probe - obj.data) / params.fd_step
            # aim to remove the whole current objective in one linearised step (at least gamma_t)
            target = np.maximum(gammas[t], obj.data)
            step = np.where(moving, target / np.maximum(np.abs(slope), params.m_floor), 0.0)
            pending = moving.copy()
            for _ in range(max_backtracks + 1):
                cand = np.clip(xp + _bcast(step, unit) * unit, lo, hi)
                new_obj, _, _ = value(cand, lam)
                ok = pending & (new_obj <= obj.data)
                xp = np.where(_bcast(ok, xp), cand, xp)
                pending &= ~ok
                if not pending.any():
                    break
                step = step * 0.5
        _, final_d, final_kl = value(xp, lambdas[-1])
    return NegativeResult(x=x, x_prime=xp, lpips=final_d, kl=final_kl, satisfied=final_kl >= params.sigma_neg,
                          lambdas=lambdas, trace=trace)


# ------------------------------------------------------- adaptive epsilon


@dataclass
class AdaptiveEpsState:
    """Per-sample perturbation magnitudes, aligned with ``ids``."""

    ids: np.ndarray
    eps: np.ndarray

    @classmethod
    def zeros(cls, ids) -> "AdaptiveEpsState":
        ids = np.asarray(ids, dtype=np.int64)
        return cls(ids, np.zeros(len(ids)))


def adaptive_epsilon_step(net: Network, x, weak_aug_x, state: AdaptiveEpsState, sigma: float, eta: float,
                          epsilon_max: float, params: AttackParams | None = None):
    """One signed-gradient step from the weak augmentation, then adapt each eps_i.

    ``x' = s(x) + eps_i * sign(grad_delta lpips(x, s(x) + delta))``; eps_i grows by
    ``eta`` when KL(F^(x') || F^(x)) <= sigma and shrinks by ``eta`` otherwise,
    then is clamped to ``[0, epsilon_max]``.
    """
    params = params or AttackParams()
    x, _ = _prepare(net, x, params)
    s, _ = _prepare(net, weak_aug_x, params)
    if s.shape != x.shape:
        raise ValueError("weak_aug_x must match x")
    if len(state.eps) != len(x):
        raise ValueError("state must hold one epsilon per sample")
    if np.any(state.eps < 0) or np.any(state.eps > epsilon_max + 1e-12):
        raise ValueError("state epsilons must lie in [0, epsilon_max]")
    lo, hi = params.pixel_bounds
    mode, norm = params.mode, params.normalize
    with net.frozen():
        logits_x, phi_x = _reference(net, x, mode, norm)
        st = T.Tensor(s, requires_grad=True)
        _, acts = net.forward(st, mode)
        T.sum(distance(embed_activations(acts, norm).vector, phi_x)).backward()
        grad = st.grad
        if not np.all(np.isfinite(grad)):
            raise AttackError("non-finite gradient in adaptive-epsilon step")
        x_prime = np.clip(s + _bcast(state.eps, s) * np.sign(grad), lo, hi)
        with T.no_grad():
            p_prime = T.softmax(net.forward(T.tensor(x_prime), mode)[0]).data
        p_x = T.softmax(logits_x).data
    kl = kl_divergence(sharpen(p_prime, params.sharpen, params.temperature),
                       sharpen(p_x, params.sharpen, params.temperature))
    eps = np.where(kl <= sigma, state.eps + eta, state.eps - eta)
    eps = np.clip(np.minimum(eps, epsilon_max), 0.0, None)
    return x_prime, AdaptiveEpsState(state.ids.copy(), eps)


def random_direction_baseline(x: np.ndarray, x_prime: np.ndarray, seed=0) -> np.ndarray:
    """``x + r`` with Gaussian ``r`` rescaled to ``||x' - x||`` per sample (no clipping)."""
    rng = _rng(seed)
    r = rng.standard_normal(x.shape)
    target = np.linalg.norm(_rows(x_prime - x), axis=1)
    r = r / _bcast(np.linalg.norm(_rows(r), axis=1), r) * _bcast(target, r)
    return x + r


def params_to_dict(params: AttackParams) -> dict:
    d = asdict(params)
    d["pixel_bounds"] = list(params.pixel_bounds)
    return d
