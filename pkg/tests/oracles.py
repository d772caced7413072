"""Independent reference implementations used by the tests.

Nothing here goes through the autodiff tape or the package's information
measures: forward passes are explicit loops, entropies are plain Python sums.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


# ------------------------------------------------------------ derivatives


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` at ``x`` (``x`` is restored)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gf[i] = (up - down) / (2 * h)
    return g


def rel_error(g: np.ndarray, fd: np.ndarray) -> float:
    """max |g - fd| / max(max |g|, max |fd|); 0 when both vanish."""
    scale = max(np.max(np.abs(g)), np.max(np.abs(fd)))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(g - fd)) / scale)


# ------------------------------------------------------- loop forward pass


def conv_loop(x, w, b, padding):
    n, c, h, wd = x.shape
    co, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding: padding + h, padding: padding + wd] = x
    ho, wo = h + 2 * padding - k + 1, wd + 2 * padding - k + 1
    out = np.zeros((n, co, ho, wo))
    for i in range(n):
        for o in range(co):
            for r in range(ho):
                for s in range(wo):
                    out[i, o, r, s] = np.sum(xp[i, :, r: r + k, s: s + k] * w[o]) + b[o]
    return out


def forward_loop(net, x):
    """Logits and relu activations from raw parameter arrays (no dualnorm)."""
    h = np.asarray(x, dtype=np.float64)
    acts = []
    for layer, params in zip(net.layers, net.params):
        if layer.kind == "dense":
            w, b = (p.data for p in params)
            out = np.zeros((h.shape[0], w.shape[0]))
            for i in range(h.shape[0]):
                for j in range(w.shape[0]):
                    out[i, j] = sum(w[j, k] * h[i, k] for k in range(w.shape[1])) + b[j]
            h = out
        elif layer.kind == "conv2d":
            w, b = (p.data for p in params)
            h = conv_loop(h, w, b, layer.dims[3] if len(layer.dims) == 4 else 0)
        elif layer.kind == "relu":
            h = np.where(h > 0, h, 0.0)
            acts.append(h)
        elif layer.kind == "flatten":
            h = h.reshape(h.shape[0], -1)
        else:
            raise NotImplementedError(layer.kind)
    return h, acts


def embed_loop(acts):
    """Per-sample embedding: per-position channel unit norm, / sqrt(w h), flattened, concatenated."""
    n = acts[0].shape[0]
    rows = []
    for i in range(n):
        parts = []
        for a in acts:
            a = a[i]
            if a.ndim == 1:
                norm = math.sqrt(sum(v * v for v in a))
                parts.extend([0.0 if norm == 0 else v / norm for v in a])
            else:
                c, hh, ww = a.shape
                block = np.zeros_like(a)
                for r in range(hh):
                    for s in range(ww):
                        norm = math.sqrt(sum(a[ch, r, s] ** 2 for ch in range(c)))
                        for ch in range(c):
                            block[ch, r, s] = 0.0 if norm == 0 else a[ch, r, s] / norm
                parts.extend((block / math.sqrt(hh * ww)).reshape(-1).tolist())
        rows.append(parts)
    return np.array(rows)


def lpips_loop(net, x, xp):
    _, a = forward_loop(net, x)
    _, b = forward_loop(net, xp)
    ea, eb = embed_loop(a), embed_loop(b)
    return np.array([math.sqrt(sum((u - v) ** 2 for u, v in zip(ra, rb))) for ra, rb in zip(ea, eb)])


def softmax_loop(z):
    out = []
    for row in z:
        m = max(row)
        e = [math.exp(v - m) for v in row]
        s = sum(e)
        out.append([v / s for v in e])
    return np.array(out)


# ------------------------------------------------------------------- TCS


def tcs_scalar(prev, new, prev_label, c_prev, gamma_c):
    """One scalar TCS update written out term by term."""
    kl = 0.0
    for p, q in zip(prev, new):
        p, q = max(p, 1e-12), max(q, 1e-12)
        kl += p * math.log(p / q)
    p, q = max(prev[prev_label], 1e-12), max(new[prev_label], 1e-12)
    a = kl + abs(math.log(p / q))
    return gamma_c * (-a) + (1 - gamma_c) * c_prev


def select_sort(ids, c, tau_pct):
    """Full sort by (c, id), take the floor(tau% n) prefix."""
    pairs = sorted(zip(c, ids))
    k = (int(round(tau_pct * 1000)) * len(ids)) // 100000  # tau given with at most 3 decimals
    return [i for _, i in pairs[:k]]


# ------------------------------------------------------ exact information


def mi_plain(pxy) -> float:
    """I(X;Y) by direct summation over a nested-list / array table."""
    nx, ny = len(pxy), len(pxy[0])
    px = [sum(pxy[i][j] for j in range(ny)) for i in range(nx)]
    py = [sum(pxy[i][j] for i in range(nx)) for j in range(ny)]
    total = 0.0
    for i in range(nx):
        for j in range(ny):
            p = pxy[i][j]
            if p > 0:
                total += p * math.log(p / (px[i] * py[j]))
    return total


def entropy_plain(p) -> float:
    return -sum(v * math.log(v) for v in p if v > 0)


def brute_force_min_sufficient(pxy, k, tol=1e-9):
    """Enumerate all k^|X| maps; return (min I(Z;X) over sufficient maps, set of minimal partitions)."""
    nx, ny = len(pxy), len(pxy[0])
    target = mi_plain(pxy)
    best, minimal = None, set()
    scores = []
    for f in itertools.product(range(k), repeat=nx):
        pzy = [[0.0] * ny for _ in range(k)]
        for i in range(nx):
            for j in range(ny):
                pzy[f[i]][j] += pxy[i][j]
        if abs(mi_plain(pzy) - target) > tol:
            continue
        izx = entropy_plain([sum(r) for r in pzy])
        scores.append((izx, f))
        best = izx if best is None else min(best, izx)
    if best is None:
        return None, set()
    for izx, f in scores:
        if izx <= best + 1e-12:
            minimal.add(canonical_partition(f))
    return best, minimal


def canonical_partition(f):
    """Relabel a map so labels appear in first-occurrence order."""
    seen = {}
    return tuple(seen.setdefault(v, len(seen)) for v in f)
