"""Exact information measures on small discrete joint distributions.

All quantities are in nats with ``0 log 0 = 0``. Tables are dense numpy
arrays with one axis per named variable, so every identity can be checked
by direct summation.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

SUM_TOL = 1e-12
MI_TOL = 1e-9
MAX_SEARCH_ALPHABET = 8


class UnknownVariableError(KeyError):
    pass


def _names(v) -> tuple[str, ...]:
    if isinstance(v, str):
        return (v,)
    return tuple(v)


class DiscreteJoint:
    """Probability table over named finite variables."""

    def __init__(self, names: Sequence[str], table, check: bool = True):
        self.names = tuple(names)
        self.table = np.asarray(table, dtype=np.float64)
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate variable names {self.names}")
        if self.table.ndim != len(self.names):
            raise ValueError(f"table has {self.table.ndim} axes for {len(self.names)} variables")
        if check:
            if np.any(self.table < 0):
                raise ValueError("negative probability")
            if abs(self.table.sum() - 1.0) > SUM_TOL:
                raise ValueError(f"table sums to {self.table.sum()!r}, not 1")

    def __repr__(self) -> str:
        return f"DiscreteJoint({', '.join(f'{n}:{s}' for n, s in self.sizes.items())})"

    @property
    def sizes(self) -> dict[str, int]:
        return dict(zip(self.names, self.table.shape))

    def axis(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownVariableError(name) from None

    def marginal(self, variables) -> "DiscreteJoint":
        """Joint of ``variables`` (duplicates dropped, order kept)."""
        keep = list(dict.fromkeys(_names(variables)))
        axes = [self.axis(v) for v in keep]
        drop = tuple(i for i in range(len(self.names)) if i not in axes)
        t = self.table.sum(axis=drop) if drop else self.table
        remaining = [i for i in range(len(self.names)) if i in axes]
        t = np.transpose(t, [remaining.index(a) for a in axes])
        return DiscreteJoint(keep, t, check=False)

    def probs(self, variables) -> np.ndarray:
        return self.marginal(variables).table

    def drop(self, variables) -> "DiscreteJoint":
        gone = set(_names(variables))
        return self.marginal([n for n in self.names if n not in gone])

    def apply_channel(self, channel: "Channel", inputs, name: str) -> "DiscreteJoint":
        """Add ``name`` drawn from ``channel`` given the (row-major flattened) ``inputs``."""
        inputs = _names(inputs)
        if name in self.names:
            raise ValueError(f"variable {name!r} already exists")
        in_axes = [self.axis(v) for v in inputs]
        in_size = int(np.prod([self.table.shape[a] for a in in_axes]))
        if channel.matrix.shape[0] != in_size:
            raise ValueError(f"channel expects {channel.matrix.shape[0]} inputs, variables give {in_size}")
        other = [i for i in range(len(self.names)) if i not in in_axes]
        perm = other + in_axes
        t = np.transpose(self.table, perm)
        lead = t.shape[: len(other)]
        flat = t.reshape(int(np.prod(lead)) if lead else 1, in_size)
        k = channel.matrix.shape[1]
        new = (flat[:, :, None] * channel.matrix[None]).reshape(t.shape + (k,))
        inverse = np.argsort(perm).tolist() + [len(perm)]
        return DiscreteJoint(self.names + (name,), np.transpose(new, inverse), check=False)

    def derive(self, name: str, func: Callable, inputs) -> tuple["DiscreteJoint", list]:
        """Add a deterministic function of ``inputs``; returns the joint and the sorted value labels."""
        inputs = _names(inputs)
        sizes = [self.sizes[v] for v in inputs]
        cells = list(itertools.product(*[range(s) for s in sizes]))
        values = [func(*c) for c in cells]
        labels = sorted(set(values))
        index = {v: i for i, v in enumerate(labels)}
        mapping = [index[v] for v in values]
        return self.apply_channel(Channel.deterministic(mapping, len(labels)), inputs, name), labels

    def to_text(self) -> str:
        header = " ".join(f"{n}:{s}" for n, s in self.sizes.items())
        return header + "\n" + "\n".join(repr(float(p)) for p in self.table.reshape(-1)) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DiscreteJoint":
        lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
        lines = [ln for ln in lines if ln]
        if not lines:
            raise ValueError("empty joint table")
        names, sizes = [], []
        for tok in lines[0].split():
            name, _, size = tok.rpartition(":")
            if not name or not size.isdigit() or int(size) < 1:
                raise ValueError(f"bad header token {tok!r}; expected NAME:SIZE")
            names.append(name)
            sizes.append(int(size))
        values = np.array([float(v) for v in lines[1:]])
        if values.size != int(np.prod(sizes)):
            raise ValueError(f"header implies {int(np.prod(sizes))} probabilities, found {values.size}")
        return cls(names, values.reshape(sizes))

    @classmethod
    def read(cls, path) -> "DiscreteJoint":
        return cls.from_text(Path(path).read_text())


@dataclass
class Channel:
    """Row-stochastic conditional table P(output | input)."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ValueError("channel matrix must be 2-D")
        if np.any(self.matrix < 0) or np.any(np.abs(self.matrix.sum(axis=1) - 1.0) > SUM_TOL):
            raise ValueError("channel rows must be probability vectors")

    @classmethod
    def deterministic(cls, mapping: Sequence[int], k: int) -> "Channel":
        m = np.zeros((len(mapping), k))
        m[np.arange(len(mapping)), np.asarray(mapping)] = 1.0
        return cls(m)


def random_joint(sizes: Sequence[int], names: Sequence[str], rng, zero_frac: float = 0.0) -> DiscreteJoint:
    t = rng.random(tuple(sizes))
    if zero_frac > 0:
        t[rng.random(t.shape) < zero_frac] = 0.0
        if t.sum() == 0:
            t.reshape(-1)[0] = 1.0
    return DiscreteJoint(names, t / t.sum())


# ------------------------------------------------------------- measures


def _h(p: np.ndarray) -> float:
    p = p.reshape(-1)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def _clamp(v: float) -> float:
    return 0.0 if -SUM_TOL <= v < 0.0 else v


def entropy(joint: DiscreteJoint, variables) -> float:
    return _clamp(_h(joint.probs(variables)))


def conditional_entropy(joint: DiscreteJoint, variables, given) -> float:
    given = _names(given)
    if not given:
        return entropy(joint, variables)
    return _clamp(entropy(joint, _names(variables) + given) - entropy(joint, given))


def mutual_information(joint: DiscreteJoint, a, b) -> float:
    a, b = _names(a), _names(b)
    return _clamp(entropy(joint, a) + entropy(joint, b) - entropy(joint, a + b))


def conditional_mi(joint: DiscreteJoint, a, b, given) -> float:
    a, b, c = _names(a), _names(b), _names(given)
    if not c:
        return mutual_information(joint, a, b)
    return _clamp(entropy(joint, a + c) + entropy(joint, b + c) - entropy(joint, a + b + c) - entropy(joint, c))


# --------------------------------------------------- task-nuisance split


@dataclass
class NuisanceDecomposition:
    nuisance_probs: np.ndarray
    generator: np.ndarray          # generator[y, n] = x
    joint: DiscreteJoint           # over (X, Y, N)
    mi_nuisance_label: float
    residual_entropy: float        # H(X | Y, N)
    reconstruction_error: float    # max |P_XY(rebuilt) - P_XY|

    @property
    def passed(self) -> bool:
        return self.mi_nuisance_label <= SUM_TOL and self.residual_entropy <= SUM_TOL


def task_nuisance_decompose(joint: DiscreteJoint, x: str = "X", y: str = "Y", nuisance: str = "N",
                            merge_tol: float = 1e-12) -> NuisanceDecomposition:
    """Witness N independent of Y with X = d(Y, N) via a shared inverse-CDF coupling.

    N indexes the cells of the common refinement of every conditional CDF of
    X given Y; d(y, n) is the symbol whose CDF interval for y covers cell n.
    """
    pxy = joint.probs([x, y])
    nx, ny = pxy.shape
    py = pxy.sum(axis=0)
    cdfs = {}
    points = [0.0, 1.0]
    for j in range(ny):
        if py[j] <= 0:
            continue
        cdf = np.cumsum(pxy[:, j] / py[j])
        cdf[-1] = 1.0
        cdfs[j] = cdf
        points.extend(cdf.tolist())
    points = np.sort(np.array(points))
    keep = [points[0]]
    for p in points[1:]:
        if p - keep[-1] > merge_tol:
            keep.append(p)
    keep[-1] = 1.0
    edges = np.array(keep)
    mass = np.diff(edges)
    mids = (edges[:-1] + edges[1:]) / 2
    nn = len(mass)
    gen = np.zeros((ny, nn), dtype=np.int64)
    for j, cdf in cdfs.items():
        gen[j] = np.minimum(np.searchsorted(cdf, mids, side="right"), nx - 1)
    table = np.zeros((nx, ny, nn))
    for j in range(ny):
        table[gen[j], j, np.arange(nn)] += py[j] * mass
    ext = DiscreteJoint((x, y, nuisance), table / table.sum(), check=False)
    return NuisanceDecomposition(
        nuisance_probs=mass,
        generator=gen,
        joint=ext,
        mi_nuisance_label=mutual_information(ext, nuisance, y),
        residual_entropy=conditional_entropy(ext, x, (y, nuisance)),
        reconstruction_error=float(np.max(np.abs(ext.probs([x, y]) - pxy))),
    )


# --------------------------------------------- minimal sufficient search


def set_partitions(n: int, k: int) -> Iterable[tuple[int, ...]]:
    """Restricted-growth strings of length n using at most k block labels."""
    if n == 0:
        yield ()
        return
    labels = [0] * n

    def rec(i, used):
        if i == n:
            yield tuple(labels)
            return
        for v in range(min(used + 1, k)):
            labels[i] = v
            yield from rec(i + 1, max(used, v + 1))

    yield from rec(1, 1)


@dataclass
class SufficiencyEntry:
    z_map: tuple[int, ...]
    info_x: float       # I(Z ; X) = H(Z) for deterministic maps
    info_y: float
    sufficient: bool


@dataclass
class MinimalityCertificate:
    target: float                  # I(X ; Y)
    epsilon: float
    best_map: tuple[int, ...] | None
    best_info_x: float | None
    minimal_info_x: float | None   # smallest I(Z ; X) over sufficient maps
    certified: bool
    n_maps: int
    n_sufficient: int
    ledger: list[SufficiencyEntry] = field(default_factory=list)
    message: str = ""


def _map_scores(pxy: np.ndarray, maps: np.ndarray, k: int):
    onehot = np.zeros(maps.shape + (k,))
    np.put_along_axis(onehot, maps[..., None], 1.0, axis=2)
    pzy = np.einsum("mxk,xy->mky", onehot, pxy)
    pz = pzy.sum(axis=2)
    py = pxy.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        hz = -np.sum(np.where(pz > 0, pz * np.log(np.where(pz > 0, pz, 1.0)), 0.0), axis=1)
        ratio = np.where(pzy > 0, pzy / (pz[:, :, None] * py[None, None, :]), 1.0)
        izy = np.sum(np.where(pzy > 0, pzy * np.log(ratio), 0.0), axis=(1, 2))
    return np.maximum(hz, 0.0), np.maximum(izy, 0.0)


def search_min_sufficient(joint: DiscreteJoint, k: int, epsilon: float = 0.0, x: str = "X", y: str = "Y",
                          tol: float = MI_TOL) -> tuple[tuple[int, ...] | None, MinimalityCertificate]:
    """Exhaustively search deterministic maps X -> {0..k-1} for a minimal sufficient one.

    Maps are enumerated up to relabelling of the outputs (set partitions of
    the X alphabet into at most k blocks); I(f(X); Y) and I(f(X); X) are
    invariant under relabelling, so nothing is lost.
    """
    pxy = joint.probs([x, y])
    nx = pxy.shape[0]
    if nx > MAX_SEARCH_ALPHABET:
        raise ValueError(f"|X| = {nx} exceeds the exhaustive-search cap of {MAX_SEARCH_ALPHABET}")
    if not 1 <= k <= nx:
        raise ValueError(f"need 1 <= k <= |X| = {nx}, got k = {k}")
    target = mutual_information(joint, x, y)
    maps = np.array(list(set_partitions(nx, k)), dtype=np.int64).reshape(-1, nx)
    info_x, info_y = _map_scores(pxy, maps, k)
    sufficient = np.abs(info_y - target) <= tol
    order = sorted(range(len(maps)), key=lambda i: (round(float(info_x[i]), 12), tuple(maps[i])))
    ledger = [SufficiencyEntry(tuple(int(v) for v in maps[i]), float(info_x[i]), float(info_y[i]),
                               bool(sufficient[i])) for i in order]
    suff = [e for e in ledger if e.sufficient]
    if not suff:
        return None, MinimalityCertificate(target, epsilon, None, None, None, False, len(maps), 0, ledger,
                                           f"no sufficient map with k = {k}")
    best = suff[0]
    minimal = min(e.info_x for e in suff)
    certified = all(best.info_x <= e.info_x + epsilon + tol for e in suff)
    return best.z_map, MinimalityCertificate(target, epsilon, best.z_map, best.info_x, minimal, certified,
                                             len(maps), len(suff), ledger)


def certify_map(joint: DiscreteJoint, z_map: Sequence[int], epsilon: float, x: str = "X", y: str = "Y",
                tol: float = MI_TOL) -> MinimalityCertificate:
    """Check a given deterministic map for sufficiency and epsilon-minimality."""
    z_map = tuple(int(v) for v in z_map)
    k = max(z_map) + 1
    _, cert = search_min_sufficient(joint, min(max(k, 1), joint.sizes[x]), epsilon, x, y, tol)
    pxy = joint.probs([x, y])
    ix, iy = _map_scores(pxy, np.array([z_map]), k)
    ok = abs(iy[0] - cert.target) <= tol and cert.minimal_info_x is not None \
        and ix[0] <= cert.minimal_info_x + epsilon + tol
    cert.best_map, cert.best_info_x, cert.certified = z_map, float(ix[0]), bool(ok)
    return cert


# -------------------------------------------------------- theorem checks


@dataclass
class TheoremReport:
    cond_a: bool
    cond_a_slack: float            # I(X' ; Y) - I(X ; Y)
    epsilon: float                 # I(X' ; N)
    residual: float                # |I(X' ; X) - I(X' ; N) - I(X' ; Y)|
    assumption_holds: bool         # H(Y | X) <= tol

    @property
    def identity_guaranteed(self) -> bool:
        return self.assumption_holds


def check_theorem_conditions(joint: DiscreteJoint, x: str = "X", y: str = "Y", nuisance: str = "N",
                             x_aug: str = "X'", tol: float = MI_TOL) -> TheoremReport:
    slack = mutual_information(joint, x_aug, y) - mutual_information(joint, x, y)
    eps = mutual_information(joint, x_aug, nuisance)
    residual = abs(mutual_information(joint, x_aug, x) - eps - mutual_information(joint, x_aug, y))
    return TheoremReport(
        cond_a=abs(slack) <= tol,
        cond_a_slack=slack,
        epsilon=eps,
        residual=residual,
        assumption_holds=conditional_entropy(joint, y, x) <= tol,
    )


@dataclass
class SymmetryReport:
    symmetric: bool
    equal_marginals: bool
    mi_gap: float                  # I(X' ; Y) - I(X ; Y)

    @property
    def premises_hold(self) -> bool:
        return self.symmetric and self.equal_marginals

    @property
    def verdict(self) -> bool:
        return self.premises_hold and abs(self.mi_gap) <= MI_TOL


def check_symmetric_sufficiency(joint: DiscreteJoint, x: str = "X", x_aug: str = "X'", y: str = "Y") -> SymmetryReport:
    """Exchangeability of (X, X') given Y, which makes X' sufficient for Y."""
    t = joint.probs([x, x_aug, y])
    py = t.sum(axis=(0, 1))
    gap = mutual_information(joint, x_aug, y) - mutual_information(joint, x, y)
    if t.shape[0] != t.shape[1]:
        return SymmetryReport(False, False, gap)
    cond = np.where(py > 0, t / np.where(py > 0, py, 1.0), 0.0)
    symmetric = bool(np.all(np.abs(cond - np.transpose(cond, (1, 0, 2))) <= SUM_TOL))
    equal = bool(np.all(np.abs(cond.sum(axis=1) - cond.sum(axis=0)) <= SUM_TOL))
    return SymmetryReport(symmetric, equal, gap)


# --------------------------------------------------------- constructions


@dataclass
class AdditiveInstance:
    joint: DiscreteJoint           # over (Y, N, X, X')
    label_part: np.ndarray         # h1(y)
    nuisance_part: np.ndarray      # h2(n)
    x_values: list
    x_aug_values: list


def additive_instance(p_y, p_n, label_part, nuisance_part) -> AdditiveInstance:
    """X = h1(Y) + h2(N) and the nuisance-resampled X' = X - h2(N) + h2(N'), N' ~ N independent."""
    p_y, p_n = np.asarray(p_y, float), np.asarray(p_n, float)
    h1, h2 = np.asarray(label_part), np.asarray(nuisance_part)
    base = DiscreteJoint(("Y", "N", "N'"), p_y[:, None, None] * p_n[None, :, None] * p_n[None, None, :])
    j, xv = base.derive("X", lambda a, b: h1[a] + h2[b], ("Y", "N"))
    j, xav = j.derive("X'", lambda a, c: h1[a] + h2[c], ("Y", "N'"))
    return AdditiveInstance(j.drop("N'"), h1, h2, xv, xav)


def random_additive_instance(rng, max_labels: int = 4, max_nuisance: int = 4) -> AdditiveInstance:
    """Random instance whose label is recoverable from X (H(Y | X) = 0)."""
    ny = int(rng.integers(2, max_labels + 1))
    nn = int(rng.integers(2, max_nuisance + 1))
    h2 = rng.integers(0, 3 * nn, size=nn)
    spread = int(h2.max()) + 1
    h1 = np.arange(ny) * spread
    p_y = rng.dirichlet(np.ones(ny))
    p_n = rng.dirichlet(np.ones(nn))
    return additive_instance(p_y, p_n, h1, h2)


def label_function(joint: DiscreteJoint, x: str = "X", y: str = "Y") -> np.ndarray:
    """Table-lookup classifier pi(x) = argmax_y P(y | x) (-1 off the support)."""
    pxy = joint.probs([x, y])
    return np.where(pxy.sum(axis=1) > 0, pxy.argmax(axis=1), -1)


def check_nuisance_invariance(inst: AdditiveInstance) -> bool:
    """Changing the nuisance never changes the class: pi(h1(y) + h2(n)) = y on the support."""
    pi = label_function(inst.joint)
    index = {v: i for i, v in enumerate(inst.x_values)}
    py = inst.joint.probs("Y")
    pn = inst.joint.probs("N")
    for yv in range(len(inst.label_part)):
        if py[yv] <= 0:
            continue
        for n1, n2 in itertools.product(range(len(inst.nuisance_part)), repeat=2):
            if pn[n1] <= 0 or pn[n2] <= 0:
                continue
            x1 = index[inst.label_part[yv] + inst.nuisance_part[n1]]
            x2 = index[inst.label_part[yv] + inst.nuisance_part[n2]]
            if not (pi[x1] == pi[x2] == yv):
                return False
    return True


def nuisance_recoverable(inst: AdditiveInstance) -> float:
    """H(h2(N) | X); zero when the nuisance part can be read off the observation."""
    h2 = inst.nuisance_part
    j, _ = inst.joint.derive("H2", lambda n: h2[n], "N")
    return conditional_entropy(j, "H2", "X")


def symmetric_instance(rng, nx: int = 4, ny: int = 3) -> DiscreteJoint:
    """Random (X, X', Y) with P(x, x' | y) symmetric in (x, x')."""
    py = rng.dirichlet(np.ones(ny))
    t = np.zeros((nx, nx, ny))
    for j in range(ny):
        a = rng.random((nx, nx))
        s = a + a.T
        t[:, :, j] = py[j] * s / s.sum()
    return DiscreteJoint(("X", "X'", "Y"), t / t.sum())


# ---------------------------------------------------------------- suite


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)


def verify_suite(seed: int = 0, joints: Sequence[tuple[str, DiscreteJoint]] = (), n_random: int = 50) -> list[CheckResult]:
    """Run the lemma/theorem checks on built-in constructions plus supplied tables."""
    rng = np.random.default_rng(seed)
    results = []

    worst_chain = 0.0
    min_value = 0.0
    for _ in range(n_random):
        sizes = rng.integers(2, 5, size=3)
        j = random_joint(sizes, ("A", "B", "C"), rng, zero_frac=0.2)
        lhs = mutual_information(j, "A", ("B", "C"))
        rhs = mutual_information(j, "A", "B") + conditional_mi(j, "A", "C", "B")
        worst_chain = max(worst_chain, abs(lhs - rhs))
        min_value = min(min_value, lhs, entropy(j, "A"), conditional_mi(j, "A", "C", "B"))
    results.append(CheckResult("chain_rule", worst_chain <= 1e-10, {"max_error": worst_chain}))
    results.append(CheckResult("non_negativity", min_value >= 0.0, {"min_value": min_value}))

    worst = {"nuisance_mi": 0.0, "residual_entropy": 0.0}
    for _ in range(n_random):
        j = random_joint(rng.integers(2, 6, size=2), ("X", "Y"), rng, zero_frac=0.2)
        dec = task_nuisance_decompose(j)
        worst["nuisance_mi"] = max(worst["nuisance_mi"], dec.mi_nuisance_label)
        worst["residual_entropy"] = max(worst["residual_entropy"], dec.residual_entropy)
    results.append(CheckResult("task_nuisance_decomposition", max(worst.values()) <= SUM_TOL, worst))

    slack = eps = resid = 0.0
    invariant = recoverable = True
    for _ in range(n_random):
        inst = random_additive_instance(rng)
        rep = check_theorem_conditions(inst.joint)
        slack, eps, resid = max(slack, abs(rep.cond_a_slack)), max(eps, rep.epsilon), max(resid, rep.residual)
        invariant &= check_nuisance_invariance(inst)
        recoverable &= nuisance_recoverable(inst) <= MI_TOL
    results.append(CheckResult("additive_resampling_conditions", slack <= MI_TOL and eps <= MI_TOL and resid <= MI_TOL,
                               {"max_cond_a_slack": slack, "max_epsilon": eps, "max_residual": resid}))
    results.append(CheckResult("nuisance_change_keeps_class", bool(invariant), {}))
    results.append(CheckResult("nuisance_part_recoverable", bool(recoverable), {}))

    sym_ok = True
    for _ in range(n_random):
        rep = check_symmetric_sufficiency(symmetric_instance(rng))
        sym_ok &= rep.verdict
    results.append(CheckResult("symmetric_augmentation_sufficient", bool(sym_ok), {}))

    ny, nn = 3, 2
    p = rng.dirichlet(np.ones(ny * nn)).reshape(ny, nn)
    table = np.zeros((ny * nn, ny))
    for a in range(ny):
        for b in range(nn):
            table[a * nn + b, a] = p[a, b]
    j = DiscreteJoint(("X", "Y"), table)
    best, cert = search_min_sufficient(j, ny)
    expected = mutual_information(j, "X", "Y")
    results.append(CheckResult("projection_is_minimal_sufficient",
                               best is not None and cert.certified and abs(cert.best_info_x - expected) <= MI_TOL,
                               {"best_map": list(best or ()), "info_x": cert.best_info_x, "target": expected}))

    for name, joint in joints:
        results.extend(_check_user_joint(name, joint))
    return results


def _check_user_joint(name: str, joint: DiscreteJoint) -> list[CheckResult]:
    out = []
    total = float(joint.table.sum())
    out.append(CheckResult(f"{name}:normalized", abs(total - 1.0) <= SUM_TOL, {"sum": total}))
    names = set(joint.names)
    if {"X", "Y"} <= names:
        dec = task_nuisance_decompose(joint)
        out.append(CheckResult(f"{name}:task_nuisance_decomposition", dec.passed,
                               {"nuisance_mi": dec.mi_nuisance_label, "residual_entropy": dec.residual_entropy,
                                "nuisance_size": len(dec.nuisance_probs)}))
        if joint.sizes["X"] <= MAX_SEARCH_ALPHABET:
            k = joint.sizes["Y"] if joint.sizes["Y"] <= joint.sizes["X"] else joint.sizes["X"]
            best, cert = search_min_sufficient(joint, k)
            out.append(CheckResult(f"{name}:min_sufficient_search", True,
                                   {"best_map": list(best) if best else None, "info_x": cert.best_info_x,
                                    "target": cert.target, "n_sufficient": cert.n_sufficient,
                                    "message": cert.message}))
    if {"X", "Y", "N", "X'"} <= names:
        rep = check_theorem_conditions(joint)
        out.append(CheckResult(f"{name}:theorem_conditions", rep.cond_a,
                               {"cond_a_slack": rep.cond_a_slack, "epsilon": rep.epsilon,
                                "residual": rep.residual, "identity_guaranteed": rep.identity_guaranteed}))
    if {"X", "X'", "Y"} <= names:
        rep = check_symmetric_sufficiency(joint)
        out.append(CheckResult(f"{name}:symmetric_sufficiency", True,
                               {"premises_hold": rep.premises_hold, "mi_gap": rep.mi_gap, "verdict": rep.verdict}))
    return out
