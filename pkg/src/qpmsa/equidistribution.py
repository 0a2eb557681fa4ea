"""Torus orbits, Diophantine scans, discrepancy and box-union hit counts.

Points of the torus are stored internally as unsigned 64-bit fixed point
numbers (units of 2**-64).  Addition and multiplication by integers are then
exact modulo 1, so the group law of every dynamics holds bit for bit and long
skew-shift orbits do not drift.  Public functions return floats in [0, 1).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

TWO64 = 1 << 64
_U = np.uint64
_SCALE53 = 2.0 ** -53


# --------------------------------------------------------------------------
# fixed point helpers
# --------------------------------------------------------------------------

def to_fixed(x) -> np.ndarray:
    """Exact fixed-point image of the float value(s) x, reduced mod 1."""
    arr = np.asarray(x, dtype=np.float64)
    flat = [int(Fraction(float(v)) * TWO64) % TWO64 for v in arr.ravel()]
    return np.array(flat, dtype=_U).reshape(arr.shape)


def from_fixed(u) -> np.ndarray:
    """Nearest double in [0, 1); values within 2**-54 of 1 wrap to 0."""
    u = np.asarray(u, dtype=_U)
    v = ((u >> _U(11)) + ((u >> _U(10)) & _U(1))) & _U((1 << 53) - 1)
    return v.astype(np.float64) * _SCALE53


def torus_norm(u) -> np.ndarray:
    """||x|| = distance to the nearest integer, from fixed point."""
    u = np.asarray(u, dtype=_U)
    v = np.minimum(u, (~u) + _U(1))  # two's complement gives 2^64 - u
    return from_fixed(v)


def _binom_mod(n: int, k: int) -> int:
    """C(n, k) mod 2^64 for any integer n (generalised binomial)."""
    c = 1
    for i in range(1, k + 1):
        c = c * (n - i + 1) // i
    return c % TWO64


# --------------------------------------------------------------------------
# dynamics
# --------------------------------------------------------------------------

KINDS = ("shift", "multi_shift", "product_shift", "skew_shift")


@dataclass(frozen=True)
class DynamicsSpec:
    kind: str
    omega: tuple
    b: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dynamics kind {self.kind!r}")
        om = tuple(float(w) for w in np.atleast_1d(self.omega))
        object.__setattr__(self, "omega", om)
        if self.kind == "shift":
            object.__setattr__(self, "b", len(om))
        elif self.kind == "multi_shift":
            object.__setattr__(self, "b", 1)
        elif self.kind == "product_shift":
            if len(om) != 2:
                raise ValueError("product_shift needs two frequencies")
            object.__setattr__(self, "b", 2)
        elif self.kind == "skew_shift":
            if len(om) != 1:
                raise ValueError("skew_shift takes a single frequency")
            if self.b < 1:
                raise ValueError("skew_shift needs b >= 1")

    @property
    def d(self) -> int:
        if self.kind == "multi_shift":
            return len(self.omega)
        if self.kind == "product_shift":
            return 2
        return 1

    def to_json(self) -> dict:
        return {"kind": self.kind, "omega": list(self.omega), "b": self.b}

    @classmethod
    def from_json(cls, obj: dict) -> "DynamicsSpec":
        return cls(obj["kind"], tuple(obj["omega"]), int(obj.get("b", 1)))


def golden() -> float:
    return (math.sqrt(5.0) - 1.0) / 2.0


def _as_index(dyn: DynamicsSpec, n) -> np.ndarray:
    n = np.asarray(n, dtype=np.int64)
    if dyn.d == 1:
        return n.reshape(-1)
    return n.reshape(-1, dyn.d)


def orbit_fixed(dyn: DynamicsSpec, x0, n) -> np.ndarray:
    """f^n(x0) in fixed point, shape (len(n), b)."""
    x0u = to_fixed(np.atleast_1d(x0)).reshape(-1)
    if len(x0u) != dyn.b:
        raise ValueError(f"x0 has {len(x0u)} coordinates, dynamics needs {dyn.b}")
    w = to_fixed(dyn.omega)
    n = _as_index(dyn, n)
    with np.errstate(over="ignore"):
        if dyn.kind == "shift":
            return x0u[None, :] + n.astype(_U)[:, None] * w[None, :]
        if dyn.kind == "multi_shift":
            # b = 1, phase sum_i n_i w_i
            acc = np.zeros(len(n), dtype=_U)
            for i in range(dyn.d):
                acc += n[:, i].astype(_U) * w[i]
            return (x0u[0] + acc)[:, None]
        if dyn.kind == "product_shift":
            return x0u[None, :] + n.astype(_U) * w[None, :]
        return _skew_orbit(x0u, w[0], n)


def _skew_orbit(x0u: np.ndarray, w, n: np.ndarray) -> np.ndarray:
    b = len(x0u)
    out = np.empty((len(n), b), dtype=_U)
    if len(n) == 0:
        return out
    lo, hi = int(n.min()), int(n.max())
    if hi - lo <= 4 * len(n) + 1024:
        # exact prefix sums over the covering range
        start = _skew_closed(x0u, w, lo)
        L = hi - lo + 1
        seq = np.empty((L, b), dtype=_U)
        with np.errstate(over="ignore"):
            seq[:, 0] = start[0] + np.arange(L, dtype=np.int64).astype(_U) * w
            for j in range(1, b):
                c = np.cumsum(seq[:-1, j - 1], dtype=_U)
                seq[0, j] = start[j]
                seq[1:, j] = start[j] + c
        return seq[n - lo]
    for r, m in enumerate(n.tolist()):
        out[r] = _skew_closed(x0u, w, m)
    return out


def _skew_closed(x0u: np.ndarray, w, n: int) -> np.ndarray:
    """x_j(n) = sum_{i<=j} C(n, j-i) x_i + C(n, j) w, exactly mod 1."""
    b = len(x0u)
    xs = [int(v) for v in x0u]
    wi = int(w)
    binom = [_binom_mod(n, k) for k in range(b + 1)]
    res = []
    for j in range(1, b + 1):
        s = binom[j] * wi
        for i in range(1, j + 1):
            s += binom[j - i] * xs[i - 1]
        res.append(s % TWO64)
    return np.array(res, dtype=_U)


def orbit(dyn: DynamicsSpec, x0, n) -> np.ndarray:
    """Orbit points f^n(x0) as floats in [0,1), shape (len(n), b)."""
    return from_fixed(orbit_fixed(dyn, x0, n))


def box_indices(lo, hi) -> np.ndarray:
    """All integer points of the box [lo, hi] (inclusive), lexicographic."""
    lo = np.atleast_1d(np.asarray(lo, dtype=np.int64))
    hi = np.atleast_1d(np.asarray(hi, dtype=np.int64))
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    g = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([v.ravel() for v in g], axis=1)
    return pts[:, 0] if len(lo) == 1 else pts


# --------------------------------------------------------------------------
# Diophantine certificates
# --------------------------------------------------------------------------

@dataclass
class DiophantineCertificate:
    omega: tuple
    kappa: float
    tau: float
    K_max: int
    worst_k: tuple
    margin: float
    condition: str = "dc"

    @property
    def valid(self) -> bool:
        return bool(self.margin >= 1.0)

    def to_json(self) -> dict:
        return {"omega": list(self.omega), "kappa": self.kappa, "tau": self.tau,
                "K_max": self.K_max, "worst_k": list(self.worst_k), "margin": self.margin,
                "condition": self.condition, "valid": self.valid}


def _dioph_scan(omega: Sequence[float], K_max: int, weight) -> tuple[float, tuple]:
    """min of ||k.omega|| * weight(|k|) over the half space of 0 < |k| <= K_max."""
    w = to_fixed(omega).reshape(-1)
    return _half_space_min(w, K_max, weight)


def _half_space_min(w: np.ndarray, K_max: int, weight) -> tuple[float, tuple]:
    b = len(w)
    k = np.arange(1, K_max + 1, dtype=np.int64)
    with np.errstate(over="ignore"):
        if b == 1:
            vals = torus_norm(k.astype(_U) * w[0]) * weight(k.astype(np.float64))
            i = int(np.argmin(vals))
            return float(vals[i]), (int(k[i]),)
        # first coordinate zero: recurse on the remaining frequencies
        best, tail_arg = _half_space_min(w[1:], K_max, weight)
        arg = (0,) + tail_arg
        tail = box_indices([-K_max] * (b - 1), [K_max] * (b - 1)).reshape(-1, b - 1)
        tphase = np.zeros(len(tail), dtype=_U)
        for i in range(b - 1):
            tphase += tail[:, i].astype(_U) * w[i + 1]
        tnorm = np.abs(tail).max(axis=1)
        block = max(1, 2_000_000 // len(tail))
        for s in range(0, K_max, block):
            k1 = k[s:s + block]
            phase = k1.astype(_U)[:, None] * w[0] + tphase[None, :]
            size = np.maximum(k1[:, None], tnorm[None, :]).astype(np.float64)
            vals = torus_norm(phase) * weight(size)
            r, c = np.unravel_index(int(np.argmin(vals)), vals.shape)
            if vals[r, c] < best:
                best = float(vals[r, c])
                arg = (int(k1[r]),) + tuple(int(v) for v in tail[c])
    return best, arg


def certify_diophantine(omega, kappa: float, tau: float | None = None,
                        K_max: int = 10_000) -> DiophantineCertificate:
    """Finite-horizon check of ||k.omega|| >= tau/|k|^kappa.

    With ``tau=None`` the largest admissible tau is returned (margin 1).
    """
    if K_max < 1:
        raise ValueError("K_max must be >= 1")
    omega = tuple(float(v) for v in np.atleast_1d(omega))
    best, k = _dioph_scan(omega, int(K_max), lambda r: r ** kappa)
    if tau is None:
        tau = best
        margin = 1.0 if best > 0 else 0.0
    else:
        margin = best / tau
    return DiophantineCertificate(omega, float(kappa), float(tau), int(K_max), k, float(margin))


def certify_strong(omega: float, kappa: float, tau: float | None = None,
                   K_max: int = 10_000) -> DiophantineCertificate:
    """Same scan with the weight k (1 + log k)^kappa (single frequency)."""
    if K_max < 1:
        raise ValueError("K_max must be >= 1")
    om = tuple(float(v) for v in np.atleast_1d(omega))
    if len(om) != 1:
        raise ValueError("strong condition is for a single frequency")
    best, k = _dioph_scan(om, int(K_max), lambda r: r * (1.0 + np.log(r)) ** kappa)
    if tau is None:
        tau = best
        margin = 1.0 if best > 0 else 0.0
    else:
        margin = best / tau
    return DiophantineCertificate(om, float(kappa), float(tau), int(K_max), k, float(margin), "strong")


# --------------------------------------------------------------------------
# discrepancy
# --------------------------------------------------------------------------

@dataclass
class OrbitStats:
    N: int
    D_N: float
    method: str
    err: float = 0.0
    hit_counts: dict = field(default_factory=dict)


def discrepancy_exact_1d(x) -> float:
    """Extreme discrepancy over all subintervals of [0,1) (sorted formula)."""
    x = np.sort(np.asarray(x, dtype=np.float64).reshape(-1))
    N = len(x)
    if N == 0:
        raise ValueError("empty sequence")
    t = np.arange(1, N + 1) / N - x
    return float(1.0 / N + t.max() - t.min())


def discrepancy_grid(points, g: int) -> tuple[float, float]:
    """Max counting defect over boxes with corners on the g-grid.

    Returns (value, err) where value <= true discrepancy <= value + err.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    N, b = pts.shape
    if N == 0:
        raise ValueError("empty sequence")
    cells = np.minimum((pts * g).astype(np.int64), g - 1)
    H = np.zeros((g,) * b, dtype=np.float64)
    np.add.at(H, tuple(cells.T), 1.0)
    H /= N
    # prefix sums along every axis except the last are used as strip sums
    P = H
    for ax in range(b - 1):
        P = np.concatenate([np.zeros_like(P.take([0], axis=ax)), np.cumsum(P, axis=ax)], axis=ax)
    best = 0.0
    grid_last = np.arange(g + 1) / g
    pair_ranges = [[(i, j) for i in range(g) for j in range(i + 1, g + 1)]] * (b - 1)
    if b == 1:
        cum = np.concatenate([[0.0], np.cumsum(H)])
        q = cum - grid_last
        return float(q.max() - q.min()), 2.0 * b / g
    if b == 2:
        # strips [i, j) on axis 0, all j at once for each i
        for i in range(g):
            strip = P[i + 1:] - P[i]                 # (g - i, g): rows j = i+1..g
            width = (np.arange(i + 1, g + 1) - i) / g
            cum = np.concatenate([np.zeros((len(strip), 1)), np.cumsum(strip, axis=1)], axis=1)
            q = cum - width[:, None] * grid_last[None, :]
            best = max(best, float((q.max(axis=1) - q.min(axis=1)).max()))
        return best, 2.0 * b / g
    for combo in itertools.product(*pair_ranges):
        strip = _strip_sum(P, combo)
        vol = float(np.prod([(j - i) / g for (i, j) in combo]))
        cum = np.concatenate([[0.0], np.cumsum(strip)])
        q = cum - vol * grid_last
        best = max(best, float(q.max() - q.min()))
    return best, 2.0 * b / g


def _strip_sum(P: np.ndarray, combo) -> np.ndarray:
    """Inclusion-exclusion over the prefix-summed leading axes."""
    k = len(combo)
    total = 0.0
    for signs in itertools.product((0, 1), repeat=k):
        idx = tuple(combo[a][1] if s else combo[a][0] for a, s in enumerate(signs))
        sgn = (-1) ** (k - sum(signs))
        total = total + sgn * P[idx]
    return total


def discrepancy(points, method: str = "exact_1d") -> OrbitStats:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(pts) == 0:
        raise ValueError("empty sequence")
    if method in ("exact", "exact_1d"):
        if pts.shape[1] != 1:
            raise ValueError("exact_1d requires b = 1")
        return OrbitStats(len(pts), discrepancy_exact_1d(pts[:, 0]), "exact_1d", 0.0)
    if method.startswith("grid"):
        g = int(method.split(":")[1]) if ":" in method else int(method[4:].strip("()") or 64)
        val, err = discrepancy_grid(pts, g)
        return OrbitStats(len(pts), val, f"grid:{g}", err)
    raise ValueError(f"unknown discrepancy method {method!r}")


@dataclass
class ExponentFit:
    exponent: float
    intercept: float
    residual: float
    N: list
    D: list


def fit_discrepancy_exponent(dyn: DynamicsSpec | None, x0, Ns: Sequence[int],
                             method: str = "exact_1d", points_fn=None) -> ExponentFit:
    """Least-squares slope of log D_N against log N."""
    Ns = [int(n) for n in Ns]
    if len(Ns) < 3 or any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ValueError("need at least three increasing values of N")
    D = []
    for N in Ns:
        pts = points_fn(N) if points_fn is not None else orbit(dyn, x0, np.arange(N))
        D.append(discrepancy(pts, method).D_N)
    lx, ly = np.log(Ns), np.log(D)
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - ly) ** 2)))
    return ExponentFit(float(coef[0]), float(coef[1]), resid, Ns, D)


# --------------------------------------------------------------------------
# box unions
# --------------------------------------------------------------------------

class BoxUnion:
    """Union of half-open axis-aligned boxes in [0,1)^b, canonicalised into
    disjoint cells of the common breakpoint grid."""

    def __init__(self, boxes: Iterable, b: int | None = None):
        boxes = [(np.atleast_1d(np.asarray(lo, float)), np.atleast_1d(np.asarray(hi, float)))
                 for lo, hi in boxes]
        if b is None:
            if not boxes:
                raise ValueError("dimension needed for an empty union")
            b = len(boxes[0][0])
        self.b = b
        cuts = []
        for ax in range(b):
            c = {0.0, 1.0}
            for lo, hi in boxes:
                c.add(float(np.clip(lo[ax], 0, 1)))
                c.add(float(np.clip(hi[ax], 0, 1)))
            cuts.append(np.array(sorted(c)))
        self.cuts = cuts
        self.cover = np.zeros(tuple(len(c) - 1 for c in cuts), dtype=bool)
        for lo, hi in boxes:
            sl = []
            for ax in range(b):
                i = np.searchsorted(cuts[ax], np.clip(lo[ax], 0, 1))
                j = np.searchsorted(cuts[ax], np.clip(hi[ax], 0, 1))
                sl.append(slice(i, j))
            self.cover[tuple(sl)] = True

    @classmethod
    def from_cells(cls, cuts, cover) -> "BoxUnion":
        obj = cls.__new__(cls)
        obj.b = len(cuts)
        obj.cuts = [np.asarray(c) for c in cuts]
        obj.cover = np.asarray(cover, dtype=bool)
        return obj

    def complement(self) -> "BoxUnion":
        return BoxUnion.from_cells(self.cuts, ~self.cover)

    def measure(self) -> float:
        widths = [np.diff(c) for c in self.cuts]
        vol = widths[0]
        for w in widths[1:]:
            vol = np.multiply.outer(vol, w)
        return float(np.sum(vol * self.cover))

    def contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        idx = [np.clip(np.searchsorted(self.cuts[ax], pts[:, ax], side="right") - 1,
                       0, len(self.cuts[ax]) - 2) for ax in range(self.b)]
        return self.cover[tuple(idx)]

    def boxes(self) -> list:
        out = []
        for cell in np.argwhere(self.cover):
            lo = [self.cuts[a][c] for a, c in enumerate(cell)]
            hi = [self.cuts[a][c + 1] for a, c in enumerate(cell)]
            out.append((lo, hi))
        return out


def count_hits(points, union: BoxUnion) -> int:
    if len(points) == 0:
        return 0
    return int(np.count_nonzero(union.contains(points)))
