"""Transfer matrices, Lyapunov exponents, eigenvalue counting and
eigenfunction decay for the finite-volume operators."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .equidistribution import DynamicsSpec, orbit
from .lattice import cube
from .operators import OperatorSpec, SpecError, assemble

RENORM_STRIDE = 32
RATE_INF = math.inf       # sentinel for delta-like eigenvectors


# --------------------------------------------------------------------------
# transfer matrices
# --------------------------------------------------------------------------

@dataclass
class TransferProduct:
    E: float
    x: float
    k: int
    product: np.ndarray    # renormalised 2x2 product; true product = product * exp(log_scale)
    log_scale: float

    @property
    def log_norm(self) -> float:
        return self.log_scale + math.log(np.linalg.norm(self.product, 2))

    @property
    def det_error(self) -> float:
        """Relative determinant defect |det(P) - e^{-2 log_scale}| / (|ad| + |bc|).

        The normalised product P has det e^{-2 log_scale}, which underflows
        for hyperbolic products; measuring the defect against the size of the
        two terms of ad - bc is the scale-free form of det(A_k) = 1.
        """
        (a, b), (c, d) = self.product
        target = math.exp(-2 * self.log_scale) if self.log_scale < 350 else 0.0
        return abs(a * d - b * c - target) / max(abs(a * d) + abs(b * c), 1e-300)


def _phases(x, omega, k: int, start: int = 0) -> np.ndarray:
    """Orbit phases x + j omega for j = start .. start+k-1; x may be a vector of samples."""
    j = np.arange(start, start + k, dtype=np.float64)
    if isinstance(omega, DynamicsSpec):
        return np.stack([orbit(omega, xi, np.arange(start, start + k))[:, 0] for xi in np.atleast_1d(x)], 1)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return np.mod(x[None, :] + j[:, None] * float(omega), 1.0)


def _products(E: float, x, omega, v: Callable, k: int, stride: int = RENORM_STRIDE):
    """Left-ordered products A(x+(k-1)w) ... A(x) for a vector of samples x."""
    th = _phases(x, omega, k)
    V = np.asarray(v(th.ravel()), dtype=np.float64).reshape(th.shape)
    S = th.shape[1]
    # columns of P are the images of e1, e2: P = [[a, b], [c, d]]
    a = np.ones(S); b = np.zeros(S); c = np.zeros(S); d = np.ones(S)
    logs = np.zeros(S)
    for j in range(k):
        t = E - V[j]
        a, b, c, d = t * a - c, t * b - d, a, b
        if (j + 1) % stride == 0 or j == k - 1:
            s = np.maximum(np.maximum(np.abs(a), np.abs(b)), np.maximum(np.abs(c), np.abs(d)))
            a, b, c, d = a / s, b / s, c / s, d / s
            logs += np.log(s)
    return np.stack([np.stack([a, b], -1), np.stack([c, d], -1)], -2), logs


def transfer(E: float, x: float, omega, v: Callable, k: int) -> TransferProduct:
    """k-step transfer matrix; k < 0 uses A_{-k}(x) = A_k(x - k w)^{-1}."""
    if k == 0:
        return TransferProduct(E, x, 0, np.eye(2), 0.0)
    if k > 0:
        P, ls = _products(E, x, omega, v, k)
        return TransferProduct(E, x, k, P[0], float(ls[0]))
    kk = -k
    base = _shift(x, omega, k)
    P, ls = _products(E, base, omega, v, kk)
    A = P[0]
    # inverse of an SL2 matrix is its adjugate; det(P) = exp(-2 ls)
    adj = np.array([[A[1, 1], -A[0, 1]], [-A[1, 0], A[0, 0]]])
    return TransferProduct(E, x, k, adj, float(ls[0]))


def _shift(x, omega, k: int):
    if isinstance(omega, DynamicsSpec):
        return float(orbit(omega, x, np.array([k]))[0, 0])
    return float(np.mod(x + k * float(omega), 1.0))


def true_product(tp: TransferProduct) -> np.ndarray:
    """The un-normalised product (may overflow for large log_scale)."""
    return tp.product * math.exp(tp.log_scale)


def lyapunov(E: float, omega, v: Callable, k: int, x_samples=100) -> tuple[float, float]:
    """(1/k) mean of log ||A_k(x)|| over samples, with its standard error."""
    if k < 100:
        raise ValueError("k must be at least 100")
    if np.isscalar(x_samples):
        n = int(x_samples)
        if n < 10:
            raise ValueError("need at least 10 samples")
        xs = (np.arange(n) + 0.5) / n
    else:
        xs = np.asarray(x_samples, dtype=np.float64)
        if len(xs) < 10:
            raise ValueError("need at least 10 samples")
    P, ls = _products(E, xs, omega, v, k)
    vals = (ls + np.log(np.linalg.norm(P, 2, axis=(1, 2)))) / k
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals)))


def cosine_potential(lam: float) -> Callable:
    """v(x) = 2 lam cos(2 pi x)."""
    return lambda th: 2.0 * lam * np.cos(2 * np.pi * np.asarray(th))


def schrodinger_form(spec: OperatorSpec) -> tuple[Callable, float]:
    """(v, scale) with lambda^{-1} Delta + v  =  scale^{-1} (Delta + scale v) for a 1-D
    nearest-neighbour spec; energies map as E -> scale * E."""
    if spec.d != 1 or spec.hopping.kind != "laplacian":
        raise SpecError("transfer matrices need a 1-D nearest-neighbour operator")
    lam = float(spec.coupling)
    return (lambda th: lam * spec.potential(np.asarray(th)[:, None])), lam


# --------------------------------------------------------------------------
# eigenvalue counting
# --------------------------------------------------------------------------

@dataclass
class IdsCurve:
    N: int
    x: tuple
    energies: np.ndarray
    counts: np.ndarray
    eigenvalues: np.ndarray

    def rows(self):
        return np.column_stack([self.energies, self.counts])


def _require_sa(spec: OperatorSpec):
    if not spec.self_adjoint:
        raise SpecError("eigenvalue counting requires a self-adjoint operator")


def eigenvalues(spec: OperatorSpec, x, N: int) -> np.ndarray:
    _require_sa(spec)
    R = cube(np.zeros(spec.d, dtype=np.int64), N)
    A = assemble(spec, x, 0.0, R).entries
    return np.linalg.eigvalsh(A)


def ids(spec: OperatorSpec, x, N: int, energies: Sequence[float]) -> IdsCurve:
    ev = eigenvalues(spec, x, N)
    E = np.asarray(energies, dtype=np.float64)
    cnt = np.searchsorted(ev, E, side="right") / len(ev)
    return IdsCurve(N, tuple(np.atleast_1d(x).tolist()), E, cnt, ev)


def ids_window(spec: OperatorSpec, x, N: int, E1: float, E2: float, ev: np.ndarray | None = None) -> float:
    """Normalised number of eigenvalues in (E1, E2]."""
    ev = eigenvalues(spec, x, N) if ev is None else ev
    hi = np.searchsorted(ev, E2, side="right")
    lo = np.searchsorted(ev, E1, side="right")
    return float(max(hi - lo, 0) / len(ev))


def free_ids(E) -> np.ndarray:
    """k(E) = 1 - arccos(E/2)/pi for the 1-D free Laplacian, clipped to [0, 1]."""
    E = np.asarray(E, dtype=np.float64)
    return np.where(E <= -2, 0.0, np.where(E >= 2, 1.0, 1.0 - np.arccos(np.clip(E / 2, -1, 1)) / np.pi))


def max_window_count(ev: np.ndarray, gap: float) -> int:
    """Largest number of eigenvalues in a half-open window (E, E+gap]."""
    if len(ev) == 0:
        return 0
    # an optimal window can be slid left until its right end is an eigenvalue
    j = np.arange(len(ev))
    lo = np.searchsorted(ev, ev - gap, side="right")
    return int(np.max(j + 1 - lo))


@dataclass
class ModulusFit:
    tau: float
    residual: float
    gaps: list
    counts: list
    censored: list


def ids_modulus(spec: OperatorSpec, x_samples, N: int, gaps: Sequence[float]) -> ModulusFit:
    """Fit |k(E1) - k(E2)| <= exp(-|log gap|^tau) from the worst window counts."""
    gaps = [float(g) for g in gaps]
    if len(gaps) < 4 or any(b >= a for a, b in zip(gaps, gaps[1:])):
        raise ValueError("need at least 4 strictly decreasing gaps")
    evs = [eigenvalues(spec, x, N) for x in np.atleast_1d(x_samples)]
    vol = len(evs[0])
    counts, cens = [], []
    for g in gaps:
        c = max(max_window_count(ev, g) for ev in evs) / vol
        cens.append(c == 0)
        counts.append(max(c, 1.0 / vol))
    X, Y = [], []
    for g, c in zip(gaps, counts):
        if 0 < c < 1 and abs(math.log(g)) > 0:
            X.append(math.log(abs(math.log(g))))
            Y.append(math.log(-math.log(c)))
    if len(X) < 2:
        return ModulusFit(math.nan, math.nan, gaps, counts, cens)
    coef = np.polyfit(X, Y, 1)
    res = float(np.sqrt(np.mean((np.polyval(coef, X) - np.asarray(Y)) ** 2)))
    return ModulusFit(float(coef[0]), res, gaps, counts, cens)


# --------------------------------------------------------------------------
# localisation
# --------------------------------------------------------------------------

@dataclass
class LocalizationProfile:
    eigenvalue: float
    peak: int
    rate: float
    mass: float            # |psi|^2 within radius r of the peak
    r: int


def _log_tails(d: np.ndarray, e: np.ndarray, E: float, p: int) -> np.ndarray:
    """log|psi(n)| - log|psi(p)| for a real tridiagonal eigenproblem, from the
    two boundary recursions run towards the peak (both directions grow, so the
    recursions are stable and reach far below double-precision underflow of a
    dense eigenvector)."""
    L = len(d)
    out = np.empty(L)
    left = np.zeros(p + 1)
    a, b, ls = 0.0, 1.0, 0.0
    for n in range(p):
        c = ((E - d[n]) * b - (e[n - 1] * a if n > 0 else 0.0)) / e[n]
        a, b = b, c
        s = max(abs(a), abs(b))
        a, b = a / s, b / s
        ls += math.log(s)
        left[n + 1] = ls + math.log(abs(b)) if b != 0 else -math.inf
    out[:p + 1] = left - left[p]
    right = np.zeros(L)
    a, b, ls = 0.0, 1.0, 0.0
    for n in range(L - 1, p, -1):
        c = ((E - d[n]) * b - (e[n] * a if n < L - 1 else 0.0)) / e[n - 1]
        a, b = b, c
        s = max(abs(a), abs(b))
        a, b = a / s, b / s
        ls += math.log(s)
        right[n - 1] = ls + math.log(abs(b)) if b != 0 else -math.inf
    out[p:] = right[p:] - right[p]
    return out


def _fit_rate(logpsi: np.ndarray, p: int, rmin: int) -> float:
    r = np.abs(np.arange(len(logpsi)) - p)
    m = (r >= rmin) & np.isfinite(logpsi)
    if m.sum() < 2:
        return RATE_INF
    return float(-np.polyfit(r[m], logpsi[m], 1)[0])


def localization_profiles(spec: OperatorSpec, x, N: int, r_mass: int | None = None,
                          floor: float = 1e-12) -> list[LocalizationProfile]:
    """Eigenpairs on [-N, N]^d with a decay fit of |psi| away from its peak on |n - peak| >= N/10.

    For 1-D nearest-neighbour real operators the tails are rebuilt by the
    three-term recursion; otherwise the dense eigenvector is fitted above
    ``floor`` (relative to the peak).
    """
    _require_sa(spec)
    R = cube(np.zeros(spec.d, dtype=np.int64), N)
    A = assemble(spec, x, 0.0, R).entries
    ev, V = np.linalg.eigh(A)
    rmin = max(int(math.ceil(N / 10)), 1)
    r_mass = rmin if r_mass is None else r_mass
    diag = np.real(np.diag(A))
    off = np.diag(A, 1)
    tri = spec.d == 1 and np.isrealobj(A) and np.allclose(A, np.triu(np.tril(A, 1), -1))
    offdiag_zero = np.allclose(A - np.diag(np.diag(A)), 0)
    pts = R.points
    out = []
    for k in range(len(ev)):
        psi = V[:, k]
        p = int(np.argmax(np.abs(psi)))
        dist = np.abs(pts - pts[p]).max(axis=1)
        mass = float(np.sum(np.abs(psi[dist <= r_mass]) ** 2))
        if offdiag_zero:
            rate = RATE_INF
        elif tri and np.all(off != 0):
            rate = _fit_rate(_log_tails(diag, np.real(off), float(ev[k]), p), p, rmin)
        else:
            a = np.abs(psi) / np.abs(psi[p])
            with np.errstate(divide="ignore"):
                lg = np.where(a > floor, np.log(a), -np.inf)
            r = dist
            m = (r >= rmin) & np.isfinite(lg)
            rate = float(-np.polyfit(r[m], lg[m], 1)[0]) if m.sum() >= 2 else RATE_INF
        out.append(LocalizationProfile(float(ev[k]), p, rate, mass, int(r_mass)))
    return out


def median_rate(profiles: Sequence[LocalizationProfile], middle: bool = True) -> float:
    """Median decay rate, by default over the middle half of the spectrum."""
    n = len(profiles)
    sel = profiles[n // 4: 3 * n // 4] if middle else profiles
    return float(np.median([p.rate for p in sel]))
