"""Finite regions of Z^d: elementary shapes, width, and exhaustions.

Distances are sup-norm throughout.  Regions carry a lexicographically sorted,
duplicate-free point array so that two constructions of the same set always
enumerate identically.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage
from scipy.signal import fftconvolve

LESS, GREATER = "<", ">"


def merge_constant(d: int) -> int:
    """Default C_d used by exhaustions (3**d)."""
    return 3 ** d


# --------------------------------------------------------------------------
# shapes and regions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ElementaryShape:
    size: int
    signs: tuple  # entries in {"<", ">", None}

    @property
    def d(self) -> int:
        return len(self.signs)

    def mask(self) -> np.ndarray:
        """Boolean occupancy of [-N,N]^d, index i <-> coordinate i - N."""
        N, d = self.size, self.d
        ax = np.arange(-N, N + 1)
        grids = np.meshgrid(*([ax] * d), indexing="ij")
        removed = np.ones(grids[0].shape, dtype=bool)
        active = False
        for g, s in zip(grids, self.signs):
            if s == LESS:
                removed &= g < 0
                active = True
            elif s == GREATER:
                removed &= g > 0
                active = True
        if not active:
            return np.ones(grids[0].shape, dtype=bool)
        return ~removed

    def offsets(self) -> np.ndarray:
        m = self.mask()
        return np.argwhere(m) - self.size

    def label(self) -> str:
        return "".join(s if s else "." for s in self.signs)


def enumerate_elementary_shapes(d: int, N: int) -> list[ElementaryShape]:
    if d < 1 or N < 1:
        raise ValueError("need d >= 1 and N >= 1")
    shapes = [ElementaryShape(N, (None,) * d)]
    if d == 1:
        return shapes
    for signs in itertools.product((None, LESS, GREATER), repeat=d):
        if sum(s is not None for s in signs) >= 2:
            shapes.append(ElementaryShape(N, signs))
    return shapes


def _sorted_unique(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.int64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if len(pts) == 0:
        return pts.reshape(0, pts.shape[1] if pts.ndim == 2 else 1)
    return np.unique(pts, axis=0)  # unique sorts lexicographically


def _is_strictly_lex_sorted(pts: np.ndarray) -> bool:
    if len(pts) < 2:
        return True
    diff = np.diff(pts, axis=0)
    nz = diff != 0
    first = np.argmax(nz, axis=1)
    lead = diff[np.arange(len(diff)), first]
    return bool(np.all(nz.any(axis=1)) and np.all(lead > 0))


@dataclass(frozen=True, eq=False)
class LatticeRegion:
    kind: str
    params: dict
    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = self.points
        if not (isinstance(pts, np.ndarray) and pts.ndim == 2 and pts.dtype == np.int64
                and _is_strictly_lex_sorted(pts)):
            pts = _sorted_unique(pts)
        object.__setattr__(self, "points", pts)
        self.points.setflags(write=False)

    @classmethod
    def explicit(cls, points) -> "LatticeRegion":
        return cls("explicit", {}, np.asarray(points))

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        return isinstance(other, LatticeRegion) and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())

    @property
    def diameter(self) -> int:
        return diam(self)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points.min(axis=0), self.points.max(axis=0)

    def _lookup(self):
        cached = self.__dict__.get("_table")
        if cached is None:
            lo, hi = self.bbox()
            table = np.full(tuple(hi - lo + 1), -1, dtype=np.int64)
            table[tuple((self.points - lo).T)] = np.arange(len(self.points))
            cached = (lo, table)
            object.__setattr__(self, "_table", cached)
        return cached

    def index_of(self, pts) -> np.ndarray:
        """Row index of each query point in ``points`` (-1 when absent)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.int64))
        if len(self.points) == 0:
            return np.full(len(pts), -1, dtype=np.int64)
        lo, table = self._lookup()
        shape = np.array(table.shape)
        rel = pts - lo
        ok = np.all((rel >= 0) & (rel < shape), axis=1)
        out = np.full(len(pts), -1, dtype=np.int64)
        out[ok] = table[tuple(rel[ok].T)]
        return out

    def contains(self, pts) -> np.ndarray:
        return self.index_of(pts) >= 0

    def minus(self, other: "LatticeRegion") -> "LatticeRegion":
        keep = ~other.contains(self.points) if len(other) else np.ones(len(self), bool)
        return LatticeRegion.explicit(self.points[keep])

    def to_json(self, with_points: bool = True) -> dict:
        out = {"kind": self.kind, "params": self.params}
        if with_points:
            out["points"] = self.points.tolist()
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, obj: dict) -> "LatticeRegion":
        kind, params = obj["kind"], obj.get("params", {})
        if kind == "elementary":
            shape = ElementaryShape(int(params["size"]), tuple(params["signs"]))
            return translate(shape, params["center"])
        if kind == "generalized":
            return generalized((params["lo"], params["hi"]), params["z"])
        if kind == "cube":
            return cube(params["center"], params["radius"])
        return cls.explicit(np.asarray(obj["points"], dtype=np.int64))


def translate(shape: ElementaryShape, center) -> LatticeRegion:
    c = np.asarray(center, dtype=np.int64).reshape(-1)
    params = {"size": shape.size, "signs": list(shape.signs), "center": c.tolist()}
    return LatticeRegion("elementary", params, shape.offsets() + c)


def cube(center, radius: int) -> LatticeRegion:
    c = np.asarray(center, dtype=np.int64).reshape(-1)
    shape = ElementaryShape(int(radius), (None,) * len(c))
    params = {"center": c.tolist(), "radius": int(radius)}
    return LatticeRegion("cube", params, shape.offsets() + c)


def rectangle(lo, hi) -> np.ndarray:
    lo = np.asarray(lo, dtype=np.int64).reshape(-1)
    hi = np.asarray(hi, dtype=np.int64).reshape(-1)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([x.ravel() for x in g], axis=1)


def generalized(R, z) -> LatticeRegion:
    """R \\ (R + z) for the rectangle R = (lo, hi), bounds inclusive."""
    lo, hi = (np.asarray(v, dtype=np.int64).reshape(-1) for v in R)
    z = np.asarray(z, dtype=np.int64).reshape(-1)
    pts = rectangle(lo, hi)
    shifted = pts - z
    inside = np.all((shifted >= lo) & (shifted <= hi), axis=1)
    params = {"lo": lo.tolist(), "hi": hi.tolist(), "z": z.tolist()}
    return LatticeRegion("generalized", params, pts[~inside])


def dist(m, region: LatticeRegion) -> float:
    if len(region) == 0:
        return np.inf
    m = np.asarray(m, dtype=np.int64).reshape(-1)
    return int(np.abs(region.points - m).max(axis=1).min())


def diam(region: LatticeRegion) -> int:
    if len(region) == 0:
        return 0
    lo, hi = region.bbox()
    return int((hi - lo).max())


# --------------------------------------------------------------------------
# width
# --------------------------------------------------------------------------

class _Grid:
    """Padded boolean occupancy grid for a point set."""

    def __init__(self, points: np.ndarray, pad: int):
        self.lo = points.min(axis=0) - pad
        shape = points.max(axis=0) - points.min(axis=0) + 1 + 2 * pad
        self.occ = np.zeros(tuple(shape), dtype=bool)
        self.idx = points - self.lo
        self.occ[tuple(self.idx.T)] = True


def _box_offsets(r: int, d: int) -> np.ndarray:
    return rectangle([-r] * d, [r] * d)


@dataclass
class WidthWitness:
    covered: np.ndarray        # bool per point of the region
    shape_index: np.ndarray    # -1 where uncovered
    centers: np.ndarray        # (P, d) centre of the covering shape


def width_witnesses(region: LatticeRegion, M: int,
                    accept: Callable[[int, np.ndarray], np.ndarray] | None = None,
                    shapes: Sequence[ElementaryShape] | None = None) -> WidthWitness:
    """For each point n find a translate E of a size-M shape with
    n in E, E inside the region and 2*dist(n, region \\ E) >= M.

    ``accept(q, centers)`` may veto candidate translates (used to demand
    that the covering block be good in the multi-scale step).
    """
    pts = region.points
    P, d = pts.shape
    shape_idx = np.full(P, -1, dtype=np.int64)
    centers = np.zeros((P, d), dtype=np.int64)
    if P == 0:
        return WidthWitness(np.zeros(0, bool), shape_idx, centers)
    lo, hi = region.bbox()
    if np.any(hi - lo + 1 < 2 * M + 1):
        return WidthWitness(np.zeros(P, bool), shape_idx, centers)
    shapes = list(shapes) if shapes is not None else enumerate_elementary_shapes(d, M)
    r = (M - 1) // 2          # points closer than M/2 must lie inside E
    pad = M + r + 1
    grid = _Grid(pts, pad)
    K = _box_offsets(r, d)
    # r-neighbourhood occupancy of every point, (P, |K|)
    nb = grid.occ[tuple((grid.idx[:, None, :] + K[None, :, :]).transpose(2, 0, 1))]
    uncovered = np.ones(P, dtype=bool)

    for q, shp in enumerate(shapes):
        qmask = shp.mask()
        qsize = int(qmask.sum())
        flip = tuple(slice(None, None, -1) for _ in range(d))
        if qmask.size <= 343:
            hits = ndimage.correlate(grid.occ.astype(np.int32), qmask.astype(np.int32),
                                     mode="constant")
        else:
            hits = np.rint(fftconvolve(grid.occ.astype(np.float64),
                                       qmask[flip].astype(np.float64), mode="same"))
        fits = hits.astype(np.int64) == qsize
        fit_centres = np.argwhere(fits)
        if len(fit_centres) == 0:
            continue
        if accept is not None:
            ok = np.asarray(accept(q, fit_centres + grid.lo), dtype=bool)
            fit_centres = fit_centres[ok]
            fits = np.zeros_like(fits)
            fits[tuple(fit_centres.T)] = True
            if len(fit_centres) == 0:
                continue
        # shape mask padded by r so neighbourhood lookups stay in range
        qpad = np.pad(qmask, r + M)
        origin = 2 * M + r  # qpad index of offset 0 from the centre
        offsets = shp.offsets()
        if len(fit_centres) <= len(offsets):
            # walk over fitting translates
            for c in fit_centres:
                cand = np.nonzero(uncovered)[0]
                if len(cand) == 0:
                    break
                rel = grid.idx[cand] - c
                inside = np.all(np.abs(rel) <= M, axis=1)
                cand, rel = cand[inside], rel[inside]
                if len(cand) == 0:
                    continue
                inq = qmask[tuple((rel + M).T)]
                cand, rel = cand[inq], rel[inq]
                if len(cand) == 0:
                    continue
                look = rel[:, None, :] + K[None, :, :] + origin
                member = qpad[tuple(look.transpose(2, 0, 1))]
                good = ~np.any(nb[cand] & ~member, axis=1)
                hit = cand[good]
                uncovered[hit] = False
                shape_idx[hit] = q
                centers[hit] = c + grid.lo
        else:
            # walk over relative offsets v = c - n with -v in Q
            for off in offsets:
                v = -off
                cand = np.nonzero(uncovered)[0]
                if len(cand) == 0:
                    break
                cpos = grid.idx[cand] + v
                sel = fits[tuple(cpos.T)]
                cand = cand[sel]
                if len(cand) == 0:
                    continue
                look = K - v + origin
                member = qpad[tuple(look.T)]
                good = ~np.any(nb[cand] & ~member[None, :], axis=1)
                hit = cand[good]
                uncovered[hit] = False
                shape_idx[hit] = q
                centers[hit] = grid.idx[hit] + v + grid.lo
        if not uncovered.any():
            break
    return WidthWitness(~uncovered, shape_idx, centers)


def has_width_at_least(region: LatticeRegion, M: int, accept=None) -> bool:
    if M < 1:
        raise ValueError("M must be positive")
    if len(region) == 0:
        return False
    return bool(width_witnesses(region, M, accept=accept).covered.all())


def width(region: LatticeRegion, M_max: int) -> int:
    """Largest M <= M_max with the width property, scanning downwards."""
    for M in range(int(M_max), 0, -1):
        if has_width_at_least(region, M):
            return M
    return 0


# --------------------------------------------------------------------------
# exhaustion
# --------------------------------------------------------------------------

class ExhaustionError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Exhaustion:
    base: LatticeRegion
    x: tuple
    M: int
    C_d: int
    shells: list          # list of LatticeRegion, nested, last == base
    raw_indices: list     # raw shell index j_k kept for each shell
    n_raw: int            # number of raw shells minus one (l tilde)

    @property
    def l(self) -> int:
        return len(self.shells) - 1

    @property
    def annuli(self) -> list[LatticeRegion]:
        out = [self.shells[0]]
        for a, b in zip(self.shells[:-1], self.shells[1:]):
            out.append(b.minus(a))
        return out

    def shell_index(self) -> np.ndarray:
        """Annulus number of each point of the base region."""
        lab = np.zeros(len(self.base), dtype=np.int64)
        for j, ann in enumerate(self.annuli):
            lab[self.base.index_of(ann.points)] = j
        return lab


def intrinsic_distance(region: LatticeRegion, x) -> np.ndarray:
    """Graph distance from x by unit sup-norm steps inside the region.

    Equals |y - x| for convex regions; larger around a removed corner.
    """
    grid = _Grid(region.points, 1)
    occ = grid.occ
    x = np.asarray(x, dtype=np.int64) - grid.lo
    dist_grid = np.full(occ.shape, -1, dtype=np.int64)
    front = np.zeros_like(occ)
    front[tuple(x)] = True
    seen = front.copy()
    step = 0
    dist_grid[front] = 0
    st = np.ones((3,) * region.d, dtype=bool)
    while front.any():
        step += 1
        nxt = ndimage.binary_dilation(front, structure=st) & occ & ~seen
        dist_grid[nxt] = step
        seen |= nxt
        front = nxt
    return dist_grid[tuple(grid.idx.T)]


def build_exhaustion(region: LatticeRegion, x, M: int, C_d: int | None = None,
                     N: int | None = None) -> Exhaustion:
    d = region.d
    C_d = merge_constant(d) if C_d is None else int(C_d)
    if N is None:
        N = int(region.params.get("size", diam(region) // 2))
    if M < 1 or 10 * M > N:
        raise ExhaustionError(f"need 1 <= M <= N/10 (M={M}, N={N})")
    x = np.asarray(x, dtype=np.int64).reshape(-1)
    if not region.contains(x[None])[0]:
        raise ExhaustionError("centre is not in the region")

    grid = _Grid(region.points, 0)
    occ = grid.occ
    xg = x - grid.lo
    s = np.zeros_like(occ)
    sl = tuple(slice(max(0, c - 2 * M), c + 2 * M + 1) for c in xg)
    s[sl] = True
    s &= occ
    raw = [s]
    total = int(occ.sum())
    while int(raw[-1].sum()) < total:
        grown = ndimage.maximum_filter(raw[-1], size=8 * M + 1, mode="constant") & occ
        raw.append(grown)
    lt = len(raw) - 1

    def as_region(mask):
        return LatticeRegion.explicit(np.argwhere(mask) + grid.lo)

    def wide(mask):
        return bool(mask.any()) and has_width_at_least(as_region(mask), M)

    kept = []
    prev = np.zeros_like(occ)
    while True:
        chosen = lt
        for j in range((kept[-1] + 1) if kept else 0, lt):
            if wide(raw[j] & ~prev) and wide(occ & ~raw[j]):
                chosen = j
                break
        kept.append(chosen)
        prev = raw[chosen]
        if chosen == lt:
            break
    merges = lt + 1 - len(kept)
    if merges > C_d:
        raise ExhaustionError(f"{merges} merges exceed C_d={C_d}")
    shells = [as_region(raw[j]) for j in kept]
    return Exhaustion(region, tuple(int(v) for v in x), int(M), C_d, shells, kept, lt)


def merge_count(ex: Exhaustion) -> int:
    return ex.n_raw + 1 - len(ex.shells)


def provable_constant(ex: Exhaustion) -> int:
    """Upper-bound constant that the merging actually guarantees.

    A point of merged annulus j lies in raw annulus j + (merges before it),
    so |y - x| <= 4jM + (2 + 4 * merges) M.
    """
    return 2 + 4 * merge_count(ex)


def check_gdist(ex: Exhaustion, metric: str = "mixed", C: float | None = None) -> np.ndarray:
    """Per-point slack of 4(j-1)M <= |y-x| <= 4jM + C M over annuli j >= 1.

    C defaults to the exhaustion's C_d. With metric="mixed" the lower bound
    uses the intrinsic distance and the upper bound the sup norm: raw shells
    grow by sup-norm dilation, so they can jump across a removed corner
    (upper bound is a sup-norm fact) but can never reach a point before a
    path inside the region does (lower bound is an intrinsic fact).
    Returns an array of (lower_slack, upper_slack); both >= 0 when the
    sandwich holds.
    """
    C = ex.C_d if C is None else C
    sup = np.abs(ex.base.points - np.asarray(ex.x)).max(axis=1)
    if metric == "sup":
        lo_d = hi_d = sup
    elif metric == "intrinsic":
        lo_d = hi_d = intrinsic_distance(ex.base, ex.x)
    elif metric == "mixed":
        lo_d, hi_d = intrinsic_distance(ex.base, ex.x), sup
    else:
        raise ValueError(f"unknown metric {metric!r}")
    lab = ex.shell_index()
    sel = lab >= 1
    j = lab[sel]
    M = ex.M
    return np.stack([lo_d[sel] - 4 * (j - 1) * M, 4 * j * M + C * M - hi_d[sel]], axis=1)
