"""Per-fold angle extraction from a glottis mask and the multi-channel
left/right angle series built from it.

Per frame: extreme vertices U/D/L/R, centre C, midline C->D, N-1 levels
along the midline chord, lateral intersections L_k/R_k by ray marching, a
joint quadratic fit of those points in a midline-aligned frame whose vertex
corrects the bottom point, and finally the angles L_k-D'-C and C-D'-R_k.

Points are ``(x, y)`` in pixels with ``y`` pointing down. Mask membership
of a sub-pixel point is decided by the pixel whose centre is nearest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import AngleSet, GlottisMask, Point2, SeriesChannel, series_to_csv
from .errors import (AllFramesDegenerate, BadParams, CoincidentPoints,
                     DegeneracyError, DegenerateMidline, FitDegenerate,
                     LevelOutsideMask, MaskTooSmall)
from .masks import MaskSequence

_TIE = 1e-6


@dataclass(frozen=True)
class GeometryConfig:
    """``vertex_frame`` selects how U/D/L/R are found: ``"principal"``
    averages the boundary near each extreme along the mask's principal axes
    (rotation-equivariant), ``"image"`` takes single extreme pixels in raw
    image x/y.

    A quadratic fit is rejected (fallback to the uncorrected midline) when
    ``|a| < fit_eps`` or when its curvature over the C-D distance,
    ``|a| * |CD|``, is below ``min_curvature``.
    """

    n_levels: int = 10
    ray_step: float = 0.5
    min_area: int = 20
    fit_eps: float = 1e-6
    min_curvature: float = 0.1
    vertex_frame: str = "principal"
    isotropy_tol: float = 0.05
    support_band: float = 2.0

    def __post_init__(self):
        if self.n_levels < 2:
            raise BadParams("n_levels must be >= 2")
        if not self.ray_step > 0:
            raise BadParams("ray_step must be positive")
        if not self.support_band > 0:
            raise BadParams("support_band must be positive")
        if self.vertex_frame not in ("principal", "image"):
            raise BadParams(f"unknown vertex_frame {self.vertex_frame!r}")


@dataclass(frozen=True)
class Level:
    k: int
    center: Point2
    left: Point2 | None
    right: Point2 | None

    @property
    def usable(self) -> bool:
        return self.left is not None and self.right is not None


@dataclass(frozen=True)
class Correction:
    gamma: float
    fit_coeffs: tuple | None
    D_q: Point2
    D_prime: Point2
    fallback: bool
    reason: str | None = None


@dataclass(frozen=True)
class FoldGeometry:
    U: Point2 | None = None
    D: Point2 | None = None
    L: Point2 | None = None
    R: Point2 | None = None
    C: Point2 | None = None
    gamma: float | None = None
    levels: tuple = ()
    D_q: Point2 | None = None
    D_prime: Point2 | None = None
    angles: AngleSet | None = None
    fit_coeffs: tuple | None = None
    fit_fallback: bool = False
    fit_reason: str | None = None
    degenerate: bool = False
    reason: str | None = None
    n_levels: int = 10

    @property
    def midline_direction(self) -> np.ndarray | None:
        """Unit vector C -> D'."""
        if self.C is None or self.D_prime is None:
            return None
        d = self.D_prime.as_array() - self.C.as_array()
        return d / np.linalg.norm(d)

    def to_dict(self) -> dict:
        p = lambda q: None if q is None else q.to_list()
        return {
            "degenerate": self.degenerate,
            "reason": self.reason,
            "n_levels": self.n_levels,
            "U": p(self.U), "D": p(self.D), "L": p(self.L), "R": p(self.R), "C": p(self.C),
            "gamma_deg": self.gamma,
            "levels": [{"k": lv.k, "C_k": p(lv.center), "L_k": p(lv.left), "R_k": p(lv.right)}
                       for lv in self.levels],
            "fit_coeffs": None if self.fit_coeffs is None else list(self.fit_coeffs),
            "fit_fallback": self.fit_fallback,
            "fit_reason": self.fit_reason,
            "D_q": p(self.D_q),
            "D_prime": p(self.D_prime),
            "angles": None if self.angles is None else {
                "left": [_json_num(a) for a in self.angles.left],
                "right": [_json_num(a) for a in self.angles.right]},
        }


def _json_num(v):
    return None if not np.isfinite(v) else float(v)


# -- raster helpers -----------------------------------------------------------

def inside(mask: GlottisMask, pts) -> np.ndarray:
    """Membership of ``(..., 2)`` points via the nearest pixel centre."""
    pts = np.asarray(pts, dtype=float)
    ix = np.floor(pts[..., 0] + 0.5).astype(np.int64)
    iy = np.floor(pts[..., 1] + 0.5).astype(np.int64)
    ok = (ix >= 0) & (iy >= 0) & (ix < mask.width) & (iy < mask.height)
    out = np.zeros(pts.shape[:-1], dtype=bool)
    out[ok] = mask.pixels[iy[ok], ix[ok]]
    return out


def _max_len(mask):
    return math.hypot(mask.width, mask.height) + 2.0


def _refine(mask: GlottisMask, p_in, p_out, iters=16) -> np.ndarray:
    """Bisect each inside/outside sample pair down to the mask boundary,
    keeping the inside end."""
    p_in = np.array(p_in, dtype=float)
    p_out = np.array(p_out, dtype=float)
    for _ in range(iters):
        mid = (p_in + p_out) / 2
        ins = inside(mask, mid)
        p_in[ins] = mid[ins]
        p_out[~ins] = mid[~ins]
    return p_in


def march(mask: GlottisMask, origins, direction, step) -> np.ndarray:
    """Boundary point of the in-mask run that starts at each origin.

    Samples every ``step`` pixels, takes the last in-mask sample and refines
    it toward the first outside sample by bisection. ``origins`` is
    ``(K, 2)``; rows whose origin lies outside the mask come back as NaN.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    direction = np.asarray(direction, dtype=float)
    ts = np.arange(0.0, _max_len(mask) + step, step)
    pts = origins[:, None, :] + ts[None, :, None] * direction
    ins = inside(mask, pts)
    out = np.full_like(origins, np.nan)
    # argmin on bools finds the first outside sample (the grid always ends outside)
    first_out = np.argmin(ins, axis=1)
    rows = np.flatnonzero(ins[:, 0])
    if rows.size:
        last = pts[rows, first_out[rows] - 1]
        out[rows] = _refine(mask, last, pts[rows, first_out[rows]])
    return out


def clip_line(mask: GlottisMask, point, direction, step) -> tuple[np.ndarray, np.ndarray] | None:
    """Outermost mask boundary points on the full line through ``point``:
    ``(end in -direction, end in +direction)``."""
    n = int(math.ceil(_max_len(mask) / step))
    ts = np.arange(-n, n + 1) * step
    d = np.asarray(direction, float)
    pts = np.asarray(point, float) + ts[:, None] * d
    idx = np.flatnonzero(inside(mask, pts))
    if idx.size == 0:
        return None
    outer = np.clip([idx[0] - 1, idx[-1] + 1], 0, len(pts) - 1)
    ends = _refine(mask, pts[[idx[0], idx[-1]]], pts[outer])
    return ends[0], ends[1]


def _left_normal(axis) -> np.ndarray:
    """Unit normal on the side where ``cross(axis, v) > 0``."""
    return np.array([-axis[1], axis[0]])


def _rotation(gamma_rad) -> np.ndarray:
    c, s = math.cos(gamma_rad), math.sin(gamma_rad)
    return np.array([[c, -s], [s, c]])


# -- per-frame steps ------------------------------------------------------------

def principal_axes(mask: GlottisMask, isotropy_tol=0.05) -> tuple[np.ndarray, np.ndarray]:
    """``(down_axis, left_normal)`` of the mask's pixel distribution.

    The major axis is oriented to point down (then right); nearly isotropic
    masks fall back to the image axes.
    """
    ys, xs = np.nonzero(mask.pixels)
    pts = np.column_stack([xs, ys]).astype(float)
    cov = np.cov(pts, rowvar=False, bias=True) if len(pts) > 1 else np.zeros((2, 2))
    evals, evecs = np.linalg.eigh(cov)
    if evals.sum() <= 0 or (evals[1] - evals[0]) / evals.sum() < isotropy_tol:
        u = np.array([0.0, 1.0])
    else:
        u = evecs[:, 1]
        u = np.where(np.abs(u) < 1e-9, 0.0, u)
        u = u / np.linalg.norm(u)
        if u[1] < 0 or (u[1] == 0 and u[0] < 0):
            u = -u
    return u, _left_normal(u)


def support_points(mask: GlottisMask, direction, normal, step: float, band: float) -> np.ndarray:
    """Boundary points within ``band`` pixels of the mask's extreme along
    ``direction``.

    Lines parallel to ``direction`` are cast at offsets ``(i + 1/2) * step``
    from the centroid along ``normal`` (symmetric, and never on a pixel-centre
    tie for integral or half-integral centroids); each contributes its
    outermost in-mask point, refined to the pixel edge.
    """
    d = np.asarray(direction, float)
    nrm = np.asarray(normal, float)
    ys, xs = np.nonzero(mask.pixels)
    pts = np.column_stack([xs, ys]).astype(float)
    c = pts.mean(axis=0)
    proj = (pts - c) @ d
    # farthest reach of any pixel square along d
    reach = proj.max() + 0.5 * (abs(d[0]) + abs(d[1]))
    near = proj >= reach - band - 3.0
    off = (pts[near] - c) @ nrm
    lo = int(math.floor(off.min() / step - 0.5)) - 2
    hi = int(math.ceil(off.max() / step - 0.5)) + 2
    offs = (np.arange(lo, hi + 1) + 0.5) * step
    ts = reach + step - np.arange(int(math.ceil((band + 4.0) / step)) + 1) * step
    grid = c + offs[:, None, None] * nrm + ts[None, :, None] * d
    ins = inside(mask, grid)
    rows = np.flatnonzero(ins.any(axis=1))
    first = np.argmax(ins[rows], axis=1)
    ends = _refine(mask, grid[rows, first], grid[rows, first - 1])
    pr = (ends - c) @ d
    return ends[pr >= pr.max() - band]


def extract_vertices(mask: GlottisMask, cfg: GeometryConfig = GeometryConfig()):
    """Top, bottom, left and right vertices ``(U, D, L, R)``.

    ``image`` frame: U is the glottis pixel with minimal y (ties: minimal
    x), D maximal y (ties: minimal x), L minimal x (ties: minimal y), R
    maximal x (ties: minimal y).

    ``principal`` frame: each vertex is the mean of the boundary points
    lying within ``support_band`` pixels of the extreme along the major axis
    (U up, D down) or the minor axis (L on the left-normal side). Nearly
    isotropic masks use the image axes.
    """
    area = mask.area()
    if area < cfg.min_area:
        raise MaskTooSmall(f"mask area {area} < {cfg.min_area}")
    if cfg.vertex_frame == "image":
        ys, xs = np.nonzero(mask.pixels)
        x, y = xs.astype(float), ys.astype(float)

        def pick(primary, secondary):
            cand = np.flatnonzero(primary <= primary.min() + _TIE)
            i = cand[np.argmin(secondary[cand])]
            return Point2(float(x[i]), float(y[i]))

        return pick(y, x), pick(-y, x), pick(x, y), pick(-x, y)
    u, ell = principal_axes(mask, cfg.isotropy_tol)
    found = [support_points(mask, d, n, cfg.ray_step, cfg.support_band).mean(axis=0)
             for d, n in ((-u, ell), (u, ell), (ell, u), (-ell, u))]
    return tuple(Point2.of(p) for p in found)


def midline(U: Point2, D: Point2, L: Point2, R: Point2) -> tuple[Point2, np.ndarray]:
    """Centre as the mean of the four vertices and the unit direction C -> D."""
    c = (U.as_array() + D.as_array() + L.as_array() + R.as_array()) / 4.0
    d = D.as_array() - c
    n = float(np.linalg.norm(d))
    if n < 1.0:
        raise DegenerateMidline(f"|C - D| = {n:.3f} px < 1 px")
    return Point2.of(c), d / n


def level_points(mask: GlottisMask, C: Point2, D: Point2, axis, cfg: GeometryConfig = GeometryConfig()) -> list[Level]:
    axis = np.asarray(axis, dtype=float)
    clipped = clip_line(mask, C.as_array(), axis, cfg.ray_step)
    if clipped is None:
        raise DegenerateMidline("midline does not meet the mask")
    s0, s1 = clipped
    N = cfg.n_levels
    ks = np.arange(1, N)
    centers = s0 + (ks[:, None] / N) * (s1 - s0)
    ell = _left_normal(axis)
    lefts = march(mask, centers, ell, cfg.ray_step)
    rights = march(mask, centers, -ell, cfg.ray_step)
    levels = []
    for i, k in enumerate(ks):
        if np.isnan(lefts[i, 0]):
            levels.append(Level(int(k), Point2.of(centers[i]), None, None))
        else:
            levels.append(Level(int(k), Point2.of(centers[i]), Point2.of(lefts[i]), Point2.of(rights[i])))
    return levels


def fit_quadratic(x, y) -> tuple[float, float, float]:
    """Least-squares ``y = a x^2 + b x + c`` via orthogonal factorisation."""
    x = np.asarray(x, dtype=float)
    A = np.column_stack([x * x, x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, np.asarray(y, dtype=float), rcond=None)
    return float(coef[0]), float(coef[1]), float(coef[2])


def parabola_vertex(a, b, c) -> tuple[float, float]:
    x = -b / (2.0 * a)
    return x, a * x * x + b * x + c


def gamma_for(axis) -> float:
    """Rotation (degrees, counter-clockwise in x/y coordinates) taking
    ``axis`` onto ``(0, 1)``."""
    return math.degrees(math.pi / 2 - math.atan2(axis[1], axis[0]))


def quadratic_correction(levels: Sequence[Level], C: Point2, D: Point2, axis,
                         mask: GlottisMask | None = None,
                         cfg: GeometryConfig = GeometryConfig()) -> Correction:
    """Fit a parabola to all usable L_k/R_k in the midline-aligned frame and
    move the bottom point to its vertex.

    On a rejected fit D_q falls back to D. D' is the last in-mask sample
    marching from C toward D_q (D_q itself when no mask is given).
    """
    axis = np.asarray(axis, dtype=float)
    gamma = gamma_for(axis)
    rot = _rotation(math.radians(gamma))
    c = C.as_array()
    pts = [p.as_array() for lv in levels if lv.usable for p in (lv.left, lv.right)]
    coeffs, reason = None, None
    if len(pts) < 3:
        reason = "fewer than 3 usable points"
    else:
        local = (np.array(pts) - c) @ rot.T
        a, b, q0 = fit_quadratic(local[:, 0], local[:, 1])
        coeffs = (a, b, q0)
        scale = float(np.linalg.norm(D.as_array() - c))
        if abs(a) < cfg.fit_eps:
            reason = f"|a| = {abs(a):.3g} < fit_eps"
        elif abs(a) * scale < cfg.min_curvature:
            reason = f"curvature {abs(a) * scale:.3g} < min_curvature"
        else:
            vx, vy = parabola_vertex(a, b, q0)
            if vy <= 0:
                reason = "vertex not beyond C toward D"
            else:
                dq = c + rot.T @ np.array([vx, vy])
    if reason is not None:
        dq = D.as_array()
    direction = dq - c
    n = float(np.linalg.norm(direction))
    if n < 1e-9:
        raise DegenerateMidline("corrected bottom point coincides with C")
    if mask is None:
        d_prime = dq
    else:
        hit = march(mask, c, direction / n, cfg.ray_step)[0]
        if np.isnan(hit[0]):
            raise DegenerateMidline("centre C lies outside the mask")
        d_prime = hit
    return Correction(gamma, coeffs, Point2.of(dq), Point2.of(d_prime), reason is not None, reason)


def angle_at(vertex, a, b) -> float:
    """Angle in degrees at ``vertex`` between rays to ``a`` and ``b``."""
    u = np.asarray(a, float) - np.asarray(vertex, float)
    v = np.asarray(b, float) - np.asarray(vertex, float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < 1e-9 or nv < 1e-9:
        raise CoincidentPoints("angle ray of zero length")
    cosang = float(np.dot(u, v) / (nu * nv))
    return math.degrees(math.acos(max(-1.0, min(1.0, cosang))))


def glottal_angles(levels: Sequence[Level], C: Point2, D_prime: Point2) -> AngleSet:
    """Angles L_k-D'-C (left) and C-D'-R_k (right); NaN for skipped levels."""
    dp, c = D_prime.as_array(), C.as_array()
    if np.linalg.norm(c - dp) < 1e-9:
        raise CoincidentPoints("D' coincides with C")
    left, right = [], []
    for lv in levels:
        if not lv.usable:
            left.append(np.nan)
            right.append(np.nan)
            continue
        left.append(angle_at(dp, lv.left.as_array(), c))
        right.append(angle_at(dp, c, lv.right.as_array()))
    return AngleSet(np.array(left), np.array(right))


def analyze_frame(mask: GlottisMask, cfg: GeometryConfig = GeometryConfig()) -> FoldGeometry:
    """Run every step on one mask; degeneracies come back as flagged data."""
    partial: dict = {"n_levels": cfg.n_levels}
    try:
        U, D, L, R = extract_vertices(mask, cfg)
        partial.update(U=U, D=D, L=L, R=R)
        C, axis = midline(U, D, L, R)
        partial["C"] = C
        levels = level_points(mask, C, D, axis, cfg)
        partial["levels"] = tuple(levels)
        if not any(lv.usable for lv in levels):
            raise LevelOutsideMask("no level centre lies inside the mask")
        corr = quadratic_correction(levels, C, D, axis, mask, cfg)
        partial.update(gamma=corr.gamma, D_q=corr.D_q, D_prime=corr.D_prime,
                       fit_coeffs=corr.fit_coeffs, fit_fallback=corr.fallback, fit_reason=corr.reason)
        angles = glottal_angles(levels, C, corr.D_prime)
    except DegeneracyError as exc:
        return FoldGeometry(degenerate=True, reason=type(exc).__name__, **partial)
    return FoldGeometry(angles=angles, **partial)


# -- sequences ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VFDynSeries:
    left: list
    right: list
    frame_validity: np.ndarray
    n_levels: int
    geometries: list = field(default_factory=list, repr=False)

    @property
    def frames(self) -> int:
        return len(self.frame_validity)

    def left_matrix(self) -> np.ndarray:
        return np.array([c.values for c in self.left])

    def right_matrix(self) -> np.ndarray:
        return np.array([c.values for c in self.right])

    def channels(self) -> list[SeriesChannel]:
        return list(self.left) + list(self.right)

    def mirrored(self) -> "VFDynSeries":
        """Swap left and right channels (what a horizontally mirrored input gives)."""
        L = [SeriesChannel(f"L{i + 1}", c.values) for i, c in enumerate(self.right)]
        R = [SeriesChannel(f"R{i + 1}", c.values) for i, c in enumerate(self.left)]
        return VFDynSeries(L, R, self.frame_validity, self.n_levels)

    def to_csv(self, gaw: SeriesChannel | None = None) -> str:
        extra = {}
        if gaw is not None:
            extra["GAW"] = gaw.values
        extra["valid"] = self.frame_validity
        return series_to_csv(self.channels(), extra)

    @classmethod
    def from_columns(cls, cols: dict) -> "VFDynSeries":
        left = sorted((k for k in cols if k[:1] == "L" and k[1:].isdigit()), key=lambda k: int(k[1:]))
        right = sorted((k for k in cols if k[:1] == "R" and k[1:].isdigit()), key=lambda k: int(k[1:]))
        if not left or len(left) != len(right):
            raise BadParams("series needs matching L1..Lk and R1..Rk columns")
        n = len(cols[left[0]])
        valid = cols["valid"] != 0 if "valid" in cols else np.ones(n, dtype=bool)
        return cls([SeriesChannel(k, cols[k]) for k in left], [SeriesChannel(k, cols[k]) for k in right],
                   np.asarray(valid, dtype=bool), len(left) + 1)


def _hold(values: np.ndarray) -> np.ndarray:
    """Carry the last finite value forward; leading gaps take the first one."""
    v = values.copy()
    finite = np.flatnonzero(np.isfinite(v))
    if finite.size == 0:
        return v
    v[:finite[0]] = v[finite[0]]
    last = v[finite[0]]
    for i in range(finite[0], len(v)):
        if np.isfinite(v[i]):
            last = v[i]
        else:
            v[i] = last
    return v


def vfdyn(seq: MaskSequence | Sequence[GlottisMask], cfg: GeometryConfig = GeometryConfig(),
          geometries: Sequence[FoldGeometry] | None = None) -> VFDynSeries:
    """Left and right angle channels per level across the sequence.

    Degenerate frames are flagged invalid and hold the previous valid value
    (leading ones take the first valid value), as do individual levels
    that could not be measured.
    """
    masks = seq.masks if isinstance(seq, MaskSequence) else list(seq)
    geoms = list(geometries) if geometries is not None else [analyze_frame(m, cfg) for m in masks]
    valid = np.array([not g.degenerate for g in geoms], dtype=bool)
    if not valid.any():
        raise AllFramesDegenerate(f"all {len(geoms)} frames are degenerate")
    n = cfg.n_levels - 1
    left = np.full((n, len(geoms)), np.nan)
    right = np.full((n, len(geoms)), np.nan)
    for t, g in enumerate(geoms):
        if not g.degenerate:
            left[:, t] = g.angles.left
            right[:, t] = g.angles.right
    return VFDynSeries([SeriesChannel(f"L{k + 1}", _hold(left[k])) for k in range(n)],
                       [SeriesChannel(f"R{k + 1}", _hold(right[k])) for k in range(n)],
                       valid, cfg.n_levels, geoms)
