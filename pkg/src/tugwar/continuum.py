"""Continuum references: Aronsson's singular solution, a finite-difference
infinity Laplacian, harmonic-measure experiments on the disk, and a checker
for comparison with quadratic distance functions.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .game import GameError, ValueField
from .length_space import (EpsilonComplex, SpaceSpec, ball_regions, ball_region, build_complex,
                           region_boundary, solve_u_eps)
from .simulator import trial_rng

# --------------------------------------------------------------------------
# Aronsson's function


def _angle_principal(theta: np.ndarray) -> np.ndarray:
    return np.angle(np.exp(1j * theta))


def aronsson_angle(theta):
    """Angular factor ``a`` of ``G = a(theta) r^(-1/3)``.

    ``a(theta)^3 = cos(theta) (1 - t)^2 / (1 + t + t^2)`` with
    ``t = |tan(theta/2)|^(4/3)``, evaluated on ``|theta| <= pi/2`` and
    extended by ``a(theta + pi) = -a(theta)``.
    """
    th = np.asarray(theta, dtype=float)
    th = _angle_principal(th)
    flip = np.abs(th) > np.pi / 2
    th = np.where(flip, th - np.sign(th) * np.pi, th)
    t = np.abs(np.tan(th / 2.0)) ** (4.0 / 3.0)
    a = np.cbrt(np.cos(th) * (1.0 - t) ** 2 / (1.0 + t + t * t))
    out = np.where(flip, -a, a)
    return float(out) if out.ndim == 0 else out


def aronsson_G(r, theta):
    """``a(theta) r^(-1/3)``, infinity-harmonic off the origin."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("aronsson_G needs r > 0")
    out = aronsson_angle(theta) * r ** (-1.0 / 3.0)
    return float(out) if np.ndim(out) == 0 else out


def aronsson_G_xy(x, y):
    return aronsson_G(np.hypot(x, y), np.arctan2(y, x))


def aronsson_expansion(theta):
    """Small-angle expansion ``1 - 16^(-1/3) |theta|^(4/3) - theta^2/6``."""
    th = np.abs(np.asarray(theta, dtype=float))
    return 1.0 - 16.0 ** (-1.0 / 3.0) * th ** (4.0 / 3.0) - th ** 2 / 6.0


# --------------------------------------------------------------------------
# finite differences


def numeric_delta_inf(u: Callable, x, h: float) -> float:
    """Central-difference ``eta^T D^2u eta`` with ``eta = grad u / |grad u|``.

    ``u`` maps a point (1-D array) to a real.  Refuses when the estimated
    gradient norm is at most ``10 h``.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    E = np.eye(n) * h
    u0 = float(u(x))
    grad = np.array([(u(x + E[i]) - u(x - E[i])) / (2 * h) for i in range(n)])
    norm = float(np.linalg.norm(grad))
    if norm <= 10 * h:
        raise ValueError(f"gradient too small ({norm:.3g}) for a normalised second derivative")
    H = np.empty((n, n))
    for i in range(n):
        H[i, i] = (u(x + E[i]) - 2 * u0 + u(x - E[i])) / (h * h)
        for j in range(i + 1, n):
            H[i, j] = H[j, i] = (u(x + E[i] + E[j]) - u(x + E[i] - E[j])
                                 - u(x - E[i] + E[j]) + u(x - E[i] - E[j])) / (4 * h * h)
    eta = grad / norm
    return float(eta @ H @ eta)


# --------------------------------------------------------------------------
# harmonic measure of caps and porous sets on the unit disk


def cap_distance(points: np.ndarray, delta: float) -> np.ndarray:
    """Euclidean distance from boundary points to the cap ``{|y + e1| <= delta}``."""
    half = 2.0 * math.asin(min(delta / 2.0, 1.0))
    phi = np.arctan2(points[:, 1], points[:, 0])
    off = np.abs(_angle_principal(phi - np.pi))
    return np.where(off <= half, 0.0, 2.0 * np.sin(np.clip(off - half, 0.0, None) / 2.0))


def cap_data(delta: float) -> Callable:
    """1 on the cap at ``(-1, 0)``, ``1 - dist/delta`` within ``delta`` of it, else 0."""
    def F(points):
        return np.clip(1.0 - cap_distance(points, delta) / delta, 0.0, 1.0)
    return F


def disk_complex(spacing: float = 0.02, eps: float = 0.08) -> EpsilonComplex:
    return build_complex(SpaceSpec("euclidean_ball", spacing=spacing, dim=2), eps)


def _center_index(c: EpsilonComplex) -> int:
    return int(np.argmin(np.linalg.norm(c.points, axis=1)))


@dataclass
class HMeasureEntry:
    delta: float
    u0: float
    residual: float
    iterations: int
    n_points: int
    comparison_ratio: float


def harmonic_measure_cap(delta: float, spacing: float = 0.02, eps: float = 0.08,
                         tol: float = 1e-10, complex: EpsilonComplex | None = None) -> HMeasureEntry:
    """``u_eps(0)`` for the tapered cap data on the unit-disk complex.

    ``comparison_ratio`` is ``u(0) / (delta^(1/3) G(1 + 2 delta, 0))``, the
    value measured against the shifted Aronsson majorant.
    """
    if not 0 < delta <= math.pi / 4:
        raise GameError("delta must lie in (0, pi/4]")
    c = complex if complex is not None else disk_complex(spacing, eps)
    rep = solve_u_eps(c, cap_data(delta), tol=tol, method="iterate_below")
    u0 = float(rep.values[_center_index(c)])
    upper = delta ** (1.0 / 3.0) * aronsson_G(1.0 + 2.0 * delta, 0.0)
    return HMeasureEntry(float(delta), u0, rep.residual_sup, rep.iterations, c.n, u0 / upper)


@dataclass
class HMeasureResult:
    deltas: list
    values: list
    beta: float
    beta_stderr: float
    r2: float
    band: tuple
    residuals: list
    comparison_ratios: list
    eps: float
    spacing: float
    richardson_beta: float | None = None
    entries: list = field(default_factory=list, repr=False)

    def to_csv(self) -> str:
        lines = ["delta,u0,residual"]
        lines += [f"{d!r},{v!r},{r!r}" for d, v, r in zip(self.deltas, self.values, self.residuals)]
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("entries")
        d["band"] = list(self.band)
        return d


def fit_power_law(x, y) -> tuple[float, float, float]:
    """Least-squares slope of ``log y`` on ``log x``: ``(slope, stderr, R^2)``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    fitted = A @ coef
    ss_res = float(np.sum((ly - fitted) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = len(lx) - 2
    se = math.sqrt(ss_res / dof / np.sum((lx - lx.mean()) ** 2)) if dof > 0 else float("nan")
    return float(coef[0]), se, r2


def hmeasure_ladder(deltas=(0.4, 0.2, 0.1, 0.05), spacing: float = 0.02, eps: float = 0.08,
                    tol: float = 1e-10, richardson: bool = False) -> HMeasureResult:
    """Cap values over a ``delta`` ladder on one cloud and the fitted exponent.

    ``band`` is the slope's two-standard-error interval.  With
    ``richardson=True`` the ladder is repeated at half the step and spacing
    and the refined slope is reported alongside.
    """
    c = disk_complex(spacing, eps)
    entries = [harmonic_measure_cap(d, complex=c, tol=tol) for d in deltas]
    vals = [e.u0 for e in entries]
    beta, se, r2 = fit_power_law(deltas, vals)
    rich = None
    if richardson:
        c2 = disk_complex(spacing / 2, eps / 2)
        vals2 = [harmonic_measure_cap(d, complex=c2, tol=tol).u0 for d in deltas]
        rich = fit_power_law(deltas, vals2)[0]
    return HMeasureResult(list(map(float, deltas)), vals, beta, se, r2,
                          (beta - 2 * se, beta + 2 * se), [e.residual for e in entries],
                          [e.comparison_ratio for e in entries], eps, spacing, rich, entries)


def cantor_intervals(depth: int) -> np.ndarray:
    """The ``2^depth`` closed intervals of the ternary Cantor construction in [0, 1]."""
    iv = np.array([[0.0, 1.0]])
    for _ in range(depth):
        third = (iv[:, 1] - iv[:, 0]) / 3.0
        iv = np.vstack([np.column_stack([iv[:, 0], iv[:, 0] + third]),
                        np.column_stack([iv[:, 1] - third, iv[:, 1]])])
    return iv[np.argsort(iv[:, 0])]


def cantor_circle_distance(points: np.ndarray, delta: float, depth: int | None = None) -> np.ndarray:
    """Distance from circle points to the Cantor set wrapped once around the circle.

    The set is resolved to a depth where the interval length is at most
    ``delta / 8``.
    """
    if depth is None:
        depth = max(1, int(math.ceil(math.log(2 * math.pi * 8 / delta, 3))))
    iv = cantor_intervals(depth) * 2 * math.pi - math.pi
    phi = np.arctan2(points[:, 1], points[:, 0])
    inside = (phi[:, None] >= iv[None, :, 0]) & (phi[:, None] <= iv[None, :, 1])
    ends = iv.ravel()
    off = np.abs(_angle_principal(phi[:, None] - ends[None, :])).min(1)
    off = np.where(inside.any(1), 0.0, off)
    return 2.0 * np.sin(off / 2.0)


def porous_data(delta: float, setspec: str = "cantor") -> Callable:
    """1 on the closed ``delta``-neighbourhood of the set, tapering to 0 over ``delta``."""
    if setspec not in ("cantor", "full"):
        raise GameError(f"unknown porous set {setspec!r}")

    def F(points):
        if setspec == "full":
            return np.ones(len(points))
        d = cantor_circle_distance(points, delta)
        return np.clip(2.0 - d / delta, 0.0, 1.0)
    return F


@dataclass
class PorousEntry:
    delta: float
    u0: float
    residual: float
    covered_fraction: float


def porous_measure(delta: float, setspec: str = "cantor", spacing: float = 0.02, eps: float = 0.08,
                   tol: float = 1e-10, complex: EpsilonComplex | None = None) -> PorousEntry:
    """``u_eps(0)`` with data supported near a porous set on the unit circle."""
    if delta <= 0:
        raise GameError("delta must be positive")
    c = complex if complex is not None else disk_complex(spacing, eps)
    F = porous_data(delta, setspec)
    FY = F(c.points[c.terminal])
    frac = float(np.mean(FY >= 1.0))
    if setspec == "cantor" and frac >= 1.0:
        raise GameError("degenerate set: the neighbourhood covers the whole circle")
    rep = solve_u_eps(c, F, tol=tol, method="iterate_below")
    return PorousEntry(float(delta), float(rep.values[_center_index(c)]), rep.residual_sup, frac)


def plan_bound(k: int, gamma: float, d_min: float, dist_to_support) -> np.ndarray | float:
    """``(1 - 2^-k) ** log_gamma(d_min / dist)``, valid for ``dist >= d_min``.

    Upper bound on the value when player II can always find a ``k``-step plan
    toward zero data that keeps a ``gamma`` fraction of the distance to the
    support.
    """
    if not (0 < gamma < 1) or k < 1 or d_min <= 0:
        raise ValueError("need k >= 1, 0 < gamma < 1, d_min > 0")
    d = np.asarray(dist_to_support, dtype=float)
    if np.any(d < d_min):
        raise ValueError("bound applies only at distance >= d_min from the support")
    expo = np.log(d_min / d) / math.log(gamma)
    out = (1.0 - 2.0 ** (-k)) ** expo
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# quadratic comparison


@dataclass
class QuadraticDistanceFunction:
    """``phi(x) = a d(x, z)^2 + b d(x, z) + c``."""

    center: np.ndarray
    a: float
    b: float
    c: float = 0.0
    orientation: str = "star_increasing"

    def radial(self, d):
        d = np.asarray(d, float)
        return self.a * d * d + self.b * d + self.c

    def __call__(self, points):
        P = np.atleast_2d(np.asarray(points, float))
        return self.radial(np.linalg.norm(P - self.center, axis=1))

    def is_admissible(self, d_region, center_inside: bool) -> bool:
        """Star monotonicity on a region, given distances from ``z`` to its points."""
        s = 1.0 if self.orientation == "star_increasing" else -1.0
        if center_inside:
            return self.b == 0.0 and s * self.a > 0
        d = np.asarray(d_region, float)
        return bool(np.all(s * (2 * self.a * d + self.b) > 0))


@dataclass
class ComparisonSample:
    clause: str
    center_point: int
    radius: float
    a: float
    b: float
    z_inside: bool
    margin: float


@dataclass
class ComparisonReport:
    samples: list
    skipped: int
    worst_margin: float
    tolerance: float
    passed: bool

    def to_json(self) -> dict:
        return {"worst_margin": self.worst_margin, "tolerance": self.tolerance,
                "passed": self.passed, "skipped": self.skipped,
                "samples": [asdict(s) for s in self.samples]}


def _comparison_margin(c: EpsilonComplex, u: np.ndarray, g: np.ndarray, center: int, radius: float,
                       rng: np.random.Generator):
    """One from-above trial; returns (margin, phi) or None when no phi is admissible."""
    V = ball_region(c, center, radius)
    bd = region_boundary(c, V)
    if not bd.any():
        return None
    Vi, Bi = np.flatnonzero(V), np.flatnonzero(bd)
    a_max = float(g[Vi].min()) / 2.0
    inside = a_max > 0 and bool(rng.random() < 0.5)
    if inside:
        zpt = c.points[int(rng.choice(Vi))]
        a, b = float(rng.uniform(0.5 * a_max, a_max)), 0.0
    else:
        ang = rng.uniform(0, 2 * np.pi)
        dist = radius + c.eps + rng.uniform(0.0, 1.5)
        zpt = c.points[center] + dist * np.array([np.cos(ang), np.sin(ang)])
        a = a_max - float(rng.uniform(0.0, 1.0))
        dV = np.linalg.norm(c.points[np.r_[Vi, Bi]] - zpt, axis=1)
        bmin = -2 * a * (dV.min() if a >= 0 else dV.max())
        b = bmin + float(rng.uniform(1e-3, 1.0))
    phi = QuadraticDistanceFunction(zpt, a, b)
    dV = np.linalg.norm(c.points[np.r_[Vi, Bi]] - zpt, axis=1)
    if not phi.is_admissible(dV, inside):
        return None
    phi.c = float(np.max(u[Bi] - phi(c.points[Bi])))
    margin = float(np.min(phi(c.points[Vi]) - u[Vi]))
    return margin, phi, inside


def quadratic_comparison_check(c: EpsilonComplex, u, g, samples: int = 200, seed: int = 0,
                               tolerance: float = 5.0, radius_range=(0.15, 0.4)) -> ComparisonReport:
    """Sampled comparison of ``u`` with quadratic distance functions.

    For each sampled ball ``V`` away from the data, a star-increasing ``phi``
    with ``a <= inf_V g / 2`` is shifted to touch ``u`` from above on the
    discrete boundary of ``V``; the margin is ``min_V (phi - u)``.  The
    from-below clause is the same test applied to ``(-u, -g)``.  Passes when
    every margin is at least ``-tolerance * eps``.
    """
    if c.points.shape[1] != 2 or c.metric != "euclidean":
        raise GameError("quadratic comparison sampling is implemented for planar Euclidean clouds")
    vals = np.asarray(u.values if isinstance(u, ValueField) else u, dtype=float)
    gv = c.field_values(g)
    out, skipped = [], 0
    for s in range(samples):
        rng = trial_rng(seed, s)
        regs = ball_regions(c, 1, rng, radius_range)
        if not regs:
            skipped += 1
            continue
        z, r = regs[0]
        for clause, uu, gg in (("above", vals, gv), ("below", -vals, -gv)):
            res = _comparison_margin(c, uu, gg, z, r, rng)
            if res is None:
                skipped += 1
                continue
            margin, phi, inside = res
            out.append(ComparisonSample(clause, int(z), float(r), phi.a, phi.b, inside, margin))
    worst = min((s.margin for s in out), default=0.0)
    tol = tolerance * c.eps
    return ComparisonReport(out, skipped, float(worst), tol, bool(worst >= -tol))
