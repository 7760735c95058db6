"""Monte Carlo quadrature on affine cones via branched-cover charts.

A chart selects n of the N ambient coordinates as a base; over a base point
the defining equations restrict to a small polynomial system in the fiber
coordinates, whose solutions are the sheets of X.  Integrals over X pull back
to base integrals weighted by the Gram volume factor of each sheet.

The sampler draws base points from a mixture of uniform shells centered on
the region and on declared pole centers (stratified importance sampling with
the full-mixture density in the weights, which keeps the estimator unbiased
regardless of component overlap).  Random streams are counter-based, keyed by
(seed, experiment id, stratum index), so results are reproducible and
independent of evaluation order.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .varieties import ConeVariety

__all__ = [
    "Chart",
    "Region",
    "SamplingPlan",
    "SurfacePoint",
    "PointBatch",
    "QuadratureResult",
    "EmptyRegionError",
    "FiberDegenerateError",
    "NearSingularError",
    "ProfileError",
    "admissible_charts",
    "default_chart",
    "fiber_points",
    "tangent_frame",
    "integrate",
    "estimate_v",
    "layer_cake_integral",
    "surface_point_with_norm",
    "project_to_surface",
    "attach_link_margin",
    "pointwise",
]

POINT_TOL = 1e-10
BRANCH_TOL = 1e-8
FRAME_TOL = 1e-8


class EmptyRegionError(ValueError):
    pass


class FiberDegenerateError(RuntimeError):
    """Projection direction tangent to the cone at infinity for this chart."""


class NearSingularError(RuntimeError):
    pass


class ProfileError(ValueError):
    pass


# ---------------------------------------------------------------------------
# charts and fibers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Chart:
    """Coordinate projection: base indices parametrize, fiber indices solve."""

    base: tuple[int, ...]
    fiber: tuple[int, ...]


def _fiber_poly_coeffs(v: ConeVariety, chart: Chart):
    """For nu = 1: coefficient polynomials c_k(s) of the fiber polynomial.

    Returns a list indexed by the power of the fiber variable; entries are
    (exps over base vars, coeffs) arrays, possibly empty.
    """
    p = v.polys[0]
    t_idx = chart.fiber[0]
    d = p.degree
    buckets: list[list] = [[] for _ in range(d + 1)]
    for e, c in zip(p.exps, p.coeffs):
        k = int(e[t_idx])
        base_exp = [int(e[j]) for j in chart.base]
        buckets[k].append((base_exp, c))
    out = []
    for k in range(d + 1):
        if buckets[k]:
            exps = np.array([b[0] for b in buckets[k]], dtype=np.int64)
            coeffs = np.array([b[1] for b in buckets[k]], dtype=complex)
        else:
            exps = np.zeros((0, len(chart.base)), dtype=np.int64)
            coeffs = np.zeros(0, dtype=complex)
        out.append((exps, coeffs))
    return out


def _eval_base_poly(exps, coeffs, s):
    if coeffs.size == 0:
        return np.zeros(s.shape[:-1], dtype=complex)
    vals = np.zeros(s.shape[:-1], dtype=complex)
    for e, c in zip(exps, coeffs):
        term = np.full(s.shape[:-1], c)
        for j in range(s.shape[-1]):
            if e[j]:
                term = term * s[..., j] ** int(e[j])
        vals += term
    return vals


def admissible_charts(v: ConeVariety) -> list[Chart]:
    """Charts whose fiber system has constant top coefficients (full sheets).

    For nu = 1 this requires the pure power of the fiber variable to occur in
    the defining polynomial; then the fiber polynomial has exactly d roots
    over every base point and no sheet escapes to infinity.
    """
    import itertools as it

    N = v.ambient_dim
    n = v.dim
    charts = []
    for fiber in it.combinations(range(N), v.nu):
        base = tuple(j for j in range(N) if j not in fiber)
        ok = True
        for i, p in enumerate(v.polys):
            want = np.zeros(N, dtype=np.int64)
            want[fiber[i if v.nu > 1 else 0]] = p.degree
            # pure power of "its own" fiber variable present with nonzero coeff
            hit = np.all(p.exps == want, axis=1)
            if not np.any(hit):
                ok = False
                break
        if ok and len(base) == n:
            charts.append(Chart(base, fiber))
    return charts


def default_chart(v: ConeVariety) -> Chart:
    charts = admissible_charts(v)
    if not charts:
        raise FiberDegenerateError(
            f"no admissible coordinate projection for variety {v.name!r}"
        )
    return charts[0]


def _companion_roots(coeffs: np.ndarray) -> np.ndarray:
    """Roots of monic-normalizable polynomials, batched.

    coeffs has shape (B, d+1), ordered by ascending power; the top coefficient
    must be bounded away from zero (constant for admissible charts).
    """
    B, dp1 = coeffs.shape
    d = dp1 - 1
    monic = coeffs / coeffs[:, -1:]
    comp = np.zeros((B, d, d), dtype=complex)
    comp[:, 1:, :-1] = np.eye(d - 1)
    comp[:, :, -1] = -monic[:, :-1]
    return np.linalg.eigvals(comp)


def _polyval_and_deriv(cs: np.ndarray, t: np.ndarray):
    """Simultaneous Horner evaluation; cs (B, d+1) ascending powers, t (B, S)."""
    d = cs.shape[1] - 1
    pv = cs[:, d][:, None] * np.ones_like(t)
    dv = np.zeros_like(t)
    for k in range(d - 1, -1, -1):
        dv = dv * t + pv
        pv = pv * t + cs[:, k][:, None]
    return pv, dv


def _solve_fiber_nu1(v: ConeVariety, chart: Chart, bases: np.ndarray):
    """All fiber roots over each base point; returns (t, valid) of shape (B, d)."""
    table = _fiber_poly_coeffs(v, chart)
    d = len(table) - 1
    cs = np.stack([_eval_base_poly(e, c, bases) for e, c in table], axis=-1)
    lead = cs[:, -1]
    if np.any(np.abs(lead) == 0.0):
        raise FiberDegenerateError("fiber polynomial leading coefficient vanished")
    if d == 1:
        t = (-cs[:, 0] / cs[:, 1])[:, None]
    elif d == 2:
        a, b, c = cs[:, 2], cs[:, 1], cs[:, 0]
        disc = np.sqrt(b * b - 4.0 * a * c + 0j)
        t = np.stack([(-b + disc) / (2 * a), (-b - disc) / (2 * a)], axis=-1)
    else:
        t = _companion_roots(cs)
    # two Newton polishing passes on the fiber polynomial
    for _ in range(2):
        pv, dv = _polyval_and_deriv(cs, t)
        t = t - np.where(np.abs(dv) > 0, pv / np.where(dv == 0, 1.0, dv), 0.0)
    # branch-locus guard: derivative small relative to the homogeneous scale
    _, dv = _polyval_and_deriv(cs, t)
    scale = np.sqrt(
        np.sum(np.abs(bases) ** 2, axis=-1)[:, None] + np.abs(t) ** 2
    )
    valid = np.isfinite(t) & (
        np.abs(dv) > BRANCH_TOL * np.maximum(scale, 1e-300) ** (d - 1)
    )
    return t, valid


def _solve_fiber_nu2(v: ConeVariety, chart: Chart, bases: np.ndarray,
                     steps: int = 60):
    """Total-degree homotopy for nu = 2 fiber systems, tracked per base point.

    The defining tuple is homogeneous, so fibers are solved over unit-norm
    base points and rescaled; tracking then happens at a uniform scale.
    Best effort: paths that fail to converge are dropped (flagged invalid).
    """
    d1, d2 = (v.polys[0].degree, v.polys[1].degree)
    npaths = d1 * d2
    N = v.ambient_dim
    fi = list(chart.fiber)

    base_norms = np.sqrt(np.sum(np.abs(bases) ** 2, axis=-1))
    degenerate = base_norms < 1e-300
    bases = np.where(degenerate[:, None], 1.0,
                     bases / np.maximum(base_norms, 1e-300)[:, None])

    g_const = np.array([1.3 - 0.4j, 0.8 + 0.9j])

    def full_points(t):
        pts = np.zeros(t.shape[:-1] + (N,), dtype=complex)
        pts[..., chart.base] = bases[:, None, :]
        pts[..., fi[0]] = t[..., 0]
        pts[..., fi[1]] = t[..., 1]
        return pts

    def target(t):
        return v.eval_tuple(full_points(t))

    def target_jac(t):
        J = v.jacobian(full_points(t))
        return J[..., fi]

    # start system roots: t_i^{d_i} = g_i
    B = bases.shape[0]
    r1 = g_const[0] ** (1.0 / d1) * np.exp(2j * np.pi * np.arange(d1) / d1)
    r2 = g_const[1] ** (1.0 / d2) * np.exp(2j * np.pi * np.arange(d2) / d2)
    t = np.zeros((B, npaths, 2), dtype=complex)
    t[..., 0] = np.tile(np.repeat(r1, d2), (B, 1))
    t[..., 1] = np.tile(np.tile(r2, d1), (B, 1))
    gamma = 0.6 + 0.8j  # generic path rotation

    def start(t):
        return np.stack([t[..., 0] ** d1 - g_const[0], t[..., 1] ** d2 - g_const[1]],
                        axis=-1)

    def start_jac(t):
        J = np.zeros(t.shape[:-1] + (2, 2), dtype=complex)
        J[..., 0, 0] = d1 * t[..., 0] ** (d1 - 1)
        J[..., 1, 1] = d2 * t[..., 1] ** (d2 - 1)
        return J

    def solve2(Jm, rhs):
        det = Jm[..., 0, 0] * Jm[..., 1, 1] - Jm[..., 0, 1] * Jm[..., 1, 0]
        det = np.where(np.abs(det) < 1e-300, 1e-300, det)
        x0 = (Jm[..., 1, 1] * rhs[..., 0] - Jm[..., 0, 1] * rhs[..., 1]) / det
        x1 = (-Jm[..., 1, 0] * rhs[..., 0] + Jm[..., 0, 0] * rhs[..., 1]) / det
        return np.stack([x0, x1], axis=-1)

    svals = np.linspace(0.0, 1.0, steps + 1)
    for a, b in zip(svals[:-1], svals[1:]):
        # Euler predictor along the homotopy parameter, then Newton correct
        Hs = target(t) - gamma * start(t)
        J = (1 - b) * gamma * start_jac(t) + b * target_jac(t)
        t = t - (b - a) * solve2(J, Hs)
        for _ in range(2):
            H = (1 - b) * gamma * start(t) + b * target(t)
            J = (1 - b) * gamma * start_jac(t) + b * target_jac(t)
            t = t - solve2(J, H)
    for _ in range(4):  # endpoint polish on the target system
        t = t - solve2(target_jac(t), target(t))
    res = np.sqrt(np.sum(np.abs(target(t)) ** 2, axis=-1))
    valid = np.isfinite(res) & (res < 1e-9)
    # near-branch sheets: fiber Jacobian close to singular at unit scale
    Jf = target_jac(t)
    det = np.abs(Jf[..., 0, 0] * Jf[..., 1, 1] - Jf[..., 0, 1] * Jf[..., 1, 0])
    valid &= det > BRANCH_TOL
    # deduplicate collided paths
    for i in range(npaths):
        for j in range(i + 1, npaths):
            same = np.sum(np.abs(t[:, i] - t[:, j]) ** 2, axis=-1) < 1e-20
            valid[:, j] &= ~same
    valid &= ~degenerate[:, None]
    return t * base_norms[:, None, None], valid


def solve_fiber(v: ConeVariety, chart: Chart, bases: np.ndarray):
    """Positions and validity for all sheets over a batch of base points.

    Returns (positions (B, S, N), valid (B, S)).
    """
    bases = np.asarray(bases, dtype=complex).reshape(-1, v.dim)
    if v.nu == 1:
        t, valid = _solve_fiber_nu1(v, chart, bases)
        B, S = t.shape
        pts = np.zeros((B, S, v.ambient_dim), dtype=complex)
        pts[..., chart.base] = bases[:, None, :]
        pts[..., chart.fiber[0]] = t
    elif v.nu == 2:
        t, valid = _solve_fiber_nu2(v, chart, bases)
        B, S = t.shape[:2]
        pts = np.zeros((B, S, v.ambient_dim), dtype=complex)
        pts[..., chart.base] = bases[:, None, :]
        pts[..., chart.fiber[0]] = t[..., 0]
        pts[..., chart.fiber[1]] = t[..., 1]
    else:
        raise NotImplementedError("codimension > 2 fibers are out of scope")
    # residual guard
    fres = np.sqrt(np.sum(np.abs(v.eval_tuple(pts)) ** 2, axis=-1))
    nrm = np.sqrt(np.sum(np.abs(pts) ** 2, axis=-1))
    tol = POINT_TOL * np.maximum(1.0, nrm) ** v.total_degree
    valid = valid & (fres <= tol)
    return pts, valid


def gram_factors(v: ConeVariety, chart: Chart, pts: np.ndarray) -> np.ndarray:
    """Volume density det(I + (Dg)^* Dg) of the graph chart, per sheet."""
    J = v.jacobian(pts)
    Jf = J[..., chart.fiber]
    Jb = J[..., chart.base]
    if v.nu == 1:
        denom = Jf[..., 0, 0]
        denom = np.where(np.abs(denom) < 1e-300, 1e-300, denom)
        dg = -Jb[..., 0, :] / denom[..., None]
        return 1.0 + np.sum(np.abs(dg) ** 2, axis=-1)
    A = -np.linalg.solve(Jf, Jb)
    AHA = np.swapaxes(np.conj(A), -1, -2) @ A
    G = np.eye(v.dim) + AHA
    return np.real(np.linalg.det(G))


def frames_for(v: ConeVariety, pts: np.ndarray) -> np.ndarray:
    """Orthonormal bases of the holomorphic tangent spaces, batched.

    Rows ker(J) are obtained from the SVD right-singular vectors with zero
    singular value, which is deterministic for fixed input bits.
    """
    J = v.jacobian(pts)
    mn = v.minors_norm(pts)
    nrm = np.sqrt(np.sum(np.abs(pts) ** 2, axis=-1))
    thresh = FRAME_TOL * np.maximum(nrm, 1e-300) ** (v.total_degree - v.nu)
    if np.any(mn <= thresh):
        raise NearSingularError("tangent frame requested too close to the branch locus")
    _, _, Vh = np.linalg.svd(J)
    return np.conj(Vh[..., v.nu:, :])


# ---------------------------------------------------------------------------
# points
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SurfacePoint:
    position: np.ndarray
    frame: np.ndarray
    gram_factor: float
    sheet: int
    pdf: float


class PointBatch:
    """Vectorized view of surface sample points; frames computed on demand."""

    def __init__(self, variety, positions, grams, sheets=None, pdf=None):
        self.variety = variety
        self.positions = positions
        self.grams = grams
        self.sheets = sheets if sheets is not None else np.zeros(len(positions), int)
        self.pdf = pdf if pdf is not None else np.ones(len(positions))
        self._frames = None

    def __len__(self):
        return self.positions.shape[0]

    @property
    def frames(self) -> np.ndarray:
        if self._frames is None:
            self._frames = frames_for(self.variety, self.positions)
        return self._frames

    def norms(self) -> np.ndarray:
        return np.sqrt(np.sum(np.abs(self.positions) ** 2, axis=-1))

    def point(self, i: int) -> SurfacePoint:
        return SurfacePoint(
            position=self.positions[i],
            frame=self.frames[i],
            gram_factor=float(self.grams[i]),
            sheet=int(self.sheets[i]),
            pdf=float(self.pdf[i]),
        )


def pointwise(fn):
    """Adapt a SurfacePoint -> complex map to the batch integrand protocol."""

    def batched(batch: PointBatch):
        return np.array([fn(batch.point(i)) for i in range(len(batch))], dtype=complex)

    return batched


def fiber_points(v: ConeVariety, base, chart: Chart | None = None) -> list[SurfacePoint]:
    """All admissible sheets over one base point, with frames and Gram factors."""
    chart = chart or default_chart(v)
    bases = np.asarray(base, dtype=complex).reshape(1, v.dim)
    pts, valid = solve_fiber(v, chart, bases)
    out = []
    for s in range(pts.shape[1]):
        if not valid[0, s]:
            continue
        p = pts[0, s]
        g = float(np.real(gram_factors(v, chart, p[None, None, :])[0, 0]))
        fr = frames_for(v, p[None, :])[0]
        out.append(SurfacePoint(position=p, frame=fr, gram_factor=g, sheet=s, pdf=1.0))
    return out


def tangent_frame(v: ConeVariety, zeta) -> np.ndarray:
    """Orthonormal basis of the holomorphic tangent space at one point."""
    return frames_for(v, np.asarray(zeta, dtype=complex)[None, :])[0]


# ---------------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    kind: str
    center: np.ndarray
    r_inner: float
    r_outer: float

    @classmethod
    def ball(cls, center, radius: float) -> "Region":
        if radius <= 0:
            raise EmptyRegionError("ball radius must be positive")
        return cls("ball", np.asarray(center, dtype=complex), 0.0, float(radius))

    @classmethod
    def annulus(cls, center, r_inner: float, r_outer: float) -> "Region":
        if not 0 < r_inner < r_outer:
            raise EmptyRegionError("annulus radii must satisfy 0 < r_inner < r_outer")
        return cls("annulus", np.asarray(center, dtype=complex), float(r_inner),
                   float(r_outer))

    @classmethod
    def domain(cls, r_outer: float, ambient_dim: int = 3) -> "Region":
        if r_outer <= 0:
            raise EmptyRegionError("domain radius must be positive")
        return cls("domain", np.zeros(ambient_dim, dtype=complex), 0.0, float(r_outer))

    def indicator(self, pts: np.ndarray) -> np.ndarray:
        d = np.sqrt(np.sum(np.abs(pts - self.center) ** 2, axis=-1))
        if self.kind == "annulus":
            return (d >= self.r_inner) & (d <= self.r_outer)
        return d <= self.r_outer


# ---------------------------------------------------------------------------
# sampling plan and strata
# ---------------------------------------------------------------------------


@dataclass
class SamplingPlan:
    samples: int = 100_000
    seed: int = 0
    r_min: float = 1e-4
    shell_ratio: float = 2.0
    batch_size: int = 20_000
    experiment_id: str = "quad"
    allocation: str = "bound"
    min_per_stratum: int = 128

    def with_(self, **kw) -> "SamplingPlan":
        d = self.__dict__ | kw
        return SamplingPlan(**d)


@dataclass(frozen=True)
class _Stratum:
    center: np.ndarray  # base point, complex n-vector
    r_lo: float
    r_hi: float
    power: float  # radial importance exponent a; density ~ r^(-a)
    order: float  # declared pole order, used for budget allocation


def _sphere_area(n: int) -> float:
    # real unit sphere S^(2n-1) in C^n
    return 2.0 * math.pi**n / math.factorial(n - 1)


def _stratum_density(st: _Stratum, r: np.ndarray, n: int) -> np.ndarray:
    beta = 2 * n - st.power
    if st.r_lo > 0:
        norm = beta / (st.r_hi**beta - st.r_lo**beta)
    else:
        norm = beta / st.r_hi**beta
    inside = (r >= st.r_lo) & (r <= st.r_hi)
    rr = np.where(inside, np.maximum(r, 1e-300), 1.0)
    return np.where(inside, norm * rr ** (-st.power) / _sphere_area(n), 0.0)


def _sample_stratum(st: _Stratum, n: int, count: int, rng) -> np.ndarray:
    g = rng.standard_normal((count, 2 * n))
    g /= np.sqrt(np.sum(g * g, axis=-1, keepdims=True))
    dirs = g[:, :n] + 1j * g[:, n:]
    beta = 2 * n - st.power
    u = rng.random(count)
    lo_b = st.r_lo**beta
    hi_b = st.r_hi**beta
    r = (lo_b + u * (hi_b - lo_b)) ** (1.0 / beta)
    return st.center + dirs * r[:, None]


def _geometric_radii(hi: float, lo: float, ratio: float) -> list[float]:
    radii = [hi]
    while radii[-1] / ratio > lo * (1.0 + 1e-9):
        radii.append(radii[-1] / ratio)
    radii.append(lo)
    return radii


_STRETCH_CACHE: dict = {}


def chart_stretch(v: ConeVariety, chart: Chart) -> float:
    """Upper bound for |zeta| / |base point| over all sheets of the chart.

    Points of X with norm above r can project to base points of norm as low
    as r divided by this factor, so annulus covers must extend below their
    inner radius by it.  For nu = 1 the bound is a Cauchy root bound applied
    to the homogeneous fiber polynomial (rigorous); for nu = 2 it is a
    sampled estimate with a safety factor.
    """
    key = (id(v), chart)
    got = _STRETCH_CACHE.get(key)
    if got is not None:
        return got
    if v.nu == 1:
        table = _fiber_poly_coeffs(v, chart)
        d = len(table) - 1
        lead = np.abs(table[d][1]).sum()
        C = 0.0
        for k in range(d):
            S = float(np.abs(table[k][1]).sum())
            if S > 0:
                C = max(C, 2.0 * (S / lead) ** (1.0 / (d - k)))
        out = math.sqrt(1.0 + C * C)
    else:
        rng = _stream(0, f"stretch|{v.name}", 0)
        g = rng.standard_normal((512, 2 * v.dim))
        bases = g[:, : v.dim] + 1j * g[:, v.dim :]
        bases /= np.sqrt(np.sum(np.abs(bases) ** 2, axis=-1, keepdims=True))
        pts, valid = solve_fiber(v, chart, bases)
        nrm = np.sqrt(np.sum(np.abs(pts) ** 2, axis=-1))
        out = 1.5 * float(np.max(np.where(valid, nrm, 1.0)))
    _STRETCH_CACHE[key] = out
    return out


def _build_strata(v: ConeVariety, region: Region, chart: Chart, poles,
                  plan: SamplingPlan) -> list[_Stratum]:
    n = v.dim
    base_c = region.center[list(chart.base)]
    R = region.r_outer
    strata: list[_Stratum] = []
    ratio = max(plan.shell_ratio, 1.05)

    if region.kind == "annulus":
        # region cover: shells must reach below r_inner by the chart stretch
        # (sheets with norm >= r_inner can sit over shallower base points),
        # whatever r_min says
        lo = region.r_inner / chart_stretch(v, chart)
        radii = _geometric_radii(region.r_outer, lo, ratio)
        for r_hi, r_lo in zip(radii[:-1], radii[1:]):
            strata.append(_Stratum(base_c, r_lo, r_hi, 0.0, 0.0))
    else:
        strata.append(_Stratum(base_c, 0.0, R, 0.0, 0.0))

    for center, order in poles:
        pc = np.asarray(center, dtype=complex)[list(chart.base)]
        dist = float(np.sqrt(np.sum(np.abs(pc - base_c) ** 2)))
        if dist > 2.0 * R:  # cannot host region points
            continue
        if region.kind == "annulus" and np.allclose(pc, base_c):
            continue  # region shells already resolve this center
        hi = min(dist + R, 2.0 * R) if dist > 0 else R
        if hi <= plan.r_min:
            continue
        radii = _geometric_radii(hi, plan.r_min, ratio)
        for r_hi, r_lo in zip(radii[:-1], radii[1:]):
            strata.append(_Stratum(pc, r_lo, r_hi, 0.0, order))
        # innermost disc carries a pole-matched radial density
        a = min(max(order, 0.0), 2 * n - 0.5)
        strata.append(_Stratum(pc, 0.0, radii[-1], a, order))
    return strata


def _allocate(strata, plan: SamplingPlan, n: int) -> np.ndarray:
    m = len(strata)
    if plan.allocation == "equal":
        w = np.ones(m)
    else:
        w = np.array(
            [st.r_hi ** max(2 * n - st.order, 0.5) for st in strata], dtype=float
        )
        w /= w.max()
        w = np.maximum(w, 1e-3)
    counts = np.maximum(
        plan.min_per_stratum, (plan.samples * w / w.sum()).astype(int)
    )
    return counts


def _stream(seed: int, experiment_id: str, stratum: int):
    raw = f"{seed}|{experiment_id}|{stratum}".encode()
    h = hashlib.blake2b(raw, digest_size=16).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(h, "little")))


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------


@dataclass
class StratumStat:
    value: complex
    stderr: float
    count: int


@dataclass
class QuadratureResult:
    value: complex
    stderr: float
    samples: int
    strata: list = field(default_factory=list)
    discarded: int = 0

    def scaled(self, c) -> "QuadratureResult":
        a = abs(c)
        return QuadratureResult(
            value=self.value * c,
            stderr=self.stderr * a,
            samples=self.samples,
            strata=[StratumStat(s.value * c, s.stderr * a, s.count) for s in self.strata],
            discarded=self.discarded,
        )


# ---------------------------------------------------------------------------
# the estimator
# ---------------------------------------------------------------------------


def integrate(v: ConeVariety, region: Region, integrand, plan: SamplingPlan,
              poles=(), chart: Chart | None = None,
              need_frames: bool = False) -> QuadratureResult:
    """Unbiased Monte Carlo estimate of the integral of integrand over X cap region.

    integrand maps a PointBatch to a complex array of shape (M,) or (M, K);
    declared poles (center, order) add importance-sampling shells around
    their base projections.  The result's strata list mirrors the mixture
    components.
    """
    chart = chart or default_chart(v)
    n = v.dim
    strata = _build_strata(v, region, chart, poles, plan)
    counts = _allocate(strata, plan, n)
    total = int(counts.sum())
    fracs = counts / total

    sums = None
    sqsums = None
    K = 1
    stats = []
    discarded = 0

    for si, (st, cnt) in enumerate(zip(strata, counts)):
        rng = _stream(plan.seed, plan.experiment_id, si)
        s_sum = None
        s_sq = None
        done = 0
        got_valid = False
        while done < cnt:
            bs = int(min(plan.batch_size, cnt - done))
            bases = _sample_stratum(st, n, bs, rng)
            # mixture density over all components
            p = np.zeros(bs)
            for other, f in zip(strata, fracs):
                r = np.sqrt(np.sum(np.abs(bases - other.center) ** 2, axis=-1))
                p += f * _stratum_density(other, r, n)
            pts, valid = solve_fiber(v, chart, bases)
            discarded += int(pts.shape[1] * bs - valid.sum())
            got_valid = got_valid or bool(np.any(valid))
            inside = valid & region.indicator(pts)
            B, S = inside.shape
            flat = inside.reshape(-1)
            if np.any(flat):
                sel = pts.reshape(B * S, -1)[flat]
                gsel = np.real(gram_factors(v, chart, sel))
                base_pdf = np.repeat(p, S)[flat]
                batch = PointBatch(v, sel, gsel, pdf=base_pdf)
                fv = np.asarray(integrand(batch))
                if fv.ndim == 1:
                    fv = fv[:, None]
                K = fv.shape[1]
                vals = np.zeros((B * S, K), dtype=complex)
                vals[flat] = fv * gsel[:, None]
                Y = vals.reshape(B, S, K).sum(axis=1) / p[:, None]
            else:
                Y = np.zeros((B, K), dtype=complex)
            if s_sum is None:
                s_sum = np.zeros(K, dtype=complex)
                s_sq = np.zeros(K)
            s_sum += Y.sum(axis=0)
            s_sq += np.sum(np.abs(Y) ** 2, axis=0)
            done += bs
        if not got_valid:
            warnings.warn(
                f"stratum {si} received no admissible fiber points",
                RuntimeWarning,
            )
        mean = s_sum / cnt
        var = np.maximum(s_sq / cnt - np.abs(mean) ** 2, 0.0)
        var = var * cnt / max(cnt - 1, 1)
        se = np.sqrt(var / cnt)
        stats.append((mean, se, int(cnt)))
        if sums is None:
            sums = np.zeros(K, dtype=complex)
            sqsums = np.zeros(K)
        sums += fracs[si] * mean
        sqsums += (fracs[si] * se) ** 2

    stderr = np.sqrt(sqsums)
    if K == 1:
        value, stderr = complex(sums[0]), float(stderr[0])
        strata_stats = [StratumStat(complex(m[0]), float(s[0]), c) for m, s, c in stats]
    else:
        value = sums
        strata_stats = [StratumStat(m, s, c) for m, s, c in stats]
    return QuadratureResult(value=value, stderr=stderr, samples=total,
                            strata=strata_stats, discarded=discarded)


def estimate_v(v: ConeVariety, r: float, z, plan: SamplingPlan,
               chart: Chart | None = None) -> QuadratureResult:
    """Volume ratio Vol(X cap B_r(z)) / r^(2n)."""
    if r <= 0:
        raise EmptyRegionError("radius must be positive")
    region = Region.ball(z, r)
    res = integrate(v, region, lambda b: np.ones(len(b), dtype=complex), plan,
                    chart=chart)
    return res.scaled(1.0 / r ** (2 * v.dim))


def layer_cake_integral(v: ConeVariety, g, z, r_max: float, plan: SamplingPlan,
                        chart: Chart | None = None) -> QuadratureResult:
    """Integral of a nonincreasing radial profile via its distribution function.

    Estimates the volume function V(r) = Vol(X cap B_r(z)) on a geometric
    radius grid with independent per-shell mass estimates, then evaluates the
    layer-cake identity by a trapezoid rule in the level variable plus a
    power-law core extrapolation.  Serves as an independent oracle for the
    direct estimator on radial integrands.
    """
    chart = chart or default_chart(v)
    n = v.dim
    z = np.asarray(z, dtype=complex)
    ratio = min(plan.shell_ratio, math.sqrt(2.0))
    r_lo = max(plan.r_min * r_max, 1e-12)
    m = max(int(math.ceil(math.log(r_max / r_lo) / math.log(ratio))), 4)
    radii = r_max * (r_lo / r_max) ** (np.arange(m, -1, -1) / m)

    t = np.asarray([float(g(r)) for r in radii])
    if np.any(t < 0):
        raise ProfileError("profile must be nonnegative")
    if np.any(np.diff(t) > 1e-12 * np.maximum(np.abs(t[:-1]), 1.0)):
        raise ProfileError("layer-cake evaluation requires a nonincreasing profile")

    per = max(plan.samples // (m + 1), plan.min_per_stratum)
    masses = np.zeros(m + 1)
    errs = np.zeros(m + 1)
    one = lambda b: np.ones(len(b), dtype=complex)
    sub = plan.with_(samples=per, allocation="equal")
    core = integrate(v, Region.ball(z, radii[0]), one,
                     sub.with_(experiment_id=plan.experiment_id + "|lc0"), chart=chart)
    masses[0], errs[0] = np.real(core.value), core.stderr
    for i in range(m):
        sh = integrate(
            v, Region.annulus(z, radii[i], radii[i + 1]), one,
            sub.with_(experiment_id=plan.experiment_id + f"|lc{i + 1}"), chart=chart,
        )
        masses[i + 1], errs[i + 1] = np.real(sh.value), sh.stderr

    def _interval(ta, la, tb, lb, trapezoid):
        # integral of the level function between levels tb < ta
        if ta <= tb or (la <= 0 and lb <= 0):
            return 0.0
        if trapezoid or la <= 0 or lb <= 0:
            return (ta - tb) * 0.5 * (la + lb)
        # log-log linear interpolation: exact for power-law volume growth
        s = math.log(la / lb) / math.log(ta / tb)
        if abs(1.0 + s) < 1e-9:
            return la * ta * math.log(ta / tb)
        return (ta * la - tb * lb) / (1.0 + s)

    def assemble(mass_vec, trapezoid=False):
        V = np.cumsum(mass_vec)
        total = t[-1] * V[-1]
        for i in range(m):
            # level t decreases with the radius index
            total += _interval(t[i], V[i], t[i + 1], V[i + 1], trapezoid)
        # power-law core below the smallest resolved radius
        if t[0] > t[1] and V[0] > 0 and V[1] > 0:
            s = math.log(V[0] / V[1]) / math.log(t[0] / t[1])
            if s >= -1.0 - 1e-9:
                raise ProfileError("core of the profile is not integrable on X")
            total += V[0] * t[0] / (-1.0 - s)
        return total

    value = assemble(masses)
    se_sq = 0.0
    for j in range(m + 1):
        bump = masses.copy()
        bump[j] += errs[j]
        se_sq += (assemble(bump) - value) ** 2
    # count the interpolation-model spread as discretization uncertainty
    se_sq += (assemble(masses, trapezoid=True) - value) ** 2 / 9.0
    return QuadratureResult(value=complex(value), stderr=math.sqrt(se_sq),
                            samples=(m + 1) * per,
                            strata=[StratumStat(complex(mv), ev, per)
                                    for mv, ev in zip(masses, errs)])


# ---------------------------------------------------------------------------
# surface point utilities
# ---------------------------------------------------------------------------


def surface_point_with_norm(v: ConeVariety, norm: float, seed: int = 0,
                            chart: Chart | None = None) -> np.ndarray:
    """Deterministic point on X with the requested norm (cone rescaling)."""
    chart = chart or default_chart(v)
    rng = _stream(seed, f"spn|{v.name}", 0)
    for _ in range(64):
        g = rng.standard_normal((1, 2 * v.dim))
        base = g[:, : v.dim] + 1j * g[:, v.dim:]
        pts, valid = solve_fiber(v, chart, base)
        for s in range(pts.shape[1]):
            if valid[0, s]:
                p = pts[0, s]
                r = np.sqrt(np.sum(np.abs(p) ** 2))
                if r > 1e-12:
                    return p * (norm / r)
    raise RuntimeError("could not find a regular surface point")


def project_to_surface(v: ConeVariety, z: np.ndarray, iters: int = 6) -> np.ndarray:
    """Gauss-Newton projection of an ambient point onto X (minimal correction)."""
    z = np.asarray(z, dtype=complex).copy()
    for _ in range(iters):
        f = v.eval_tuple(z[None, :])[0]
        if np.sqrt(np.sum(np.abs(f) ** 2)) < 1e-14 * max(1.0, np.sum(np.abs(z))):
            break
        J = v.jacobian(z[None, :])[0]
        JH = np.conj(J.T)
        corr = JH @ np.linalg.solve(J @ JH, f)
        z = z - corr
    return z


def attach_link_margin(v: ConeVariety, samples: int = 10_000,
                       seed: int = 0) -> ConeVariety:
    """Certified-by-sampling lower bound for the minors norm on the unit link."""
    chart = default_chart(v)
    rng = _stream(seed, f"link|{v.name}", 1)
    n = v.dim
    remaining = samples
    m_min = math.inf
    while remaining > 0:
        bs = min(remaining, 4096)
        g = rng.standard_normal((bs, 2 * n))
        bases = g[:, :n] + 1j * g[:, n:]
        pts, valid = solve_fiber(v, chart, bases)
        nrm = np.sqrt(np.sum(np.abs(pts) ** 2, axis=-1))
        ok = valid & (nrm > 1e-9)
        if np.any(ok):
            unit = pts[ok] / nrm[ok][:, None]
            m_min = min(m_min, float(np.min(v.minors_norm(unit))))
        remaining -= bs
    if not math.isfinite(m_min) or m_min <= 0:
        raise NearSingularError(f"link of {v.name} appears singular")
    return v.with_link_margin(m_min)
