"""Application of the integral kernels to test inputs by stratified quadrature.

The operators are linear in the input form and deterministic given the
sampling plan; pole locations of each kernel are declared to the sampler so
that importance shells keep the variance of the singular integrands finite.
"""

from __future__ import annotations

import itertools
import warnings

import numpy as np

from . import kernels
from .forms import TestForm, pointwise_norm
from .kernels import CalibrationConstants, WeightConfig
from .sampling import (
    PointBatch,
    QuadratureResult,
    Region,
    SamplingPlan,
    integrate,
    _build_strata,
    _sample_stratum,
    default_chart,
    solve_fiber,
)
from .varieties import ConeVariety

__all__ = [
    "ExponentRangeError",
    "apply_K",
    "apply_P",
    "apply_model_T",
    "apply_T_m",
    "lp_norm",
    "output_subsets",
]

_TINY = 1e-13


class ExponentRangeError(ValueError):
    pass


def output_subsets(N: int, q_out: int) -> list[tuple[int, ...]]:
    """Ambient dz-bar multi-indices of the output, in lexicographic order."""
    return list(itertools.combinations(range(N), q_out))


def _kernel_integrand(v: ConeVariety, phi: TestForm, z, cfg, consts, subsets,
                      which: str):
    # pullback densities are keyed by the dz-bar mask alone (low bits)
    masks = []
    for s in subsets:
        m = 0
        for idx in s:
            m |= 1 << idx
        masks.append(m)

    def integrand(batch: PointBatch):
        zeta = batch.positions
        nz = batch.norms()
        ne = np.sqrt(np.sum(np.abs(zeta - z) ** 2, axis=-1))
        ok = (nz > _TINY) & (ne > _TINY)
        out = np.zeros((len(batch), len(masks)), dtype=complex)
        if not np.any(ok):
            return out
        pts = zeta[ok]
        if which == "K":
            ker = kernels.kernel_K(v, pts, z, cfg, consts)
        else:
            ker = kernels.kernel_P(v, pts, z, cfg, consts)
        total = ker.wedge(phi.form_value(pts)).restricted_to_dim(v.dim)
        dens = total.pullback_surface(batch.frames[ok])
        for i, m in enumerate(masks):
            if m in dens:
                out[ok, i] = dens[m]
        return out

    return integrand


def apply_K(v: ConeVariety, phi: TestForm, z, cfg: WeightConfig,
            plan: SamplingPlan, consts: CalibrationConstants | None = None,
            chart=None):
    """Estimate (K phi)(z) for a (0,q) input, 1 <= q <= n.

    Returns (coefficient vector over dz-bar multi-indices of size q-1,
    QuadratureResult).  Integration runs over X cap B_Omega'(0) with
    importance shells at z and at the cone point.
    """
    z = np.asarray(z, dtype=complex)
    n = v.dim
    if not 1 <= phi.q <= n:
        raise ValueError(f"apply_K requires 1 <= q <= {n}, got q = {phi.q}")
    if np.sqrt(np.sum(np.abs(z) ** 2)) < 10 * plan.r_min:
        warnings.warn("evaluation point is within 10 r_min of the cone point",
                      RuntimeWarning)
    consts = consts or kernels.default_calibration(v.nu)
    subsets = output_subsets(v.ambient_dim, phi.q - 1)
    region = Region.domain(cfg.omega_prime_radius, v.ambient_dim)
    poles = [(z, 2 * n - 1), (np.zeros(v.ambient_dim), v.total_degree - v.nu)]
    integrand = _kernel_integrand(v, phi, z, cfg, consts, subsets, "K")
    qr = integrate(v, region, integrand, plan, poles=poles, chart=chart)
    coeffs = np.atleast_1d(np.asarray(qr.value))
    return coeffs, qr


def apply_P(v: ConeVariety, phi: TestForm, z, cfg: WeightConfig,
            plan: SamplingPlan, consts: CalibrationConstants | None = None,
            chart=None):
    """Estimate (P phi)(z) for a (0,0) input; reproduces holomorphic values.

    The kernel vanishes off the cut-off annulus, so the integral runs there
    only; the integrand is smooth and needs no pole shells.
    """
    z = np.asarray(z, dtype=complex)
    if phi.q != 0:
        raise ValueError("apply_P expects a (0,0) input")
    consts = consts or kernels.default_calibration(v.nu)
    region = Region.annulus(np.zeros(v.ambient_dim), cfg.rho1, cfg.rho2)
    integrand = _kernel_integrand(v, phi, z, cfg, consts, [()], "P")
    qr = integrate(v, region, integrand, plan, chart=chart)
    value = complex(np.atleast_1d(np.asarray(qr.value))[0])
    return value, qr


def apply_model_T(v: ConeVariety, f, z, gamma: float, plan: SamplingPlan,
                  radius: float = 1.0, chart=None) -> QuadratureResult:
    """T f(z) = integral over X cap B_radius of f * k_gamma."""
    n = v.dim
    if not 0 <= gamma < 2 * n:
        raise ExponentRangeError(f"gamma must lie in [0, {2 * n}) for T")
    z = np.asarray(z, dtype=complex)

    def integrand(batch: PointBatch):
        zeta = batch.positions
        nz = batch.norms()
        ne = np.sqrt(np.sum(np.abs(zeta - z) ** 2, axis=-1))
        ok = (nz > _TINY) & (ne > _TINY)
        out = np.zeros(len(batch), dtype=complex)
        if np.any(ok):
            base = kernels.model_k_gamma(zeta[ok], z, gamma, n)
            out[ok] = base * np.asarray(f(batch))[ok]
        return out

    region = Region.domain(radius, v.ambient_dim)
    poles = [(z, 2 * n - 1), (np.zeros(v.ambient_dim), gamma)]
    return integrate(v, region, integrand, plan, poles=poles, chart=chart)


def apply_T_m(v: ConeVariety, f, z, gamma: float, m: int, plan: SamplingPlan,
              chart=None) -> QuadratureResult:
    """Cut-off model operator on the m-th double-exponential annulus."""
    n = v.dim
    if not 0 <= gamma < 2 * n - 1:
        raise ExponentRangeError(f"gamma must lie in [0, {2 * n - 1}) for T_m")
    lo, hi = kernels.annulus_bounds(m)
    z = np.asarray(z, dtype=complex)

    def integrand(batch: PointBatch):
        zeta = batch.positions
        vals = kernels.t_k_kernel(zeta, z, gamma, m, n)
        return vals * np.asarray(f(batch))

    region = Region.annulus(np.zeros(v.ambient_dim), lo, hi)
    poles = [(z, 2 * n - 1)]
    return integrate(v, region, integrand, plan, poles=poles, chart=chart)


def lp_norm(v: ConeVariety, obj, region: Region, p: float, plan: SamplingPlan,
            poles=(), chart=None) -> QuadratureResult:
    """L^p norm over a region of X for a scalar map or a (0,q) TestForm.

    Scalar inputs follow the batch integrand protocol.  For p = infinity an
    empirical essential sup over the sampling strata is returned, with
    stderr 0 and the sample count for context.
    """
    if isinstance(obj, TestForm):
        q = obj.q

        def magnitude(batch: PointBatch):
            comps = obj.form_value(batch.positions).frame_components(batch.frames)
            return pointwise_norm(comps, q)

    else:

        def magnitude(batch: PointBatch):
            return np.abs(np.asarray(obj(batch)))

    if p == np.inf:
        chart_ = chart or default_chart(v)
        strata = _build_strata(v, region, chart_, poles, plan)
        best = 0.0
        count = 0
        rng_sizes = max(plan.samples // max(len(strata), 1), plan.min_per_stratum)
        from .sampling import _stream, gram_factors

        for si, st in enumerate(strata):
            rng = _stream(plan.seed, plan.experiment_id + "|sup", si)
            bases = _sample_stratum(st, v.dim, rng_sizes, rng)
            pts, valid = solve_fiber(v, chart_, bases)
            inside = valid & region.indicator(pts)
            if not np.any(inside):
                continue
            sel = pts[inside]
            batch = PointBatch(v, sel, np.real(gram_factors(v, chart_, sel)))
            best = max(best, float(np.max(magnitude(batch))))
            count += int(inside.sum())
        return QuadratureResult(value=best, stderr=0.0, samples=count)

    if p < 1:
        raise ValueError("p must be at least 1")

    def integrand(batch: PointBatch):
        return magnitude(batch) ** p + 0j

    qr = integrate(v, region, integrand, plan, poles=poles, chart=chart)
    val = max(np.real(qr.value), 0.0)
    norm = val ** (1.0 / p)
    se = qr.stderr / (p * val ** (1.0 - 1.0 / p)) if val > 0 else qr.stderr
    return QuadratureResult(value=norm, stderr=se, samples=qr.samples,
                            strata=qr.strata, discarded=qr.discarded)
