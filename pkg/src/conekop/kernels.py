"""Kernel ingredients and assembly for the integral operators K and P.

Everything here evaluates pointwise (batched) FormValues; nothing is ever
differentiated numerically.  The closed forms of every antiholomorphic
differential are built in:

    b        singular support form of Bochner-Martinelli type, normalized so
             that contraction with eta gives exactly 1,
    sigma    support form of the ball weight, again contraction-normalized,
    chi      radial cut-off (quintic smoothstep in |zeta|^2),
    g        compactly supported weight chi - dbar(chi) ^ (sigma + sigma dbar
             sigma + ...),
    omega    structure form of the cone, conjugate Jacobian minors over the
             squared minors norm,
    h        Hefer form from divided differences.

The kernels are
    K = c_K * omega ^ top_extract(h ^ (g ^ B)_n)
    P = c_P * omega ^ top_extract(h ^ g_n)
with the scalar constants c_K, c_P fixed once by reproducing the flat model
identities (see calibrate).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .forms import FormValue, TWO_PI_I, smoothstep, smoothstep_deriv
from .varieties import ConeVariety

__all__ = [
    "WeightConfig",
    "CalibrationConstants",
    "PoleError",
    "CalibrationError",
    "default_calibration",
    "bm_b",
    "bm_dbar_b",
    "bm_B",
    "sigma_form",
    "dbar_sigma",
    "chi_value",
    "chi_deriv",
    "dbar_chi_form",
    "weight_g",
    "hefer_form",
    "structure_form",
    "kernel_K",
    "kernel_P",
    "model_k_gamma",
    "model_k_tilde",
    "k_gamma_truncated",
    "t_k_kernel",
    "annulus_bounds",
    "mu_value",
    "dbar_mu_coeffs",
    "rho_transition",
    "radial_transfer",
    "calibrate",
]


class PoleError(ValueError):
    pass


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class WeightConfig:
    """Cut-off geometry: chi is 1 inside rho1, 0 outside rho2 < Omega'."""

    rho1: float = 1.0
    rho2: float = 1.8
    omega_prime_radius: float = 2.0

    def __post_init__(self):
        if not 0 < self.rho1 < self.rho2 <= self.omega_prime_radius:
            raise ValueError("need 0 < rho1 < rho2 <= omega_prime_radius")


@dataclass(frozen=True)
class CalibrationConstants:
    c_K: complex
    c_P: complex
    provenance: str = "default"


def default_calibration(nu: int = 1) -> CalibrationConstants:
    """Scale constants pinned by the flat-model reproducing identities.

    One factor 1/(2 pi i) enters per Hefer factor and the top extraction
    contributes a parity sign per antiholomorphic degree; both are undone
    here so that the hyperplane kernel coincides with the flat
    Bochner-Martinelli kernel.  Verified numerically by calibrate().
    """
    return CalibrationConstants(
        c_K=-((TWO_PI_I) ** nu), c_P=(TWO_PI_I) ** nu, provenance="default"
    )


# ---------------------------------------------------------------------------
# Bochner-Martinelli ingredients
# ---------------------------------------------------------------------------


def _norm_sq(x):
    return np.sum(np.abs(x) ** 2, axis=-1)


def bm_b(eta: np.ndarray, N: int) -> FormValue:
    """Contraction-normalized singular (1,0) form: coefficients eta_bar / (2 pi i |eta|^2)."""
    eta = np.asarray(eta, dtype=complex)
    r2 = _norm_sq(eta)
    if np.any(r2 == 0):
        raise PoleError("b evaluated at eta = 0")
    terms = {}
    for j in range(N):
        terms[1 << j] = np.conj(eta[..., j]) / (TWO_PI_I * r2)
    return FormValue(N, terms)


def bm_dbar_b(eta: np.ndarray, N: int) -> FormValue:
    """Closed-form dbar of b, with d(eta_bar) expanded over the a and b generators."""
    eta = np.asarray(eta, dtype=complex)
    r2 = _norm_sq(eta)
    if np.any(r2 == 0):
        raise PoleError("dbar b evaluated at eta = 0")
    terms = {}
    for j in range(N):
        for k in range(N):
            m = (1.0 if j == k else 0.0) / r2 - np.conj(eta[..., j]) * eta[..., k] / r2**2
            m = m / TWO_PI_I
            # (a_k - b_k) ^ e_j reordered to canonical e-first storage
            ma = (1 << j) | (1 << (N + k))
            mb = (1 << j) | (1 << (2 * N + k))
            terms[ma] = terms.get(ma, 0.0) - m
            terms[mb] = terms.get(mb, 0.0) + m
    return FormValue(N, terms)


def bm_B(eta: np.ndarray, N: int, n: int) -> FormValue:
    """Full form B = b + b dbar(b) + ... + b (dbar b)^(n-1)."""
    b = bm_b(eta, N)
    db = bm_dbar_b(eta, N)
    out = FormValue.zero(N)
    term = b
    for _ in range(n):
        out = out + term
        term = term.wedge(db)
    return out


# ---------------------------------------------------------------------------
# ball weight
# ---------------------------------------------------------------------------


def _sigma_denominator(zeta, z):
    # Q = |zeta|^2 - conj(zeta) . z = conj(zeta) . eta
    return np.sum(np.conj(zeta) * (zeta - z), axis=-1)


def sigma_form(zeta: np.ndarray, z: np.ndarray, N: int) -> FormValue:
    zeta = np.asarray(zeta, dtype=complex)
    z = np.asarray(z, dtype=complex)
    Q = _sigma_denominator(zeta, z)
    if np.any(Q == 0):
        raise PoleError("sigma denominator vanished (z outside the inner ball)")
    terms = {1 << j: np.conj(zeta[..., j]) / (TWO_PI_I * Q) for j in range(N)}
    return FormValue(N, terms)


def dbar_sigma(zeta: np.ndarray, z: np.ndarray, N: int) -> FormValue:
    zeta = np.asarray(zeta, dtype=complex)
    z = np.asarray(z, dtype=complex)
    Q = _sigma_denominator(zeta, z)
    if np.any(Q == 0):
        raise PoleError("sigma denominator vanished (z outside the inner ball)")
    eta = zeta - z
    terms = {}
    for j in range(N):
        for k in range(N):
            m = (1.0 if j == k else 0.0) / Q - np.conj(zeta[..., j]) * eta[..., k] / Q**2
            m = m / TWO_PI_I
            ma = (1 << j) | (1 << (N + k))
            terms[ma] = terms.get(ma, 0.0) - m  # a_k ^ e_j = -(e_j ^ a_k)
    return FormValue(N, terms)


def chi_value(zeta: np.ndarray, cfg: WeightConfig) -> np.ndarray:
    x = _norm_sq(zeta)
    lo, hi = cfg.rho1**2, cfg.rho2**2
    return 1.0 - smoothstep((x - lo) / (hi - lo))


def chi_deriv(zeta: np.ndarray, cfg: WeightConfig) -> np.ndarray:
    """d chi / d(|zeta|^2)."""
    x = _norm_sq(zeta)
    lo, hi = cfg.rho1**2, cfg.rho2**2
    return -smoothstep_deriv((x - lo) / (hi - lo)) / (hi - lo)


def dbar_chi_form(zeta: np.ndarray, cfg: WeightConfig, N: int) -> FormValue:
    cd = chi_deriv(zeta, cfg)
    terms = {1 << (N + j): cd * zeta[..., j] for j in range(N)}
    return FormValue(N, terms)


def weight_g(zeta: np.ndarray, z: np.ndarray, cfg: WeightConfig, n: int,
             N: int) -> FormValue:
    """Compactly supported weight; scalar 1 inside rho1, zero outside rho2.

    The sigma factors only matter on the support of dbar chi, so their
    denominator is masked to 1 elsewhere to avoid spurious pole evaluations
    at zeta near z.
    """
    zeta = np.asarray(zeta, dtype=complex)
    z = np.asarray(z, dtype=complex)
    cd = chi_deriv(zeta, cfg)
    live = cd != 0.0
    Q = _sigma_denominator(zeta, z)
    if np.any(live & (np.abs(Q) == 0.0)):
        raise PoleError("sigma denominator vanished on supp dbar chi")
    zeta_safe = np.where(live[..., None], zeta, np.ones_like(zeta))
    sig = sigma_form(zeta_safe, z, N)
    dsig = dbar_sigma(zeta_safe, z, N)
    g = FormValue.scalar(N, chi_value(zeta, cfg) + 0j)
    dchi = dbar_chi_form(zeta, cfg, N)
    cum = sig
    for _ in range(n):
        g = g - dchi.wedge(cum)
        cum = cum.wedge(dsig)
    return g


# ---------------------------------------------------------------------------
# variety-bound factors
# ---------------------------------------------------------------------------


def hefer_form(v: ConeVariety, zeta: np.ndarray, z: np.ndarray) -> FormValue:
    """Product h_1 ^ ... ^ h_nu with contract_eta(h_i) = f_i(zeta) - f_i(z)."""
    H = v.hefer_coeffs(zeta, z).entries
    N = v.ambient_dim
    out = FormValue.scalar(N, 1.0 + 0j)
    for i in range(v.nu):
        terms = {1 << j: H[..., i, j] / TWO_PI_I for j in range(N)}
        out = out.wedge(FormValue(N, terms))
    return out


def _selection_sign(I: tuple[int, ...], N: int) -> int:
    """Sign of the permutation (I, complement of I) of (0..N-1)."""
    comp = [j for j in range(N) if j not in I]
    inv = sum(1 for i in I for j in comp if i > j)
    return -1 if inv & 1 else 1


def structure_form(v: ConeVariety, zeta: np.ndarray) -> FormValue:
    """(n,0) form of conjugated Jacobian minors over the squared minors norm.

    Coefficient norms scale like |zeta|^(nu - d); the origin is a genuine
    singularity whenever d > nu.
    """
    import itertools as it

    zeta = np.asarray(zeta, dtype=complex)
    N, nu = v.ambient_dim, v.nu
    J = v.jacobian(zeta)
    subsets = list(it.combinations(range(N), nu))
    minors = []
    for I in subsets:
        sub = J[..., I]
        if nu == 1:
            minors.append(sub[..., 0, 0])
        else:
            minors.append(np.linalg.det(sub))
    msq = np.zeros(zeta.shape[:-1])
    for m in minors:
        msq = msq + np.abs(m) ** 2
    if np.any(msq == 0):
        raise PoleError("structure form evaluated at a singular point")
    terms = {}
    for I, m in zip(subsets, minors):
        sgn = _selection_sign(I, N)
        mask = 0
        for j in range(N):
            if j not in I:
                mask |= 1 << j
        terms[mask] = sgn * np.conj(m) / msq
    return FormValue(N, terms)


# ---------------------------------------------------------------------------
# the kernels
# ---------------------------------------------------------------------------


def kernel_K(v: ConeVariety, zeta: np.ndarray, z: np.ndarray, cfg: WeightConfig,
             consts: CalibrationConstants | None = None) -> FormValue:
    """Full solution kernel at (zeta, z), as a batched FormValue.

    Carries dzeta generators (from the structure form), dzeta-bar and dz-bar
    generators; the pole at zeta = z has order 2n - 1 and the structure form
    contributes |zeta|^(nu - d) growth at the origin.
    """
    consts = consts or default_calibration(v.nu)
    N, n = v.ambient_dim, v.dim
    zeta = np.asarray(zeta, dtype=complex)
    z = np.asarray(z, dtype=complex)
    eta = zeta - z
    Bf = bm_B(eta, N, n)
    g = weight_g(zeta, z, cfg, n, N)
    part = g.wedge(Bf).bidegree_part(n)
    h = hefer_form(v, zeta, z)
    ktilde = h.wedge(part).extract_top_eta()
    omega = structure_form(v, zeta)
    return consts.c_K * omega.wedge(ktilde)


def kernel_P(v: ConeVariety, zeta: np.ndarray, z: np.ndarray, cfg: WeightConfig,
             consts: CalibrationConstants | None = None) -> FormValue:
    """Projection kernel; supported on the cut-off annulus, holomorphic in z."""
    consts = consts or default_calibration(v.nu)
    N, n = v.ambient_dim, v.dim
    zeta = np.asarray(zeta, dtype=complex)
    z = np.asarray(z, dtype=complex)
    g = weight_g(zeta, z, cfg, n, N)
    part = g.bidegree_part(n)
    h = hefer_form(v, zeta, z)
    ptilde = h.wedge(part).extract_top_eta()
    omega = structure_form(v, zeta)
    return consts.c_P * omega.wedge(ptilde)


# ---------------------------------------------------------------------------
# model kernels
# ---------------------------------------------------------------------------


def model_k_gamma(zeta, z, gamma: float, n: int):
    """|z|^gamma / (|zeta|^gamma |zeta - z|^(2n-1)), the model pole kernel."""
    zeta = np.asarray(zeta, dtype=complex)
    z = np.asarray(z, dtype=complex)
    dz = np.sqrt(_norm_sq(zeta - z))
    if np.any(dz == 0):
        raise PoleError("model kernel at zeta = z")
    out = dz ** -(2 * n - 1)
    if gamma != 0:
        nz = np.sqrt(_norm_sq(zeta))
        if np.any(nz == 0):
            raise PoleError("model kernel at zeta = 0 with gamma > 0")
        out = out * (np.sqrt(_norm_sq(z)) / nz) ** gamma
    return out


def model_k_tilde(zeta, z, gamma: float, i: int, n: int):
    """Component kernel conj(zeta_i - z_i)/|zeta-z|^(2n) with the radial ratio weight."""
    zeta = np.asarray(zeta, dtype=complex)
    z = np.asarray(z, dtype=complex)
    diff = zeta - z
    dz2 = _norm_sq(diff)
    if np.any(dz2 == 0):
        raise PoleError("model kernel at zeta = z")
    out = np.conj(diff[..., i]) / dz2**n
    if gamma != 0:
        nz = np.sqrt(_norm_sq(zeta))
        if np.any(nz == 0):
            raise PoleError("model kernel at zeta = 0 with gamma > 0")
        out = out * (np.sqrt(_norm_sq(z)) / nz) ** gamma
    return out


def k_gamma_truncated(zeta, z, gamma: float, j: float, n: int):
    k = model_k_gamma(zeta, z, gamma, n)
    return np.where(k > j, 0.0, k)


def annulus_bounds(m: int) -> tuple[float, float]:
    """Double-exponential annulus radii (e^-e^(m+1), e^-e^m)."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    if m > 5:
        raise ValueError("radii underflow double precision beyond m = 5")
    return math.exp(-math.exp(m + 1)), math.exp(-math.exp(m))


def t_k_kernel(zeta, z, gamma: float, k: int, n: int):
    """Model cut-off kernel supported on the k-th double-exponential annulus."""
    lo, hi = annulus_bounds(k)
    zeta = np.asarray(zeta, dtype=complex)
    nz = np.sqrt(_norm_sq(zeta))
    inside = (nz >= lo) & (nz <= hi)
    base = model_k_gamma(zeta, z, gamma, n)
    nz_safe = np.where(inside, nz, 0.5)
    return np.where(inside, base / (nz_safe * np.abs(np.log(nz_safe))), 0.0)


# ---------------------------------------------------------------------------
# double-exponential cut-off functions
# ---------------------------------------------------------------------------


def rho_transition(x, k: int):
    """Smooth 1 -> 0 transition on [k, k+1]; slope bounded by 1.875 < 2."""
    return 1.0 - smoothstep(np.asarray(x, dtype=float) - k)


def _rho_deriv(x, k: int):
    return -smoothstep_deriv(np.asarray(x, dtype=float) - k)


def radial_transfer(x):
    """Smooth increasing map: identity below 1/4, constant 1/2 above 3/4, |r'| <= 1."""
    x = np.asarray(x, dtype=float)
    u = np.clip(2.0 * (x - 0.25), 0.0, 1.0)
    # integral of (1 - smoothstep) from 0 to u
    anti = u - (u**6 - 3.0 * u**5 + 2.5 * u**4)
    mid = 0.25 + 0.5 * anti
    return np.where(x <= 0.25, x, np.where(x >= 0.75, 0.5, mid))


def _radial_transfer_deriv(x):
    x = np.asarray(x, dtype=float)
    u = np.clip(2.0 * (x - 0.25), 0.0, 1.0)
    mid = 1.0 - smoothstep(u)
    return np.where(x <= 0.25, 1.0, np.where(x >= 0.75, 0.0, mid))


def mu_value(zeta, k: int):
    """Cut-off mu_k = rho_k(log(-log r(|zeta|))): 1 away from 0, 0 near 0."""
    nz = np.sqrt(_norm_sq(np.asarray(zeta, dtype=complex)))
    r = np.maximum(radial_transfer(nz), 1e-300)  # underflow guard
    return rho_transition(np.log(-np.log(r)), k)


def dbar_mu_coeffs(zeta, k: int) -> np.ndarray:
    """Ambient dzeta-bar coefficient vector of dbar mu_k (closed form)."""
    zeta = np.asarray(zeta, dtype=complex)
    nz = np.sqrt(_norm_sq(zeta))
    nz_safe = np.maximum(nz, 1e-300)
    r = np.maximum(radial_transfer(nz), 1e-300)
    logr = np.log(r)
    y = np.log(-logr)
    pref = _rho_deriv(y, k) * _radial_transfer_deriv(nz) / (r * logr)
    pref = pref / (2.0 * nz_safe)
    return pref[..., None] * zeta


# ---------------------------------------------------------------------------
# calibration against the flat model
# ---------------------------------------------------------------------------


def calibrate(cfg: WeightConfig | None = None, plan=None,
              tol_factor: float = 5.0) -> CalibrationConstants:
    """Fix c_P and c_K on the hyperplane model and freeze them.

    c_P makes P reproduce the constant 1; c_K is fitted from the q = 0
    homotopy identity for a non-holomorphic bump.  Raises CalibrationError
    if either residual exceeds tol_factor times its standard error.
    """
    from . import operators
    from .forms import TestForm
    from .sampling import SamplingPlan
    from .varieties import get_variety

    cfg = cfg or WeightConfig()
    plan = plan or SamplingPlan(samples=200_000, experiment_id="calibrate")
    v = get_variety("hyperplane")
    raw = CalibrationConstants(c_K=1.0, c_P=1.0, provenance="raw")

    zs = [np.array([w, 0.12 - 0.2j, 0.0]) for w in (0.25, -0.3 + 0.1j, 0.45j)]
    one = TestForm.constant(v.ambient_dim)
    p_vals = []
    p_errs = []
    for i, z in enumerate(zs):
        val, qr = operators.apply_P(
            v, one, z, cfg, plan.with_(experiment_id=f"calP{i}"), consts=raw
        )
        p_vals.append(val)
        p_errs.append(qr.stderr)
    c_P = 1.0 / np.mean(p_vals)
    rel = np.std(p_vals) / abs(np.mean(p_vals))
    if rel > tol_factor * np.mean(p_errs) / abs(np.mean(p_vals)) + 0.05:
        raise CalibrationError(f"projection calibration unstable: spread {rel:.3g}")

    bump = TestForm.zbar_bump(v.ambient_dim, 0, 0.55 * cfg.rho1, 0.9 * cfg.rho1)
    num = 0.0 + 0j
    den = 0.0
    for i, z in enumerate(zs):
        phi_z = bump.eval_scalar(z[None, :])[0]
        pv, _ = operators.apply_P(
            v, bump, z, cfg, plan.with_(experiment_id=f"calPb{i}"), consts=raw
        )
        coeffs, _ = operators.apply_K(
            v, bump.dbar(), z, cfg, plan.with_(experiment_id=f"calK{i}"), consts=raw
        )
        kv = coeffs[0]
        target = phi_z - c_P * pv
        num += np.conj(kv) * target
        den += abs(kv) ** 2
    c_K = num / den
    consts = CalibrationConstants(c_K=complex(c_K), c_P=complex(c_P),
                                  provenance="calibrated")
    # verify the identity round-trip at one fresh point
    z = np.array([0.2 + 0.3j, -0.25, 0.0])
    phi_z = bump.eval_scalar(z[None, :])[0]
    pv, p_qr = operators.apply_P(v, bump, z, cfg,
                                 plan.with_(experiment_id="calchk_p"), consts=consts)
    coeffs, k_qr = operators.apply_K(v, bump.dbar(), z, cfg,
                                     plan.with_(experiment_id="calchk_k"),
                                     consts=consts)
    resid = abs(phi_z - pv - coeffs[0])
    err = tol_factor * math.hypot(p_qr.stderr, float(np.max(k_qr.stderr)))
    if resid > max(err, 0.02 * max(abs(phi_z), 1e-9)):
        raise CalibrationError(
            f"flat homotopy residual {resid:.3g} exceeds tolerance {err:.3g}"
        )
    return consts
