import numpy as np
import pytest

from conekop import kernels as K
from conekop.forms import FormValue
from conekop.kernels import WeightConfig, annulus_bounds
from conekop.sampling import surface_point_with_norm
from conekop.varieties import get_variety

HP = get_variety("hyperplane")
A1 = get_variety("a1")
CFG = WeightConfig()
TWO_PI_I = 2j * np.pi


def _rand(rng, n, N=3):
    return rng.standard_normal((n, N)) + 1j * rng.standard_normal((n, N))


def _max_coeff(f: FormValue):
    return max((float(np.max(np.abs(np.atleast_1d(c)))) for c in f.terms.values()),
               default=0.0)


def test_b_contraction_normalized():
    rng = np.random.default_rng(0)
    eta = _rand(rng, 200)
    out = K.bm_b(eta, 3).contract_eta(eta)
    assert np.max(np.abs(out.terms[0] - 1.0)) < 1e-13


def test_b_coefficient_magnitude():
    rng = np.random.default_rng(1)
    eta = _rand(rng, 100)
    b = K.bm_b(eta, 3)
    total = np.zeros(100)
    for c in b.terms.values():
        total += np.abs(c) ** 2
    nrm = np.sqrt(np.sum(np.abs(eta) ** 2, axis=-1))
    assert np.allclose(np.sqrt(total), 1.0 / (2 * np.pi * nrm), rtol=1e-12)


def test_b_scaling_pattern():
    eta = np.array([[0.3 - 0.2j, 1.1, -0.4j]])
    b1 = K.bm_b(eta, 3)
    b2 = K.bm_b(2.0 * eta, 3)
    for m, c in b1.terms.items():
        assert np.allclose(b2.terms[m], c / 2.0, rtol=1e-13)


def test_B_bidegree_audit():
    rng = np.random.default_rng(2)
    eta = _rand(rng, 5)
    B = K.bm_B(eta, 3, 2)
    emask = (1 << 3) - 1
    degs = {}
    for m in B.terms:
        e = (m & emask).bit_count()
        anti = (m >> 3).bit_count()
        degs.setdefault(e, set()).add(anti)
    assert set(degs) == {1, 2}
    assert degs[1] == {0} and degs[2] == {1}


def test_B_term_homogeneity():
    direction = np.array([[0.6, -0.64j, 0.48]])
    direction /= np.sqrt(np.sum(np.abs(direction) ** 2))
    for k in (1, 2):
        part_1 = K.bm_B(direction, 3, 2).bidegree_part(k)
        part_h = K.bm_B(direction / 2, 3, 2).bidegree_part(k)
        ratio = 2.0 ** (2 * k - 1)
        checked = 0
        for m, c in part_1.terms.items():
            c0 = np.atleast_1d(c)[0]
            if abs(c0) < 1e-12:
                continue
            got = np.atleast_1d(part_h.terms[m])[0] / c0
            assert abs(got - ratio) < 1e-10 * ratio
            checked += 1
        assert checked > 0


def test_b_pole_error():
    with pytest.raises(K.PoleError):
        K.bm_b(np.zeros((1, 3), dtype=complex), 3)


def test_sigma_contraction():
    rng = np.random.default_rng(3)
    zeta = _rand(rng, 1000)
    z = np.array([0.1, -0.2j, 0.05])
    out = K.sigma_form(zeta, z, 3).contract_eta(zeta - z)
    assert np.max(np.abs(out.terms[0] - 1.0)) < 1e-12


def test_weight_scalar_inside():
    rng = np.random.default_rng(4)
    zeta = 0.5 * CFG.rho1 * _rand(rng, 50) / np.sqrt(3)
    zeta = zeta / np.maximum(np.sqrt(np.sum(np.abs(zeta) ** 2, -1))[:, None], 1e-9) \
        * (0.5 * CFG.rho1)
    z = np.array([0.1, 0.0, 0.0])
    g = K.weight_g(zeta, z, CFG, 2, 3)
    assert np.allclose(g.terms[0], 1.0)
    assert all(np.allclose(c, 0.0) for m, c in g.terms.items() if m != 0)


def test_weight_vanishes_outside():
    zeta = np.array([[2.5, 0.1, 0.0], [0.0, 2.2, 0.5]], dtype=complex)
    z = np.array([0.1, 0.0, 0.0])
    g = K.weight_g(zeta, z, CFG, 2, 3)
    assert _max_coeff(g) == 0.0


def test_weight_holomorphic_in_z():
    # finite differences in z-bar of the weight coefficients vanish
    rng = np.random.default_rng(5)
    zeta = _rand(rng, 20)
    zeta = zeta / np.sqrt(np.sum(np.abs(zeta) ** 2, -1))[:, None] * 1.4
    z0 = np.array([0.2, -0.1j, 0.15])
    h = 1e-5
    for j in range(3):
        ej = np.zeros(3, complex)
        ej[j] = 1.0
        gp = K.weight_g(zeta, z0 + h * ej, CFG, 2, 3)
        gm = K.weight_g(zeta, z0 - h * ej, CFG, 2, 3)
        gip = K.weight_g(zeta, z0 + 1j * h * ej, CFG, 2, 3)
        gim = K.weight_g(zeta, z0 - 1j * h * ej, CFG, 2, 3)
        masks = set(gp.terms) | set(gm.terms) | set(gip.terms) | set(gim.terms)
        for m in masks:
            a = np.atleast_1d(gp.terms.get(m, 0.0) - gm.terms.get(m, 0.0))
            b = np.atleast_1d(gip.terms.get(m, 0.0) - gim.terms.get(m, 0.0))
            dbar = (a + 1j * b) / (4 * h)
            assert np.max(np.abs(dbar)) < 1e-6


def test_sigma_pole_error_outside_ball():
    zeta = np.array([[1.2, 0.0, 0.0]], dtype=complex)
    z = 1.2 * zeta[0]  # denominator |zeta|^2 - conj(zeta).z = 1.44 - 1.728 != 0
    z = zeta[0]  # exact equality makes Q = 0? no: Q = |zeta|^2 - |zeta|^2 = 0
    with pytest.raises(K.PoleError):
        K.sigma_form(zeta, z, 3)


def test_hefer_form_contract_matches_difference():
    rng = np.random.default_rng(6)
    for v in (HP, A1, get_variety("fermat3")):
        ze = _rand(rng, 500, v.ambient_dim)
        zz = _rand(rng, 500, v.ambient_dim)
        h = K.hefer_form(v, ze, zz)
        got = h.contract_eta(ze - zz).terms[0]
        want = v.eval_tuple(ze)[:, 0] - v.eval_tuple(zz)[:, 0]
        assert np.max(np.abs(got - want)) < 1e-10 * max(1.0, np.max(np.abs(want)))


def test_hefer_growth_bound():
    rng = np.random.default_rng(7)
    v = get_variety("fermat4")
    ze = _rand(rng, 2000, 3)
    zz = _rand(rng, 2000, 3)
    H = v.hefer_coeffs(ze, zz).entries
    nz = np.sqrt(np.sum(np.abs(ze) ** 2, -1))
    nw = np.sqrt(np.sum(np.abs(zz) ** 2, -1))
    bound = sum(nz ** (v.total_degree - v.nu - g) * nw**g
                for g in range(v.total_degree - v.nu + 1))
    C = np.max(np.max(np.abs(H), axis=(1, 2)) / bound)
    assert np.isfinite(C) and C < 10.0


def test_structure_form_hyperplane_constant():
    rng = np.random.default_rng(8)
    zeta = _rand(rng, 10)
    om = K.structure_form(HP, zeta)
    live = {m for m, c in om.terms.items() if np.max(np.abs(c)) > 0}
    assert live == {0b011}  # e_0 ^ e_1, constant coefficient
    assert np.allclose(om.terms[0b011], 1.0)


def test_structure_form_homogeneity():
    rng = np.random.default_rng(9)
    zeta = _rand(rng, 50)
    for lam in (3.0, 0.5, 1.0 + 2.0j):
        om1 = K.structure_form(A1, zeta)
        om2 = K.structure_form(A1, lam * zeta)
        n1 = np.zeros(50)
        n2 = np.zeros(50)
        for m in om1.terms:
            n1 += np.abs(om1.terms[m]) ** 2
            n2 += np.abs(om2.terms.get(m, np.zeros(50))) ** 2
        ratio = np.sqrt(n2 / n1)
        expected = abs(lam) ** -(A1.total_degree - A1.nu)
        assert np.max(np.abs(ratio - expected)) < 1e-10 * expected


def test_structure_form_sign_convention():
    # d zeta_I ^ (complement) = + d zeta_1 ^ ... ^ d zeta_N, checked by wedge
    import itertools

    from conekop.kernels import _selection_sign

    for N in (3, 4):
        top = FormValue(N, {(1 << N) - 1: 1.0})
        for nu in (1, 2):
            for I in itertools.combinations(range(N), nu):
                mask_I = 0
                comp = 0
                for j in range(N):
                    if j in I:
                        mask_I |= 1 << j
                    else:
                        comp |= 1 << j
                sgn = _selection_sign(I, N)
                prod = FormValue(N, {mask_I: 1.0}).wedge(
                    FormValue(N, {comp: float(sgn)}))
                assert prod.terms == top.terms


def test_structure_form_singular_origin():
    with pytest.raises(K.PoleError):
        K.structure_form(A1, np.zeros((1, 3), dtype=complex))


def test_kernel_K_hyperplane_matches_flat_bm():
    # with chi identically 1 at interior points, the assembled kernel equals
    # the flat two-dimensional Bochner-Martinelli form
    rng = np.random.default_rng(10)
    z = np.array([0.2, -0.1, 0.0], dtype=complex)
    zeta = _rand(rng, 40)
    zeta[:, 2] = 0.0
    zeta *= 0.3 / np.sqrt(np.sum(np.abs(zeta) ** 2, -1))[:, None]
    frames = np.stack([np.eye(3)[:2].astype(complex)] * 40)
    ker = K.kernel_K(HP, zeta, z, CFG)
    Bflat = K.bm_B(zeta - z, 3, 2)
    for phi_idx in range(2):  # wedge against each dzeta-bar slot
        probe = FormValue(3, {1 << (3 + phi_idx): np.ones(40)})
        dens_K = ker.wedge(probe).restricted_to_dim(2).pullback_surface(frames)
        dens_B = Bflat.wedge(probe).restricted_to_dim(2).pullback_surface(frames)
        got = dens_K.get(0, np.zeros(40))
        want = dens_B.get(0, np.zeros(40))
        assert np.max(np.abs(got - want)) < 1e-10 * max(1.0, np.max(np.abs(want)))


def test_kernel_P_vanishes_inside_cutoff():
    rng = np.random.default_rng(11)
    zeta = _rand(rng, 20)
    zeta *= 0.8 * CFG.rho1 / np.sqrt(np.sum(np.abs(zeta) ** 2, -1))[:, None]
    z = np.array([0.2, 0.1, 0.0], dtype=complex)
    P = K.kernel_P(HP, zeta, z, CFG)
    assert _max_coeff(P) == 0.0


def test_kernel_pole_order_audit():
    # sup of |K| * |zeta - z|^(2n-1) stays bounded as zeta approaches z
    z = surface_point_with_norm(A1, 0.5, seed=0)
    from conekop.sampling import tangent_frame

    tau = tangent_frame(A1, z)[0]
    sups = []
    for eps in np.geomspace(1e-4, 1e-1, 7):
        from conekop.sampling import project_to_surface

        zeta = np.stack([project_to_surface(A1, z + eps * tau),
                         project_to_surface(A1, z - eps * tau)])
        ker = K.kernel_K(A1, zeta, z, CFG)
        dist = np.sqrt(np.sum(np.abs(zeta - z) ** 2, -1))
        mag = np.zeros(2)
        for c in ker.terms.values():
            mag = np.maximum(mag, np.abs(c))
        sups.append(np.max(mag * dist**3))
    sups = np.array(sups)
    assert np.max(sups) < 50.0 * np.min(sups[sups > 0])


def test_kernel_decomposition_bound():
    # |K(zeta, z)| <= C sum_gamma |z|^g |zeta|^-g |zeta-z|^-(2n-1) empirically
    rng = np.random.default_rng(12)
    z = surface_point_with_norm(A1, 0.5, seed=1)
    bases = rng.standard_normal((10_000, 2)) + 1j * rng.standard_normal((10_000, 2))
    from conekop.sampling import default_chart, solve_fiber

    pts, valid = solve_fiber(A1, default_chart(A1), bases)
    zeta = pts[valid]
    nz = np.sqrt(np.sum(np.abs(zeta) ** 2, -1))
    keep = (nz > 1e-3) & (nz < 2.0)
    zeta = zeta[keep][:10_000]
    ker = K.kernel_K(A1, zeta, z, CFG)
    mag = np.zeros(len(zeta))
    for c in ker.terms.values():
        mag = np.maximum(mag, np.abs(c))
    nz = np.sqrt(np.sum(np.abs(zeta) ** 2, -1))
    dz = np.sqrt(np.sum(np.abs(zeta - z) ** 2, -1))
    zn = np.sqrt(np.sum(np.abs(z) ** 2))
    bound = sum((zn / nz) ** g for g in range(A1.total_degree - A1.nu + 1)) / dz**3
    C = np.max(mag / bound)
    assert np.isfinite(C) and C < 100.0


def test_model_kernels():
    rng = np.random.default_rng(13)
    zeta = _rand(rng, 10_000)
    z = np.array([0.3, 0.2, 0.0], dtype=complex)
    k0 = K.model_k_gamma(zeta, z, 0.0, 2)
    dist = np.sqrt(np.sum(np.abs(zeta - z) ** 2, -1))
    assert np.allclose(k0, dist**-3, rtol=1e-12)
    # on the shell |zeta| = |z| the ratio weight drops out
    shell = zeta / np.sqrt(np.sum(np.abs(zeta) ** 2, -1))[:, None] * \
        np.sqrt(np.sum(np.abs(z) ** 2))
    for g in (0.0, 1.0, 2.0):
        assert np.allclose(K.model_k_gamma(shell, z, g, 2),
                           K.model_k_gamma(shell, z, 0.0, 2), rtol=1e-10)
    # truncation clamps exactly where the kernel exceeds the level
    k1 = K.model_k_gamma(zeta, z, 1.0, 2)
    for j in (10.0, 100.0):
        kj = K.k_gamma_truncated(zeta, z, 1.0, j, 2)
        assert np.all(kj[k1 > j] == 0.0)
        assert np.allclose(kj[k1 <= j], k1[k1 <= j])


def test_model_k_tilde_magnitude():
    rng = np.random.default_rng(14)
    zeta = _rand(rng, 100)
    z = np.array([0.3, 0.2, 0.0], dtype=complex)
    kt = K.model_k_tilde(zeta, z, 0.0, 0, 2)
    dist = np.sqrt(np.sum(np.abs(zeta - z) ** 2, -1))
    assert np.all(np.abs(kt) <= dist**-3 + 1e-12)


def test_annulus_bounds_range():
    lo, hi = annulus_bounds(0)
    assert hi == pytest.approx(np.exp(-1))
    assert lo == pytest.approx(np.exp(-np.e))
    with pytest.raises(ValueError):
        annulus_bounds(6)
    with pytest.raises(ValueError):
        annulus_bounds(-1)


def test_cutoff_slope_bounds():
    xs = np.linspace(-1.0, 7.0, 20_001)
    rho = K.rho_transition(xs, 2)
    drho = np.gradient(rho, xs)
    assert np.max(np.abs(drho)) <= 2.0 + 1e-3
    rxs = np.linspace(0.0, 1.0, 20_001)
    r = K.radial_transfer(rxs)
    dr = np.gradient(r, rxs)
    assert np.max(np.abs(dr)) <= 1.0 + 1e-3
    assert np.all(np.diff(r) >= -1e-15)
    assert r[0] == 0.0 and r[-1] == pytest.approx(0.5)


def test_mu_support_and_underflow():
    for k in (1, 2, 3):
        lo, hi = annulus_bounds(k)
        pts = np.array([[2 * hi, 0, 0], [lo / 2, 0, 0], [0.5, 0, 0]], dtype=complex)
        coeffs = K.dbar_mu_coeffs(pts, k)
        assert np.all(np.abs(coeffs) == 0.0)
        inside = np.array([[np.sqrt(lo * hi), 0, 0]], dtype=complex)
        assert np.max(np.abs(K.dbar_mu_coeffs(inside, k))) > 0.0
        assert K.mu_value(np.array([[0.5, 0, 0]], dtype=complex), k)[0] == 1.0
    # underflow guard at the origin
    tiny = np.array([[1e-310, 0, 0]], dtype=complex)
    assert K.mu_value(tiny, 1)[0] == 0.0
    assert np.all(np.isfinite(K.dbar_mu_coeffs(tiny, 1)))


def test_default_calibration_constants():
    c = K.default_calibration(1)
    assert c.c_K == pytest.approx(-TWO_PI_I)
    assert c.c_P == pytest.approx(TWO_PI_I)


def test_structure_form_link_bound_reported():
    # sup over the unit link of |omega coefficients| * |zeta|^(d - nu) is
    # finite; on the link it is 1 / minors_norm, bounded by the margin
    from conekop.sampling import attach_link_margin, default_chart, solve_fiber

    rng = np.random.default_rng(15)
    for name in ("a1", "fermat3"):
        v = get_variety(name)
        bases = rng.standard_normal((2000, 2)) + 1j * rng.standard_normal((2000, 2))
        pts, valid = solve_fiber(v, default_chart(v), bases)
        nrm = np.sqrt(np.sum(np.abs(pts) ** 2, -1))
        unit = (pts[valid & (nrm > 1e-9)]
                / nrm[valid & (nrm > 1e-9)][:, None])[:2000]
        om = K.structure_form(v, unit)
        mag = np.zeros(len(unit))
        for c in om.terms.values():
            mag += np.abs(c) ** 2
        sup = float(np.max(np.sqrt(mag)))
        margin = attach_link_margin(v, samples=4000).link_regularity_margin
        assert np.isfinite(sup)
        assert sup <= 2.0 / margin  # coefficient norm is 1 / minors norm


def test_calibrate_recovers_default_constants():
    from conekop.sampling import SamplingPlan

    consts = K.calibrate(plan=SamplingPlan(samples=120_000, seed=31,
                                           experiment_id="tcal"))
    assert consts.provenance == "calibrated"
    d = K.default_calibration(1)
    assert abs(consts.c_K - d.c_K) / abs(d.c_K) < 0.1
    assert abs(consts.c_P - d.c_P) / abs(d.c_P) < 0.05
