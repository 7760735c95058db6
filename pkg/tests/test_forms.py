import numpy as np
import pytest

from conekop.forms import (
    DegreeOverflowError,
    FormValue,
    TestForm,
    UniverseMismatchError,
    WrongDegreeError,
    pointwise_norm,
)

N = 3
TWO_PI_I = 2j * np.pi


def e(j, c=1.0):
    return FormValue.generator(N, "e", j, c)


def a(j, c=1.0):
    return FormValue.generator(N, "a", j, c)


def random_form(rng, nterms=6):
    f = FormValue.zero(N)
    for _ in range(nterms):
        mask = int(rng.integers(0, 1 << (3 * N)))
        c = complex(rng.standard_normal(), rng.standard_normal())
        f = f + FormValue(N, {mask: c})
    return f


def random_homogeneous(rng, deg):
    f = FormValue.zero(N)
    for _ in range(8):
        gens = rng.choice(3 * N, size=deg, replace=False)
        mask = 0
        for g in gens:
            mask |= 1 << int(g)
        f = f + FormValue(N, {mask: complex(rng.standard_normal(),
                                            rng.standard_normal())})
    return f


def as_dict(f):
    return {m: complex(c) for m, c in f.terms.items() if abs(complex(c)) > 1e-15}


def test_wedge_anticommutes():
    lhs = e(0).wedge(e(1))
    rhs = e(1).wedge(e(0))
    assert as_dict(lhs) == as_dict((-1.0) * rhs)


def test_wedge_unit():
    one = FormValue.scalar(N, 1.0)
    u = e(0) + a(2, 0.5j)
    assert as_dict(one.wedge(u)) == as_dict(u)


def test_square_of_odd_element_vanishes():
    u = e(0) + a(0)
    assert as_dict(u.wedge(u)) == {}


def test_graded_anticommutativity_random():
    rng = np.random.default_rng(0)
    for deg_u in (1, 2):
        for deg_v in (1, 2, 3):
            u = random_homogeneous(rng, deg_u)
            v = random_homogeneous(rng, deg_v)
            sign = (-1.0) ** (deg_u * deg_v)
            diff = u.wedge(v) + (-sign) * v.wedge(u)
            assert max((abs(complex(c)) for c in diff.terms.values()), default=0.0) < 1e-12


def test_wedge_associative_random():
    rng = np.random.default_rng(4)
    u, v, w = (random_form(rng, 4) for _ in range(3))
    lhs = u.wedge(v).wedge(w)
    rhs = u.wedge(v.wedge(w))
    diff = lhs + (-1.0) * rhs
    assert max((abs(complex(c)) for c in diff.terms.values()), default=0.0) < 1e-12


def test_contract_single_generator():
    eta = np.array([2.0, -1.0 + 1j, 0.5])
    for j in range(N):
        out = e(j).contract_eta(eta)
        assert as_dict(out) == {0: TWO_PI_I * eta[j]}
    # contraction ignores antiholomorphic generators
    assert as_dict(a(1).contract_eta(eta)) == {}


def test_contract_is_antiderivation():
    rng = np.random.default_rng(1)
    eta = rng.standard_normal(N) + 1j * rng.standard_normal(N)
    for deg_u in (1, 2):
        u = random_homogeneous(rng, deg_u)
        v = random_homogeneous(rng, 2)
        lhs = u.wedge(v).contract_eta(eta)
        rhs = u.contract_eta(eta).wedge(v) + ((-1.0) ** deg_u) * u.wedge(
            v.contract_eta(eta))
        diff = lhs + (-1.0) * rhs
        assert max((abs(complex(c)) for c in diff.terms.values()), default=0.0) < 1e-10


def test_contract_squares_to_zero():
    rng = np.random.default_rng(2)
    eta = rng.standard_normal(N) + 1j * rng.standard_normal(N)
    u = random_form(rng, 10)
    dd = u.contract_eta(eta).contract_eta(eta)
    assert max((abs(complex(c)) for c in dd.terms.values()), default=0.0) < 1e-10


def test_bidegree_partition():
    rng = np.random.default_rng(3)
    u = random_form(rng, 12)
    total = FormValue.zero(N)
    for k in range(N + 1):
        total = total + u.bidegree_part(k)
    diff = total + (-1.0) * u
    assert max((abs(complex(c)) for c in diff.terms.values()), default=0.0) == 0.0
    assert as_dict(u.bidegree_part(1).wedge(FormValue.scalar(N, 1.0))) == as_dict(
        u.bidegree_part(1))


def test_extract_top_roundtrip():
    rng = np.random.default_rng(5)
    evol = e(0).wedge(e(1)).wedge(e(2))
    for _ in range(10):
        mask = 0
        for g in rng.choice(2 * N, size=int(rng.integers(0, 3)), replace=False):
            mask |= 1 << (N + int(g))
        kappa = FormValue(N, {mask: complex(rng.standard_normal(),
                                            rng.standard_normal())})
        back = kappa.wedge(evol).extract_top_eta()
        diff = back + (-1.0) * kappa
        assert max((abs(complex(c)) for c in diff.terms.values()), default=0.0) < 1e-14


def test_extract_top_scalar_and_simple():
    evol = e(0).wedge(e(1)).wedge(e(2))
    u = a(0, 5.0).wedge(evol)
    assert as_dict(u.extract_top_eta()) == {1 << N: 5.0}
    assert as_dict(evol.extract_top_eta()) == {0: 1.0}


def test_extract_top_wrong_degree():
    with pytest.raises(WrongDegreeError):
        e(0).wedge(e(1)).extract_top_eta()


def test_universe_mismatch():
    with pytest.raises(UniverseMismatchError):
        FormValue.scalar(2, 1.0).wedge(FormValue.scalar(3, 1.0))


def _volume_form(n, frames_shape=1):
    # ambient volume form of the flat chart spanned by e_0, e_1
    c_vol = (0.5j) ** n * (-1.0 if (n * (n - 1) // 2) & 1 else 1.0)
    f = FormValue(N, {0b11: c_vol})  # e_0 ^ e_1
    f = f.wedge(FormValue(N, {0b11 << N: 1.0}))  # a_0 ^ a_1
    return f


def test_pullback_volume_normalization():
    frames = np.zeros((4, 2, N), dtype=complex)
    frames[:, 0, 0] = 1.0
    frames[:, 1, 1] = 1.0
    dens = _volume_form(2).pullback_surface(frames)
    assert np.allclose(dens[0], 1.0)


def test_pullback_subtop_degree_vanishes():
    frames = np.zeros((2, 2, N), dtype=complex)
    frames[:, 0, 0] = 1.0
    frames[:, 1, 1] = 1.0
    u = FormValue(N, {0b11: 1.0}).wedge(a(0))  # zeta-bidegree (2, 1)
    assert u.pullback_surface(frames) == {}


def test_pullback_overflow_error():
    frames = np.zeros((1, 2, N), dtype=complex)
    frames[:, 0, 0] = 1.0
    frames[:, 1, 1] = 1.0
    u = a(0).wedge(a(1)).wedge(a(2))
    with pytest.raises(DegreeOverflowError):
        u.pullback_surface(frames)


def test_pullback_unitary_frame_invariance():
    rng = np.random.default_rng(8)
    m = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    q, _ = np.linalg.qr(m)
    frames = np.stack([q[:2].conj() for _ in range(3)])
    u = _volume_form(2)
    # rotate e_0 ^ e_1 ^ a_0 ^ a_1 into the rotated frame: build from frame rows
    dens = u.pullback_surface(np.stack([np.eye(N)[:2] for _ in range(3)]))
    assert np.allclose(dens[0], 1.0)


def test_pointwise_norm_values():
    assert pointwise_norm({(): 3.0 + 4.0j}, 0) == pytest.approx(5.0)
    assert pointwise_norm({(0,): 1.0}, 1) == pytest.approx(2.0 ** 0.25)
    rng = np.random.default_rng(9)
    coeffs = {(0,): complex(rng.standard_normal()), (1,): complex(rng.standard_normal())}
    m = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    q, _ = np.linalg.qr(m)
    rotated = {
        (0,): q[0, 0] * coeffs[(0,)] + q[0, 1] * coeffs[(1,)],
        (1,): q[1, 0] * coeffs[(0,)] + q[1, 1] * coeffs[(1,)],
    }
    assert pointwise_norm(rotated, 1) == pytest.approx(pointwise_norm(coeffs, 1),
                                                       abs=1e-10)


def test_frame_components_identity_frame():
    frames = np.stack([np.eye(N)[:2] for _ in range(2)]).astype(complex)
    phi = a(0, 2.0) + a(1, -1.0j)
    comps = phi.frame_components(frames)
    assert np.allclose(comps[(0,)], 2.0)
    assert np.allclose(comps[(1,)], -1.0j)


@pytest.mark.parametrize("maker", [
    lambda: TestForm.zbar_bump(N, 0, 0.6, 1.1),
    lambda: TestForm.one_form_bump(N, 0, 1, 0.5, 1.0),
    lambda: TestForm.radial_bump(N, 0.4, 0.9),
])
def test_testform_gradient_check(maker):
    # finite-difference dbar of the coefficients matches the closed form
    tf = maker()
    d = tf.dbar()
    rng = np.random.default_rng(12)
    pts = 0.45 * (rng.standard_normal((30, N)) + 1j * rng.standard_normal((30, N)))
    h = 1e-5
    closed = d.eval(pts)
    for newI in closed:
        fd_total = np.zeros(pts.shape[0], dtype=complex)
        for pos, j in enumerate(newI):
            rest = newI[:pos] + newI[pos + 1:]
            if rest not in tf.coeffs:
                continue
            sgn = (-1.0) ** pos
            ej = np.zeros(N, complex)
            ej[j] = 1.0
            fp = tf.eval(pts + h * ej)[rest]
            fm = tf.eval(pts - h * ej)[rest]
            gp = tf.eval(pts + 1j * h * ej)[rest]
            gm = tf.eval(pts - 1j * h * ej)[rest]
            fd_total += sgn * ((fp - fm) + 1j * (gp - gm)) / (4 * h)
        scale = max(float(np.max(np.abs(closed[newI]))), 1e-6)
        assert np.max(np.abs(fd_total - closed[newI])) < 1e-6 * max(scale, 1.0)


def test_testform_holomorphic_has_zero_dbar():
    tf = TestForm.holomorphic_monomial(N, [1, 1, 0])
    assert tf.window is None
    d = tf.dbar()
    pts = np.array([[0.3, 0.4, 0.1]], dtype=complex)
    assert all(np.allclose(v, 0.0) for v in d.eval(pts).values())
