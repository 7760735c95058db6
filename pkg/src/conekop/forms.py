"""Exterior algebra engine over ambient complex generators.

The generator universe for ambient dimension N consists of 3N anticommuting
generators, indexed by bit position in a mask:

    bits 0..N-1      e_j  : holomorphic generators (d eta_j, alias d zeta_j)
    bits N..2N-1     a_j  : antiholomorphic generators in the integration
                            variable (d zeta_bar_j)
    bits 2N..3N-1    b_j  : antiholomorphic generators in the output
                            variable (d z_bar_j)

A form value is a sparse map from canonically ordered generator subsets
(ascending bit order) to complex coefficients.  Coefficients may be scalars
or numpy arrays, so a single FormValue can hold a whole batch of pointwise
evaluations; all operations broadcast over the batch axis.

The antiholomorphic differential of eta = zeta - z is expanded eagerly as
a_j - b_j by the kernel constructors, so no eta-bar generator exists here.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "FormValue",
    "TestForm",
    "UniverseMismatchError",
    "WrongDegreeError",
    "DegreeOverflowError",
    "pointwise_norm",
    "smoothstep",
    "smoothstep_deriv",
]

TWO_PI_I = 2j * np.pi


class UniverseMismatchError(ValueError):
    """Operands live over different generator universes."""


class WrongDegreeError(ValueError):
    """Top extraction applied to a form that is not of full e-degree."""


class DegreeOverflowError(ValueError):
    """Surface pullback of a form whose zeta-bar degree exceeds dim X."""


# Signs of wedge reorderings recur for a handful of mask pairs, so memoize.
_SIGN_CACHE: dict[tuple[int, int], int] = {}


def _wedge_sign(ma: int, mb: int) -> int:
    """Sign of reordering (sorted ma) wedge (sorted mb) into canonical order."""
    key = (ma, mb)
    s = _SIGN_CACHE.get(key)
    if s is None:
        inv = 0
        b = mb
        while b:
            low = b & -b
            i = low.bit_length() - 1
            inv += (ma >> (i + 1)).bit_count()
            b ^= low
        s = -1 if inv & 1 else 1
        _SIGN_CACHE[key] = s
    return s


def _is_zero(c) -> bool:
    if isinstance(c, np.ndarray):
        return False  # batch coefficients are kept even if momentarily zero
    return c == 0


class FormValue:
    """Sparse element of the exterior algebra over 3N generators."""

    __slots__ = ("N", "terms")

    def __init__(self, N: int, terms: dict | None = None):
        self.N = N
        self.terms = {} if terms is None else terms

    # ----- constructors -------------------------------------------------

    @classmethod
    def scalar(cls, N: int, value) -> "FormValue":
        return cls(N, {0: value})

    @classmethod
    def zero(cls, N: int) -> "FormValue":
        return cls(N, {})

    @classmethod
    def generator(cls, N: int, kind: str, j: int, coeff=1.0) -> "FormValue":
        """Single generator term; kind is one of 'e', 'a', 'b'."""
        offset = {"e": 0, "a": N, "b": 2 * N}[kind]
        return cls(N, {1 << (offset + j): coeff})

    # ----- mask helpers -------------------------------------------------

    def e_mask(self) -> int:
        return (1 << self.N) - 1

    def _check(self, other: "FormValue"):
        if self.N != other.N:
            raise UniverseMismatchError(
                f"generator universes differ: N={self.N} vs N={other.N}"
            )

    # ----- linear structure ----------------------------------------------

    def __add__(self, other: "FormValue") -> "FormValue":
        self._check(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            if m in out:
                s = out[m] + c
                if _is_zero(s):
                    del out[m]
                else:
                    out[m] = s
            else:
                out[m] = c
        return FormValue(self.N, out)

    def __sub__(self, other: "FormValue") -> "FormValue":
        return self + (-1.0) * other

    def __neg__(self) -> "FormValue":
        return (-1.0) * self

    def __rmul__(self, c) -> "FormValue":
        if _is_zero(c):
            return FormValue.zero(self.N)
        return FormValue(self.N, {m: c * v for m, v in self.terms.items()})

    def scale(self, c) -> "FormValue":
        return self.__rmul__(c)

    # ----- graded multiplication ------------------------------------------

    def wedge(self, other: "FormValue") -> "FormValue":
        self._check(other)
        out: dict = {}
        for ma, ca in self.terms.items():
            for mb, cb in other.terms.items():
                if ma & mb:
                    continue
                s = _wedge_sign(ma, mb)
                m = ma | mb
                c = ca * cb if s == 1 else -(ca * cb)
                if m in out:
                    acc = out[m] + c
                    if _is_zero(acc):
                        del out[m]
                    else:
                        out[m] = acc
                else:
                    out[m] = c
        return FormValue(self.N, out)

    def wedge_power(self, k: int) -> "FormValue":
        """k-fold wedge of self with itself (k >= 0)."""
        acc = FormValue.scalar(self.N, 1.0)
        for _ in range(k):
            acc = acc.wedge(self)
        return acc

    # ----- interior multiplication -----------------------------------------

    def contract_eta(self, eta: np.ndarray) -> "FormValue":
        """Interior product with the field 2 pi i * sum eta_j d/d(eta_j).

        Acts on e-generators only, as an antiderivation of degree -1.
        eta has shape (N,) or (batch, N); coefficients broadcast.
        """
        eta = np.asarray(eta)
        out: dict = {}
        emask = self.e_mask()
        for m, c in self.terms.items():
            eb = m & emask
            while eb:
                low = eb & -eb
                j = low.bit_length() - 1
                below = (m & (low - 1)).bit_count()
                sgn = -1.0 if below & 1 else 1.0
                coeff = (sgn * TWO_PI_I) * eta[..., j] * c
                mm = m ^ low
                if mm in out:
                    out[mm] = out[mm] + coeff
                else:
                    out[mm] = coeff
                eb ^= low
        return FormValue(self.N, out)

    # ----- degree bookkeeping ------------------------------------------------

    def bidegree_part(self, e_degree: int) -> "FormValue":
        """Terms carrying exactly e_degree holomorphic generators."""
        emask = self.e_mask()
        return FormValue(
            self.N,
            {m: c for m, c in self.terms.items() if (m & emask).bit_count() == e_degree},
        )

    def anti_degrees(self) -> set[tuple[int, int]]:
        """Set of (a-degree, b-degree) pairs present."""
        emask = self.e_mask()
        amask = emask << self.N
        bmask = emask << (2 * self.N)
        return {
            ((m & amask).bit_count(), (m & bmask).bit_count()) for m in self.terms
        }

    def restricted_to_dim(self, n: int) -> "FormValue":
        """Drop terms whose zeta-bar degree exceeds n.

        Such terms vanish identically on any n-dimensional complex
        submanifold, so this is the restriction a surface pullback implies.
        """
        amask = self.e_mask() << self.N
        return FormValue(
            self.N,
            {m: c for m, c in self.terms.items() if (m & amask).bit_count() <= n},
        )

    def extract_top_eta(self) -> "FormValue":
        """Solve u = kappa ^ (e_1 ^ ... ^ e_N) for the anti-generator form kappa."""
        emask = self.e_mask()
        out: dict = {}
        for m, c in self.terms.items():
            if m & emask != emask:
                raise WrongDegreeError("term without full e-degree in top extraction")
            rest = m ^ emask
            # kappa_S ^ e_top = (-1)^(N*|S|) e_top ^ kappa_S
            sgn = -1.0 if (self.N * rest.bit_count()) & 1 else 1.0
            out[rest] = sgn * c if sgn < 0 else c
        return FormValue(self.N, out)

    # ----- restriction to the surface ----------------------------------------

    def pullback_surface(self, frames: np.ndarray) -> dict[int, np.ndarray]:
        """Densities of the (n,n) top part against dV_X, per dz-bar subset.

        frames has shape (batch, n, N); row k is the k-th orthonormal tangent
        vector.  Holomorphic generators pull back through the frame matrix,
        zeta-bar generators through its conjugate, z-bar generators survive
        as output indices.  The normalization is fixed so that the pullback
        of the induced volume form of X has density exactly 1 at the empty
        dz-bar subset.
        """
        frames = np.asarray(frames)
        n = frames.shape[-2]
        nb = frames.shape[0] if frames.ndim == 3 else 1
        emask = self.e_mask()
        amask = emask << self.N
        # volume form in frame coordinates: dV = c_vol * dw_top ^ dwbar_top
        c_vol = (0.5j) ** n * (-1.0 if (n * (n - 1) // 2) & 1 else 1.0)
        det_cache: dict[tuple[str, int], np.ndarray] = {}

        def _det(cols: tuple[int, ...], conj: bool) -> np.ndarray:
            key = ("c" if conj else "h", cols)
            d = det_cache.get(key)
            if d is None:
                sub = frames[..., cols]
                if conj:
                    sub = np.conj(sub)
                d = np.linalg.det(sub)
                det_cache[key] = d
            return d

        out: dict[int, np.ndarray] = {}
        for m, c in self.terms.items():
            ae = m & emask
            aa = (m & amask) >> self.N
            if aa.bit_count() > n:
                raise DegreeOverflowError("zeta-bar degree exceeds dim X")
            if ae.bit_count() != n or aa.bit_count() != n:
                continue  # only the (n,n) part in zeta survives integration
            ecols = _bits(ae)
            acols = _bits(aa)
            dens = c * _det(ecols, False) * _det(acols, True) / c_vol
            bkey = m >> (2 * self.N)
            if bkey in out:
                out[bkey] = out[bkey] + dens
            else:
                out[bkey] = dens * np.ones(nb) if np.ndim(dens) == 0 else dens
        return out


    def frame_components(self, frames: np.ndarray) -> dict[tuple[int, ...], np.ndarray]:
        """Coefficients of a pure (0,q) form in the orthonormal coframe.

        Terms must carry only a-generators; the returned dict maps sorted
        frame-index tuples to batched coefficients, which is the minimal
        representation used by the intrinsic norm.
        """
        import itertools as it

        frames = np.asarray(frames)
        n = frames.shape[-2]
        emask = self.e_mask()
        out: dict[tuple[int, ...], np.ndarray] = {}
        for m, c in self.terms.items():
            if m & emask or m >> (2 * self.N):
                raise WrongDegreeError("frame components require a pure (0,q) form")
            acols = _bits(m >> self.N)
            q = len(acols)
            Mc = np.conj(frames[..., acols])
            for K in it.combinations(range(n), q):
                sub = Mc[..., K, :]
                d = np.linalg.det(sub) if q else np.ones(frames.shape[0])
                prev = out.get(K)
                out[K] = c * d if prev is None else prev + c * d
        return out


def _bits(mask: int) -> tuple[int, ...]:
    cols = []
    while mask:
        low = mask & -mask
        cols.append(low.bit_length() - 1)
        mask ^= low
    return tuple(cols)


def pointwise_norm(coeffs: dict, q: int):
    """Intrinsic norm of a (0,q) form given minimal-frame coefficients.

    coeffs maps coframe multi-indices to (batched) complex values; the value
    returned is (sqrt(2)^q * sum |c_I|^2)^(1/2), matching the convention that
    a single antiholomorphic coframe differential has norm 2^(1/4) per degree.
    """
    tot = 0.0
    for c in coeffs.values():
        tot = tot + np.abs(c) ** 2
    return np.sqrt(np.sqrt(2.0) ** q * tot)


# ---------------------------------------------------------------------------
# polynomial smoothstep window
# ---------------------------------------------------------------------------


def smoothstep(t):
    """Quintic smoothstep: 0 below 0, 1 above 1, C^2 transition."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def smoothstep_deriv(t):
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    tc = np.clip(t, 0.0, 1.0)
    d = 30.0 * tc * tc * (tc - 1.0) * (tc - 1.0)
    return np.where(inside, d, 0.0)


class _Window:
    """Radial window w(|zeta|^2): 1 inside r_lo, 0 outside r_hi, quintic between."""

    __slots__ = ("x0", "x1")

    def __init__(self, r_lo: float, r_hi: float):
        if not 0.0 < r_lo < r_hi:
            raise ValueError("window radii must satisfy 0 < r_lo < r_hi")
        self.x0 = r_lo * r_lo
        self.x1 = r_hi * r_hi

    def value(self, x, order: int):
        if order == 0:
            return 1.0 - smoothstep((x - self.x0) / (self.x1 - self.x0))
        if order == 1:
            return -smoothstep_deriv((x - self.x0) / (self.x1 - self.x0)) / (
                self.x1 - self.x0
            )
        raise ValueError("window derivatives beyond first order are not stored")


class _PolyZZbar:
    """Polynomial in (zeta, zeta_bar) with sparse complex coefficients."""

    __slots__ = ("N", "exps", "coeffs")

    def __init__(self, N: int, exps: np.ndarray, coeffs: np.ndarray):
        self.N = N
        self.exps = np.asarray(exps, dtype=np.int64).reshape(-1, 2 * N)
        self.coeffs = np.asarray(coeffs, dtype=complex).reshape(-1)

    @classmethod
    def from_terms(cls, N: int, terms: dict) -> "_PolyZZbar":
        """terms maps (zeta_exp tuple, zetabar_exp tuple) -> coefficient."""
        exps = []
        coeffs = []
        for (ez, ezb), c in terms.items():
            exps.append(list(ez) + list(ezb))
            coeffs.append(c)
        if not exps:
            exps = np.zeros((0, 2 * N), dtype=np.int64)
        return cls(N, np.asarray(exps), np.asarray(coeffs))

    def __call__(self, pts: np.ndarray):
        if self.coeffs.size == 0:
            return np.zeros(pts.shape[:-1], dtype=complex)
        z = pts
        zb = np.conj(pts)
        vals = 0.0
        for e, c in zip(self.exps, self.coeffs):
            term = c * np.ones(pts.shape[:-1], dtype=complex)
            for j in range(self.N):
                if e[j]:
                    term = term * z[..., j] ** int(e[j])
                if e[self.N + j]:
                    term = term * zb[..., j] ** int(e[self.N + j])
            vals = vals + term
        return vals

    def dzbar(self, j: int) -> "_PolyZZbar":
        keep = self.exps[:, self.N + j] > 0
        exps = self.exps[keep].copy()
        coeffs = self.coeffs[keep] * exps[:, self.N + j]
        exps[:, self.N + j] -= 1
        return _PolyZZbar(self.N, exps, coeffs)

    def mul_z(self, j: int) -> "_PolyZZbar":
        exps = self.exps.copy()
        exps[:, j] += 1
        return _PolyZZbar(self.N, exps, self.coeffs.copy())

    def is_zero(self) -> bool:
        return self.coeffs.size == 0


class TestForm:
    """Smooth ambient (0,q) test input with a closed-form dbar.

    Coefficients are sums of terms  poly(zeta, zeta_bar) * w^(k)(|zeta|^2)
    where w is a polynomial smoothstep window (or identically 1).  The dbar
    of such a form is again of the same shape, so differentials never have
    to be taken numerically.
    """

    __test__ = False  # not a pytest class, despite the name

    def __init__(self, N: int, q: int, coeffs: dict, window: _Window | None,
                 label: str = ""):
        # coeffs: multi-index tuple (sorted, len q) -> list[(poly, window order)]
        self.N = N
        self.q = q
        self.coeffs = coeffs
        self.window = window
        self.label = label

    # ----- catalog constructors -----------------------------------------

    @classmethod
    def constant(cls, N: int, value=1.0) -> "TestForm":
        p = _PolyZZbar.from_terms(N, {(tuple([0] * N), tuple([0] * N)): value})
        return cls(N, 0, {(): [(p, 0)]}, None, label="const")

    @classmethod
    def holomorphic_monomial(cls, N: int, exponents, value=1.0) -> "TestForm":
        p = _PolyZZbar.from_terms(N, {(tuple(exponents), tuple([0] * N)): value})
        return cls(N, 0, {(): [(p, 0)]}, None,
                   label="holo" + "".join(str(e) for e in exponents))

    @classmethod
    def zbar_bump(cls, N: int, j: int, r_lo: float, r_hi: float) -> "TestForm":
        """zeta_bar_j times a radial window; the standard non-holomorphic probe."""
        ezb = [0] * N
        ezb[j] = 1
        p = _PolyZZbar.from_terms(N, {(tuple([0] * N), tuple(ezb)): 1.0})
        return cls(N, 0, {(): [(p, 0)]}, _Window(r_lo, r_hi),
                   label=f"zbar{j}_bump")

    @classmethod
    def radial_bump(cls, N: int, r_lo: float, r_hi: float) -> "TestForm":
        p = _PolyZZbar.from_terms(N, {(tuple([0] * N), tuple([0] * N)): 1.0})
        return cls(N, 0, {(): [(p, 0)]}, _Window(r_lo, r_hi), label="radial_bump")

    @classmethod
    def one_form_bump(cls, N: int, comp: int, j_bar: int,
                      r_lo: float, r_hi: float) -> "TestForm":
        """(0,1) probe: zeta_bar_{j_bar} * window on the d zeta_bar_comp slot."""
        ezb = [0] * N
        ezb[j_bar] = 1
        p = _PolyZZbar.from_terms(N, {(tuple([0] * N), tuple(ezb)): 1.0})
        return cls(N, 1, {(comp,): [(p, 0)]}, _Window(r_lo, r_hi),
                   label=f"oneform{comp}")

    # ----- evaluation ----------------------------------------------------

    def _coeff_value(self, terms, pts, x):
        val = 0.0
        for poly, order in terms:
            pv = poly(pts)
            if self.window is None:
                if order == 0:
                    val = val + pv
            else:
                val = val + pv * self.window.value(x, order)
        return val + np.zeros(pts.shape[:-1], dtype=complex)

    def eval(self, pts: np.ndarray) -> dict:
        """Coefficients per ambient dzeta-bar multi-index at pts (batch, N)."""
        pts = np.asarray(pts, dtype=complex)
        x = np.sum(np.abs(pts) ** 2, axis=-1)
        return {I: self._coeff_value(terms, pts, x) for I, terms in self.coeffs.items()}

    def form_value(self, pts: np.ndarray) -> FormValue:
        """The same data as a FormValue over a-generators."""
        vals = self.eval(pts)
        terms = {}
        for I, v in vals.items():
            mask = 0
            for idx in I:
                mask |= 1 << (self.N + idx)
            terms[mask] = v
        return FormValue(self.N, terms)

    def dbar(self) -> "TestForm":
        """Closed-form dbar, a (0,q+1) TestForm over the same window."""
        out: dict = {}

        def _add(I, poly, order):
            if poly.is_zero():
                return
            out.setdefault(I, []).append((poly, order))

        for I, terms in self.coeffs.items():
            for poly, order in terms:
                for j in range(self.N):
                    if j in I:
                        continue
                    smaller = sum(1 for i in I if i < j)
                    sgn = -1.0 if smaller & 1 else 1.0
                    newI = tuple(sorted(I + (j,)))
                    dp = poly.dzbar(j)
                    if not dp.is_zero():
                        dp.coeffs *= sgn
                        _add(newI, dp, order)
                    if self.window is not None:
                        wp = poly.mul_z(j)
                        wp.coeffs *= sgn
                        _add(newI, wp, order + 1)
        return TestForm(self.N, self.q + 1, out, self.window,
                        label=self.label + "_dbar")

    def eval_scalar(self, pts: np.ndarray):
        """Value of a (0,0) form as a plain array."""
        if self.q != 0:
            raise ValueError("eval_scalar requires a (0,0) form")
        return self.eval(pts)[()]
