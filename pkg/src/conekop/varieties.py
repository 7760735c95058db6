"""Affine cones over smooth projective complete intersections.

A variety is cut out of C^N by a tuple of homogeneous polynomials.  This
module evaluates the tuple, its Jacobian and minors, produces divided
difference coefficients relating values at two points (the exactness data the
kernel construction needs), and exposes the degree-based exponent thresholds
that govern the mapping properties of the integral operators.

All evaluation routines are vectorized: points may be passed as a single
complex N-vector or as an array of shape (batch, N).
"""

from __future__ import annotations

import itertools
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MultiIndexPoly",
    "ConeVariety",
    "HeferMatrix",
    "Thresholds",
    "DegenerateExponentError",
    "catalog_names",
    "get_variety",
    "variety_from_json",
]


class DegenerateExponentError(ValueError):
    """The pole degree d - nu reaches 2n, outside the operator hypotheses."""


class MultiIndexPoly:
    """Homogeneous polynomial in N complex variables, sparse monomial storage."""

    __slots__ = ("num_vars", "exps", "coeffs", "degree")

    def __init__(self, num_vars: int, exps, coeffs):
        exps = np.asarray(exps, dtype=np.int64).reshape(-1, num_vars)
        coeffs = np.asarray(coeffs, dtype=complex).reshape(-1)
        keep = coeffs != 0
        exps, coeffs = exps[keep], coeffs[keep]
        if exps.shape[0] == 0:
            raise ValueError("polynomial must have at least one nonzero term")
        if np.any(exps < 0):
            raise ValueError("negative exponents")
        degs = exps.sum(axis=1)
        if not np.all(degs == degs[0]):
            raise ValueError("polynomial is not homogeneous")
        self.num_vars = num_vars
        self.exps = exps
        self.coeffs = coeffs
        self.degree = int(degs[0])

    @classmethod
    def from_dict(cls, num_vars: int, terms: dict) -> "MultiIndexPoly":
        return cls(num_vars, list(terms.keys()), list(terms.values()))

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=complex)
        vals = np.zeros(pts.shape[:-1], dtype=complex)
        for e, c in zip(self.exps, self.coeffs):
            term = np.full(pts.shape[:-1], c)
            for j in range(self.num_vars):
                if e[j]:
                    term = term * pts[..., j] ** int(e[j])
            vals += term
        return vals

    def partial(self, j: int) -> "MultiIndexPoly | None":
        keep = self.exps[:, j] > 0
        if not np.any(keep):
            return None
        exps = self.exps[keep].copy()
        coeffs = self.coeffs[keep] * exps[:, j]
        exps[:, j] -= 1
        return MultiIndexPoly(self.num_vars, exps, coeffs)


@dataclass(frozen=True)
class HeferMatrix:
    """Divided-difference coefficients H with sum_j (zeta_j - z_j) H[i,j] = f_i(zeta) - f_i(z).

    entries has shape (..., nu, N); convention_scale records that the stored
    values are raw divided differences (the 2 pi i of the interior product is
    applied by the kernel assembly, never here).
    """

    entries: np.ndarray
    convention_scale: complex = 1.0


@dataclass(frozen=True)
class Thresholds:
    p_min: float
    p_min_w: float
    canonical: bool
    main1_applicable: bool
    main4_applicable: bool


@dataclass(frozen=True)
class ConeVariety:
    """Affine cone X = {f = 0} in C^N of codimension nu and dimension n = N - nu."""

    name: str
    ambient_dim: int
    polys: tuple
    link_regularity_margin: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim X = N - nu must be at least 1")
        for p in self.polys:
            if p.num_vars != self.ambient_dim:
                raise ValueError("polynomial arity does not match ambient_dim")
            if p.degree < 1:
                raise ValueError("defining polynomials must have degree >= 1")

    # ----- basic invariants ------------------------------------------------

    @property
    def codim(self) -> int:
        return len(self.polys)

    @property
    def nu(self) -> int:
        return len(self.polys)

    @property
    def dim(self) -> int:
        return self.ambient_dim - self.codim

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(p.degree for p in self.polys)

    @property
    def total_degree(self) -> int:
        return sum(self.degrees)

    # ----- evaluation ---------------------------------------------------

    def eval_tuple(self, pts) -> np.ndarray:
        """Values (f_1, ..., f_nu); shape (..., nu)."""
        pts = np.asarray(pts, dtype=complex)
        return np.stack([p(pts) for p in self.polys], axis=-1)

    def jacobian(self, pts) -> np.ndarray:
        """Partial derivatives; shape (..., nu, N)."""
        pts = np.asarray(pts, dtype=complex)
        N = self.ambient_dim
        rows = []
        for p in self.polys:
            row = []
            for j in range(N):
                dp = p.partial(j)
                if dp is None:
                    row.append(np.zeros(pts.shape[:-1], dtype=complex))
                else:
                    row.append(dp(pts))
            rows.append(np.stack(row, axis=-1))
        return np.stack(rows, axis=-2)

    def minors(self, pts) -> np.ndarray:
        """All (nu x nu) minors of the Jacobian; shape (..., C(N, nu))."""
        J = self.jacobian(pts)
        nu, N = self.nu, self.ambient_dim
        if nu == 1:
            return J[..., 0, :]
        cols = list(itertools.combinations(range(N), nu))
        out = [np.linalg.det(J[..., idx]) for idx in cols]
        return np.stack(out, axis=-1)

    def minors_norm(self, pts) -> np.ndarray:
        """Euclidean norm of the minor tuple; (d - nu)-homogeneous."""
        m = self.minors(pts)
        return np.sqrt(np.sum(np.abs(m) ** 2, axis=-1))

    # ----- divided differences --------------------------------------------

    def hefer_coeffs(self, zeta, z) -> HeferMatrix:
        """Coordinate-telescoping divided differences in index order 1..N.

        For a monomial c * prod x_k^(a_k) the j-th telescoping slot picks up
        c * prod_{k<j} z_k^(a_k) * (sum_t zeta_j^t z_j^(a_j-1-t)) * prod_{k>j} zeta_k^(a_k),
        which is bihomogeneous of total degree d_i - 1 and exactly restores
        f_i(zeta) - f_i(z) after contraction with zeta - z.
        """
        zeta = np.asarray(zeta, dtype=complex)
        z = np.asarray(z, dtype=complex)
        zeta, z = np.broadcast_arrays(zeta, z)
        N = self.ambient_dim
        shape = zeta.shape[:-1]
        H = np.zeros(shape + (self.nu, N), dtype=complex)
        for i, p in enumerate(self.polys):
            for e, c in zip(p.exps, p.coeffs):
                prefix = np.full(shape, c)
                # suffix[j] = prod_{k>j} zeta_k^(a_k), built backwards once
                suffix = [np.ones(shape, dtype=complex)]
                for k in range(N - 1, 0, -1):
                    s = suffix[0]
                    if e[k]:
                        s = s * zeta[..., k] ** int(e[k])
                    suffix.insert(0, s)
                for j in range(N):
                    a = int(e[j])
                    if a > 0:
                        # divided difference of the single-variable power
                        dd = np.zeros(shape, dtype=complex)
                        for t in range(a):
                            dd = dd + zeta[..., j] ** t * z[..., j] ** (a - 1 - t)
                        H[..., i, j] += prefix * dd * suffix[j]
                        prefix = prefix * z[..., j] ** a
        return HeferMatrix(H)

    # ----- thresholds ----------------------------------------------------

    def thresholds(self) -> Thresholds:
        n = self.dim
        d = self.total_degree
        nu = self.nu
        if d - nu >= 2 * n:
            raise DegenerateExponentError(
                f"d - nu = {d - nu} >= 2n = {2 * n}: integrability threshold undefined"
            )
        p_min = 2 * n / (2 * n - (d - nu))
        denom_w = 2 * n - (d - nu + 1)
        p_min_w = math.inf if denom_w <= 0 else 2 * n / denom_w
        return Thresholds(
            p_min=p_min,
            p_min_w=p_min_w,
            canonical=(d <= self.ambient_dim - 1),
            main1_applicable=(d <= 2 * n + nu - 1),
            main4_applicable=(d < 2 * n + nu - 1),
        )

    # ----- regularity of the link ------------------------------------------

    def with_link_margin(self, margin: float) -> "ConeVariety":
        return ConeVariety(self.name, self.ambient_dim, self.polys, margin)


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------


def _fermat(d: int) -> ConeVariety:
    terms = {}
    for j in range(3):
        e = [0, 0, 0]
        e[j] = d
        terms[tuple(e)] = 1.0
    poly = MultiIndexPoly.from_dict(3, terms)
    return ConeVariety(f"fermat{d}", 3, (poly,))


def _hyperplane() -> ConeVariety:
    poly = MultiIndexPoly.from_dict(3, {(0, 0, 1): 1.0})
    return ConeVariety("hyperplane", 3, (poly,))


def _ci22() -> ConeVariety:
    # pencil of diagonal quadrics in C^4 with distinct eigenvalues: the
    # projective intersection is a smooth genus-one curve
    f1 = MultiIndexPoly.from_dict(
        4, {(2, 0, 0, 0): 1.0, (0, 2, 0, 0): 1.0, (0, 0, 2, 0): 1.0, (0, 0, 0, 2): 1.0}
    )
    f2 = MultiIndexPoly.from_dict(
        4, {(0, 2, 0, 0): 1.0, (0, 0, 2, 0): 2.0, (0, 0, 0, 2): 3.0}
    )
    return ConeVariety("ci22", 4, (f1, f2))


_FERMAT_RE = re.compile(r"^fermat([0-9]+)$")


def catalog_names() -> list[str]:
    return ["hyperplane", "a1", "fermat2", "fermat3", "fermat4", "ci22"]


def get_variety(name: str) -> ConeVariety:
    """Look up a catalog variety by name.

    Raises KeyError with an explanatory message for names outside the
    catalog, including fermat degrees violating the low-degree hypothesis.
    """
    if name == "hyperplane":
        return _hyperplane()
    if name == "a1":
        v = _fermat(2)
        return ConeVariety("a1", 3, v.polys)
    m = _FERMAT_RE.match(name)
    if m:
        d = int(m.group(1))
        if d not in (2, 3, 4):
            raise KeyError(
                f"fermat{d} is not in the catalog: degree d={d} violates "
                f"d <= 2n + nu - 1 = 4 for surfaces in C^3"
            )
        return _fermat(d)
    if name == "ci22":
        return _ci22()
    raise KeyError(f"unknown variety {name!r}; catalog: {', '.join(catalog_names())}")


def variety_from_json(path_or_obj) -> ConeVariety:
    """Load a custom variety from a JSON document.

    Schema: {"ambient_dim": int, "polys": [[{"exp": [int...], "re": float,
    "im": float}, ...], ...], "name": optional str}.
    """
    if isinstance(path_or_obj, (str,)):
        with open(path_or_obj) as fh:
            obj = json.load(fh)
    else:
        obj = path_or_obj
    N = int(obj["ambient_dim"])
    polys = []
    for spec in obj["polys"]:
        terms = {}
        for t in spec:
            exp = tuple(int(e) for e in t["exp"])
            if len(exp) != N:
                raise ValueError("exponent vector length does not match ambient_dim")
            terms[exp] = terms.get(exp, 0.0) + complex(t.get("re", 0.0), t.get("im", 0.0))
        polys.append(MultiIndexPoly.from_dict(N, terms))
    return ConeVariety(str(obj.get("name", "custom")), N, tuple(polys))
