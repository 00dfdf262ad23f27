"""B-spline and NURBS machinery for body-fitted 2D grids.

Knot vectors, Cox-de Boor basis evaluation, rational tensor-product
patches, geometry mappings with Jacobian data, and builders for the
bundled benchmark domains (boxes, a wavy quadrilateral, a quarter
annulus with exact circular edges).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GeometryError",
    "SingularMapError",
    "KnotVector",
    "NurbsPatch2D",
    "JacobianData",
    "find_span",
    "eval_basis",
    "eval_basis_derivs",
    "eval_nurbs2d",
    "map_point",
    "jacobian",
    "greville_points",
    "build_geometry",
    "GEOMETRY_BUILDERS",
    "dump_patch",
]

_DOMAIN_TOL = 1e-12
_SINGULAR_TOL = 1e-12


class GeometryError(ValueError):
    """A patch cannot be constructed or evaluated as requested."""


class SingularMapError(GeometryError):
    """The geometry map is numerically non-invertible at a parameter point."""


@dataclass(frozen=True)
class KnotVector:
    """Nondecreasing knot sequence defining a univariate spline basis.

    Clamped (open) vectors store the usual knot array of length
    ``n_basis + degree + 1`` with both end knots repeated ``degree + 1``
    times.  Periodic vectors store a uniform array padded with enough
    ghost knots on each side to evaluate any basis function whose
    support crosses the seam; basis indices then wrap modulo
    ``n_basis``.  For periodic vectors ``knots[k]`` holds the knot with
    logical index ``k - degree`` and the parametric window is
    ``[0, period)``.
    """

    knots: np.ndarray
    degree: int
    n_basis: int
    periodic: bool = False
    period: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "knots", np.ascontiguousarray(self.knots, dtype=float))
        p, n, k = self.degree, self.n_basis, self.knots
        if p < 0:
            raise GeometryError("degree must be nonnegative")
        if np.any(np.diff(k) < 0):
            raise GeometryError("knots must be nondecreasing")
        if self.periodic:
            if n <= p:
                raise GeometryError(
                    f"periodic basis needs n_basis > degree, got {n} <= {p}"
                )
            if self.period <= 0:
                raise GeometryError("periodic vector needs a positive period")
        else:
            if len(k) != n + p + 1:
                raise GeometryError(
                    f"clamped vector needs {n + p + 1} knots, got {len(k)}"
                )
            if not (np.all(k[: p + 1] == k[0]) and np.all(k[n:] == k[-1])):
                raise GeometryError("clamped vector must repeat end knots degree+1 times")
            if k[p] >= k[n]:
                raise GeometryError("knot vector has no nonempty span")
            interior = k[p + 1 : n]
            if interior.size:
                _, counts = np.unique(interior, return_counts=True)
                if np.any(counts > p):
                    raise GeometryError("interior knot multiplicity exceeds degree")

    @property
    def domain(self) -> tuple[float, float]:
        if self.periodic:
            return 0.0, self.period
        return float(self.knots[self.degree]), float(self.knots[self.n_basis])

    @classmethod
    def clamped_uniform(cls, n_elements: int, degree: int, lo: float = 0.0, hi: float = 1.0):
        """Open knot vector with ``n_elements`` equal spans on [lo, hi]."""
        if n_elements < 1:
            raise GeometryError("need at least one element")
        interior = np.linspace(lo, hi, n_elements + 1)[1:-1]
        knots = np.concatenate([np.full(degree + 1, lo), interior, np.full(degree + 1, hi)])
        return cls(knots, degree, n_elements + degree, periodic=False)

    @classmethod
    def from_knots(cls, knots, degree: int):
        knots = np.asarray(knots, dtype=float)
        return cls(knots, degree, len(knots) - degree - 1, periodic=False)

    @classmethod
    def periodic_uniform(cls, n_basis: int, degree: int, period: float = 1.0):
        """Uniform unclamped vector; Greville abscissae land on i*period/n."""
        h = period / n_basis
        j = np.arange(-degree, n_basis + 2 * degree + 2, dtype=float)
        knots = h * (j - (degree + 1) / 2.0)
        return cls(knots, degree, n_basis, periodic=True, period=period)


def find_span(kv: KnotVector, xi: float) -> int:
    """Index of the knot span containing ``xi``.

    Left-closed convention; a parameter equal to the right end of the
    domain evaluates in the last nonempty span.  Periodic vectors accept
    any real and return the logical span of ``xi`` reduced mod period.
    """
    p, n = kv.degree, kv.n_basis
    if kv.periodic:
        t = xi % kv.period
        h = kv.period / n
        return int(math.floor(t / h + (p + 1) / 2.0))
    knots = kv.knots
    lo, hi = knots[p], knots[n]
    if xi < lo - _DOMAIN_TOL or xi > hi + _DOMAIN_TOL:
        raise GeometryError(f"parameter {xi!r} outside domain [{lo}, {hi}]")
    if xi >= hi:
        return int(np.searchsorted(knots, hi, side="left")) - 1
    return int(np.searchsorted(knots, max(xi, lo), side="right")) - 1


def _basis_funs(knots: np.ndarray, span: int, xi: float, p: int) -> np.ndarray:
    """The p+1 nonzero basis values at ``xi`` (span is an index into ``knots``)."""
    vals = np.empty(p + 1)
    left = np.empty(p + 1)
    right = np.empty(p + 1)
    vals[0] = 1.0
    for j in range(1, p + 1):
        left[j] = xi - knots[span + 1 - j]
        right[j] = knots[span + j] - xi
        saved = 0.0
        for r in range(j):
            tmp = vals[r] / (right[r + 1] + left[j - r])
            vals[r] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        vals[j] = saved
    return vals


def _locate(kv: KnotVector, xi: float) -> tuple[int, int, float]:
    """(logical span, array-space span, wrapped/clamped parameter)."""
    s = find_span(kv, xi)
    if kv.periodic:
        return s, s + kv.degree, xi % kv.period
    lo, hi = kv.domain
    return s, s, min(max(xi, lo), hi)


def eval_basis(kv: KnotVector, xi: float) -> tuple[np.ndarray, np.ndarray]:
    """Nonzero basis values at ``xi`` with their global indices.

    Returns ``(values, indices)``, each of length degree+1.  Values are
    nonnegative and sum to one; indices wrap modulo ``n_basis`` on
    periodic vectors.
    """
    p = kv.degree
    s, sa, x = _locate(kv, xi)
    vals = _basis_funs(kv.knots, sa, x, p)
    idx = np.arange(s - p, s + 1)
    if kv.periodic:
        idx %= kv.n_basis
    return vals, idx


def eval_basis_derivs(kv: KnotVector, xi: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Values and first derivatives of the nonzero basis functions at ``xi``.

    Derivatives of a partition of unity, so the returned derivative
    entries sum to zero.  0/0 ratios in the recursion are taken as zero.
    """
    p = kv.degree
    s, sa, x = _locate(kv, xi)
    knots = kv.knots
    vals = _basis_funs(knots, sa, x, p)
    ders = np.zeros(p + 1)
    if p > 0:
        lower = _basis_funs(knots, sa, x, p - 1)
        for k in range(p + 1):
            i = sa - p + k
            d1 = knots[i + p] - knots[i]
            t1 = lower[k - 1] / d1 if (k >= 1 and d1 > 0.0) else 0.0
            d2 = knots[i + p + 1] - knots[i + 1]
            t2 = lower[k] / d2 if (k <= p - 1 and d2 > 0.0) else 0.0
            ders[k] = p * (t1 - t2)
    idx = np.arange(s - p, s + 1)
    if kv.periodic:
        idx %= kv.n_basis
    return vals, ders, idx


def greville_points(kv: KnotVector) -> np.ndarray:
    """Collocation abscissae: per-basis averages of ``degree`` consecutive knots.

    Nondecreasing and inside the domain.  For periodic vectors the
    modular averages reduce to ``i * period / n_basis``.
    """
    p, n = kv.degree, kv.n_basis
    if kv.periodic:
        return (kv.period / n) * np.arange(n, dtype=float)
    if p == 0:
        return 0.5 * (kv.knots[:-1] + kv.knots[1:])
    k = kv.knots
    return np.array([k[i + 1 : i + p + 1].mean() for i in range(n)])


@dataclass
class JacobianData:
    """Geometry-map derivative at one parameter point.

    ``jac`` columns are d(x,y)/dxi and d(x,y)/deta; ``inv`` is the
    adjugate divided by ``det``.
    """

    jac: np.ndarray
    det: float
    inv: np.ndarray


@dataclass
class NurbsPatch2D:
    """Tensor-product rational patch mapping [0,1]^2-like parameters to the plane.

    ``control_points`` has shape (n_u, n_v, 2) and ``weights`` shape
    (n_u, n_v), all weights strictly positive.  Directions with a
    periodic knot vector cannot carry a non-periodic geometry map, so
    such patches provide the exact chart through ``affine``:
    x = A @ (xi, eta) + b.  The spline basis is unaffected and is still
    used for field discretization.
    """

    kv_u: KnotVector
    kv_v: KnotVector
    control_points: np.ndarray
    weights: np.ndarray
    affine: tuple[np.ndarray, np.ndarray] | None = None
    label: str = "patch"
    _flat_cp: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.control_points = np.asarray(self.control_points, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        nu, nv = self.kv_u.n_basis, self.kv_v.n_basis
        if self.control_points.shape != (nu, nv, 2):
            raise GeometryError(
                f"control net shape {self.control_points.shape} does not match basis ({nu}, {nv})"
            )
        if self.weights.shape != (nu, nv):
            raise GeometryError("weight grid shape does not match basis")
        if np.any(self.weights <= 0):
            raise GeometryError("weights must be strictly positive")
        if (self.kv_u.periodic or self.kv_v.periodic) and self.affine is None:
            raise GeometryError("periodic patches need an explicit affine chart")
        # global index g = j * n_u + i (u fastest), matching the solver layout
        self._flat_cp = np.ascontiguousarray(self.control_points.transpose(1, 0, 2).reshape(-1, 2))

    @property
    def n_u(self) -> int:
        return self.kv_u.n_basis

    @property
    def n_v(self) -> int:
        return self.kv_v.n_basis

    @property
    def degrees(self) -> tuple[int, int]:
        return self.kv_u.degree, self.kv_v.degree


def eval_nurbs2d(patch: NurbsPatch2D, xi: float, eta: float):
    """Rational basis values and parametric derivatives at one point.

    Returns ``(R, dR_dxi, dR_deta, global_indices)`` for the
    (p+1)(q+1) functions supported there.  With all weights equal the
    values reduce to the plain tensor-product B-splines.
    """
    nu_vals, nu_ders, iu = eval_basis_derivs(patch.kv_u, xi)
    nv_vals, nv_ders, iv = eval_basis_derivs(patch.kv_v, eta)
    w = patch.weights[np.ix_(iu, iv)]
    nm = np.outer(nu_vals, nv_vals) * w
    dxm = np.outer(nu_ders, nv_vals) * w
    dem = np.outer(nu_vals, nv_ders) * w
    wsum = nm.sum()
    r = nm / wsum
    r_xi = (dxm - r * dxm.sum()) / wsum
    r_eta = (dem - r * dem.sum()) / wsum
    gidx = (iv[None, :] * patch.n_u + iu[:, None]).ravel()
    return r.ravel(), r_xi.ravel(), r_eta.ravel(), gidx


def map_point(patch: NurbsPatch2D, xi: float, eta: float) -> np.ndarray:
    """Physical image of a parameter point."""
    if patch.affine is not None:
        a, b = patch.affine
        return a @ np.array([xi, eta]) + b
    r, _, _, gidx = eval_nurbs2d(patch, xi, eta)
    return r @ patch._flat_cp[gidx]


def jacobian(patch: NurbsPatch2D, xi: float, eta: float) -> JacobianData:
    """Geometry-map Jacobian, determinant and inverse at a parameter point.

    Raises SingularMapError when |det| falls below 1e-12.
    """
    if patch.affine is not None:
        jac = patch.affine[0].copy()
    else:
        _, r_xi, r_eta, gidx = eval_nurbs2d(patch, xi, eta)
        pts = patch._flat_cp[gidx]
        jac = np.stack([r_xi @ pts, r_eta @ pts], axis=1)
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    if abs(det) < _SINGULAR_TOL:
        raise SingularMapError(
            f"{patch.label}: singular geometry map at (xi={xi:.6g}, eta={eta:.6g}), det={det:.3e}"
        )
    inv = np.array([[jac[1, 1], -jac[0, 1]], [-jac[1, 0], jac[0, 0]]]) / det
    return JacobianData(jac, float(det), inv)


# ---------------------------------------------------------------------------
# Exact knot insertion (internal; used to refine the annulus arc)

def _insert_knot(knots: np.ndarray, degree: int, ctrl: np.ndarray, t: float):
    """Insert parameter ``t`` once into a clamped curve (homogeneous coords).

    Returns the refined (knots, ctrl).  The represented curve is
    unchanged, which keeps circular arcs exact under refinement.
    """
    s = int(np.searchsorted(knots, t, side="right")) - 1
    n, dim = ctrl.shape
    new_ctrl = np.empty((n + 1, dim))
    new_ctrl[: s - degree + 1] = ctrl[: s - degree + 1]
    new_ctrl[s + 1 :] = ctrl[s:]
    for i in range(s - degree + 1, s + 1):
        denom = knots[i + degree] - knots[i]
        alpha = (t - knots[i]) / denom if denom > 0 else 0.0
        new_ctrl[i] = alpha * ctrl[i] + (1.0 - alpha) * ctrl[i - 1]
    new_knots = np.insert(knots, s + 1, t)
    return new_knots, new_ctrl


def _quarter_arc(n_segments: int):
    """Unit quarter circle, first quadrant, counterclockwise, as an exact
    rational quadratic with ``n_segments`` spans.

    Returns (KnotVector, xy control points, weights)."""
    knots = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
    s2 = math.sqrt(2.0) / 2.0
    ctrl = np.array([[1.0, 0.0, 1.0], [s2, s2, s2], [0.0, 1.0, 1.0]])  # (w*x, w*y, w)
    for k in range(1, n_segments):
        knots, ctrl = _insert_knot(knots, 2, ctrl, k / n_segments)
    w = ctrl[:, 2]
    xy = ctrl[:, :2] / w[:, None]
    return KnotVector.from_knots(knots, 2), xy, w


# ---------------------------------------------------------------------------
# Geometry builders

def _per_direction(value, name: str) -> tuple:
    if np.isscalar(value):
        return value, value
    value = tuple(value)
    if len(value) != 2:
        raise GeometryError(f"{name} must be a scalar or a pair")
    return value


def _check_positive_jacobian(patch: NurbsPatch2D):
    """Builder-time guard: det J > 0 on the whole Greville grid."""
    gu = greville_points(patch.kv_u)
    gv = greville_points(patch.kv_v)
    worst = np.inf
    for eta in gv:
        for xi in gu:
            det = jacobian(patch, xi, eta).det
            worst = min(worst, det)
            if det <= 0.0:
                raise GeometryError(
                    f"{patch.label}: nonpositive Jacobian det {det:.3e} at "
                    f"(xi={xi:.4g}, eta={eta:.4g}); reduce the distortion parameters"
                )
    return worst


def build_unit_square(degree: int = 2, elements=8, length: float = 1.0) -> NurbsPatch2D:
    """Axis-aligned box [0, L]^2; the map is exactly x = L*(xi, eta)."""
    eu, ev = _per_direction(elements, "elements")
    kv_u = KnotVector.clamped_uniform(eu, degree)
    kv_v = KnotVector.clamped_uniform(ev, degree)
    gu, gv = greville_points(kv_u), greville_points(kv_v)
    cp = np.empty((kv_u.n_basis, kv_v.n_basis, 2))
    cp[:, :, 0] = length * gu[:, None]
    cp[:, :, 1] = length * gv[None, :]
    patch = NurbsPatch2D(kv_u, kv_v, cp, np.ones((kv_u.n_basis, kv_v.n_basis)), label="unit_square")
    _check_positive_jacobian(patch)
    return patch


def build_periodic_box(degree: int = 3, points=32, length=1.0) -> NurbsPatch2D:
    """Doubly periodic box of side ``length`` with a periodic spline basis.

    The field basis is genuinely periodic (indices wrap, no seam); the
    geometry chart is the exact affine map x = L * (xi, eta) since a
    periodic basis cannot represent a non-periodic map.
    """
    pu, pv = _per_direction(points, "points")
    lx, ly = _per_direction(length, "length")
    kv_u = KnotVector.periodic_uniform(pu, degree, 1.0)
    kv_v = KnotVector.periodic_uniform(pv, degree, 1.0)
    gu, gv = greville_points(kv_u), greville_points(kv_v)
    cp = np.empty((pu, pv, 2))
    cp[:, :, 0] = lx * gu[:, None]
    cp[:, :, 1] = ly * gv[None, :]
    affine = (np.diag([float(lx), float(ly)]), np.zeros(2))
    return NurbsPatch2D(kv_u, kv_v, cp, np.ones((pu, pv)), affine=affine, label="periodic_box")


def build_curved_quad(
    degree: int = 2, elements=8, length: float = 1.0, amplitude: float = 0.1
) -> NurbsPatch2D:
    """Unit box with interior control points displaced by a sine bump.

    Displacement of the control point at Greville position (u, v):

        dx = amplitude * L * sin(pi u) * sin(2 pi v)
        dy = amplitude * L * sin(2 pi u) * sin(pi v)

    Both factors vanish on the boundary, so the four edge curves stay
    the straight box edges.  The map stays orientation-preserving for
    amplitudes up to roughly 0.15 at moderate degrees; the builder
    verifies det J > 0 on the Greville grid and rejects anything worse.
    """
    eu, ev = _per_direction(elements, "elements")
    kv_u = KnotVector.clamped_uniform(eu, degree)
    kv_v = KnotVector.clamped_uniform(ev, degree)
    gu, gv = greville_points(kv_u), greville_points(kv_v)
    cp = np.empty((kv_u.n_basis, kv_v.n_basis, 2))
    cp[:, :, 0] = length * gu[:, None]
    cp[:, :, 1] = length * gv[None, :]
    uu, vv = np.meshgrid(gu, gv, indexing="ij")
    cp[:, :, 0] += amplitude * length * np.sin(np.pi * uu) * np.sin(2 * np.pi * vv)
    cp[:, :, 1] += amplitude * length * np.sin(2 * np.pi * uu) * np.sin(np.pi * vv)
    patch = NurbsPatch2D(kv_u, kv_v, cp, np.ones((kv_u.n_basis, kv_v.n_basis)), label="curved_quad")
    _check_positive_jacobian(patch)
    return patch


def build_quarter_annulus(
    r_inner: float = 1.0, r_outer: float = 2.0, degree: int = 2, elements=(4, 8)
) -> NurbsPatch2D:
    """Quarter annulus, xi radial and eta angular (counterclockwise).

    The angular direction is the exact rational quadratic arc (middle
    weight sqrt(2)/2), refined by exact knot insertion, so both circular
    edges carry zero geometric error.  ``degree`` applies to the radial
    direction; radial control values sit at Greville abscissae, which
    reproduces the linear radius function exactly.
    """
    if not 0 < r_inner < r_outer:
        raise GeometryError("need 0 < r_inner < r_outer")
    er, et = _per_direction(elements, "elements")
    kv_r = KnotVector.clamped_uniform(er, degree)
    radii = r_inner + (r_outer - r_inner) * greville_points(kv_r)
    kv_t, arc_xy, arc_w = _quarter_arc(et)
    cp = radii[:, None, None] * arc_xy[None, :, :]
    weights = np.broadcast_to(arc_w[None, :], (kv_r.n_basis, kv_t.n_basis)).copy()
    patch = NurbsPatch2D(kv_r, kv_t, cp, weights, label="quarter_annulus")
    _check_positive_jacobian(patch)
    return patch


GEOMETRY_BUILDERS = {
    "unit_square": build_unit_square,
    "periodic_box": build_periodic_box,
    "curved_quad": build_curved_quad,
    "quarter_annulus": build_quarter_annulus,
}


def build_geometry(name: str, **params) -> NurbsPatch2D:
    """Construct a registered geometry by name."""
    try:
        builder = GEOMETRY_BUILDERS[name]
    except KeyError:
        known = ", ".join(sorted(GEOMETRY_BUILDERS))
        raise GeometryError(f"unknown geometry {name!r}; registered builders: {known}") from None
    return builder(**params)


def dump_patch(patch: NurbsPatch2D, path):
    """Write a human-readable description of a patch (debug aid)."""
    lines = [
        "# 2D rational patch",
        f"label {patch.label}",
        f"degree_u {patch.kv_u.degree}",
        f"degree_v {patch.kv_v.degree}",
        f"n_u {patch.n_u}",
        f"n_v {patch.n_v}",
        f"periodic_u {int(patch.kv_u.periodic)}",
        f"periodic_v {int(patch.kv_v.periodic)}",
        "knots_u " + " ".join(f"{k:.17g}" for k in patch.kv_u.knots),
        "knots_v " + " ".join(f"{k:.17g}" for k in patch.kv_v.knots),
        "# control points: i j x y weight",
    ]
    for i in range(patch.n_u):
        for j in range(patch.n_v):
            x, y = patch.control_points[i, j]
            lines.append(f"{i} {j} {x:.17g} {y:.17g} {patch.weights[i, j]:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
