"""Collocation matrices, spectral differentiation operators and metric data.

Everything here is computed once per grid and reused by every
right-hand-side evaluation: the dense collocation matrices at the
Greville grid, the differentiation operators obtained from a single LU
factorization, per-point Jacobian data with local physical spacings,
and (when the patch weights factor into a tensor product) the 1D
operator factors that let the solver apply the same derivatives at a
fraction of the dense cost.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .nurbs import (
    KnotVector,
    NurbsPatch2D,
    eval_basis_derivs,
    eval_nurbs2d,
    greville_points,
    jacobian,
)

__all__ = [
    "OperatorConditionError",
    "MetricError",
    "CollocationSet",
    "DiffOperators",
    "TensorDiffFactors",
    "MetricData",
    "build_collocation",
    "assemble_collocation",
    "build_diff_operators",
    "precompute_metrics",
    "separable_weights",
    "build_tensor_diff_factors",
    "patch_fingerprint",
    "save_operator_cache",
    "load_operator_cache",
]

COND_LIMIT = 1e12

EDGE_NAMES = ("xi_min", "xi_max", "eta_min", "eta_max")


class OperatorConditionError(RuntimeError):
    """Collocation matrix too ill-conditioned to invert reliably."""


class MetricError(RuntimeError):
    """Geometry metrics unusable (nonpositive Jacobian determinant)."""


@dataclass
class CollocationSet:
    """Tensor grid of Greville collocation points.

    Global point index g = j * n_u + i with the u index i running
    fastest; every field array in the solver shares this ordering.
    """

    params: np.ndarray      # (N, 2) parametric coordinates
    physical: np.ndarray    # (N, 2) mapped coordinates
    n_u: int
    n_v: int
    grev_u: np.ndarray
    grev_v: np.ndarray

    @property
    def n_points(self) -> int:
        return self.n_u * self.n_v

    def edge_indices(self, edge: str) -> tuple[np.ndarray, np.ndarray]:
        """Point indices on an edge and their nearest interior neighbors.

        The neighbor is one grid index inward along the edge normal.
        """
        nu, nv = self.n_u, self.n_v
        j = np.arange(nv)
        i = np.arange(nu)
        if edge == "xi_min":
            idx, nbr = j * nu, j * nu + 1
        elif edge == "xi_max":
            idx, nbr = j * nu + (nu - 1), j * nu + (nu - 2)
        elif edge == "eta_min":
            idx, nbr = i, i + nu
        elif edge == "eta_max":
            idx, nbr = (nv - 1) * nu + i, (nv - 2) * nu + i
        else:
            raise ValueError(f"unknown edge {edge!r}; expected one of {EDGE_NAMES}")
        return idx, nbr


@dataclass
class DiffOperators:
    """Dense spectral differentiation matrices on the collocation grid."""

    d_xi: np.ndarray
    d_eta: np.ndarray


@dataclass
class TensorDiffFactors:
    """1D differentiation factors for tensor-separable patches.

    Applying kron(I, d_u) and kron(d_v, I) reproduces the dense
    operators exactly; the factored application is what the solver uses
    in its hot loop.
    """

    d_u: np.ndarray
    d_v: np.ndarray


@dataclass
class MetricData:
    """Per-collocation-point geometry data.

    ``jac``/``inv`` are stacked 2x2 matrices, ``det`` the determinants,
    ``h_xi``/``h_eta`` local physical spacings (column norm of the
    Jacobian times the local Greville gap).
    """

    jac: np.ndarray     # (N, 2, 2)
    det: np.ndarray     # (N,)
    inv: np.ndarray     # (N, 2, 2)
    h_xi: np.ndarray    # (N,)
    h_eta: np.ndarray   # (N,)


def build_collocation(patch: NurbsPatch2D) -> CollocationSet:
    """Greville tensor grid of a patch with mapped physical coordinates."""
    gu = greville_points(patch.kv_u)
    gv = greville_points(patch.kv_v)
    nu, nv = len(gu), len(gv)
    params = np.empty((nu * nv, 2))
    params[:, 0] = np.tile(gu, nv)
    params[:, 1] = np.repeat(gv, nu)
    physical = np.empty_like(params)
    from .nurbs import map_point

    for g in range(nu * nv):
        physical[g] = map_point(patch, params[g, 0], params[g, 1])
    return CollocationSet(params, physical, nu, nv, gu, gv)


def assemble_collocation(patch: NurbsPatch2D, colloc: CollocationSet):
    """Dense matrices of basis values and first derivatives at the grid.

    Row g holds the (p+1)(q+1) active rational basis values at point g;
    rows of the value matrix sum to one, rows of the derivative
    matrices to zero.
    """
    n = colloc.n_points
    phi = np.zeros((n, n))
    phi_xi = np.zeros((n, n))
    phi_eta = np.zeros((n, n))
    for g in range(n):
        r, rx, re, gidx = eval_nurbs2d(patch, colloc.params[g, 0], colloc.params[g, 1])
        phi[g, gidx] = r
        phi_xi[g, gidx] = rx
        phi_eta[g, gidx] = re
    return phi, phi_xi, phi_eta


def _condition_guard(lu, anorm: float, label: str, limit: float):
    gecon = sla.get_lapack_funcs("gecon", (lu,))
    rcond, info = gecon(lu, anorm)
    if info != 0 or rcond <= 0 or 1.0 / rcond > limit:
        cond = np.inf if rcond <= 0 else 1.0 / rcond
        raise OperatorConditionError(
            f"{label}: collocation matrix condition estimate {cond:.3e} exceeds {limit:.1e}"
        )


def build_diff_operators(
    phi: np.ndarray,
    phi_xi: np.ndarray,
    phi_eta: np.ndarray,
    *,
    cond_limit: float = COND_LIMIT,
    label: str = "patch",
    return_factorization: bool = False,
):
    """Differentiation operators D = Phi' * inv(Phi) for both directions.

    One LU factorization of the collocation matrix serves both
    operators (and, via ``return_factorization``, later interpolation
    solves); the inverse is never formed explicitly.
    """
    anorm = np.abs(phi.T).sum(axis=0).max()  # 1-norm of phi.T
    lu, piv = sla.lu_factor(phi.T)
    _condition_guard(lu, anorm, label, cond_limit)
    d_xi = sla.lu_solve((lu, piv), phi_xi.T).T
    d_eta = sla.lu_solve((lu, piv), phi_eta.T).T
    ops = DiffOperators(np.ascontiguousarray(d_xi), np.ascontiguousarray(d_eta))
    if return_factorization:
        return ops, (lu, piv)
    return ops


def solve_interpolation(factorization, values: np.ndarray) -> np.ndarray:
    """Spline coefficients c with Phi c = values, reusing the stored LU.

    ``factorization`` is the pair returned by ``build_diff_operators``
    (an LU of Phi transposed, hence trans=1 here).
    """
    lu, piv = factorization
    return sla.lu_solve((lu, piv), values, trans=1)


def _local_spacing(points: np.ndarray, periodic: bool, period: float) -> np.ndarray:
    if periodic:
        return np.full(len(points), period / len(points))
    d = np.empty(len(points))
    d[1:-1] = 0.5 * (points[2:] - points[:-2])
    d[0] = points[1] - points[0]
    d[-1] = points[-1] - points[-2]
    return d


def precompute_metrics(patch: NurbsPatch2D, colloc: CollocationSet) -> MetricData:
    """Jacobian data and local physical spacings at every collocation point.

    Fails fast with the offending point index on any nonpositive
    determinant.
    """
    n = colloc.n_points
    jac = np.empty((n, 2, 2))
    det = np.empty(n)
    inv = np.empty((n, 2, 2))
    for g in range(n):
        jd = jacobian(patch, colloc.params[g, 0], colloc.params[g, 1])
        jac[g], det[g], inv[g] = jd.jac, jd.det, jd.inv
    if np.any(det <= 0):
        bad = int(np.argmax(det <= 0))
        raise MetricError(
            f"{patch.label}: nonpositive Jacobian determinant {det[bad]:.3e} "
            f"at collocation point {bad}"
        )
    du = _local_spacing(colloc.grev_u, patch.kv_u.periodic, patch.kv_u.period)
    dv = _local_spacing(colloc.grev_v, patch.kv_v.periodic, patch.kv_v.period)
    iu = np.tile(np.arange(colloc.n_u), colloc.n_v)
    iv = np.repeat(np.arange(colloc.n_v), colloc.n_u)
    col_xi = np.linalg.norm(jac[:, :, 0], axis=1)
    col_eta = np.linalg.norm(jac[:, :, 1], axis=1)
    return MetricData(jac, det, inv, col_xi * du[iu], col_eta * dv[iv])


def separable_weights(patch: NurbsPatch2D):
    """Factor the weight grid as outer(a, b) when possible, else None."""
    w = patch.weights
    a = w[:, 0].copy()
    b = w[0, :] / w[0, 0]
    if np.allclose(w, np.outer(a, b), rtol=1e-13, atol=0.0):
        return a, b
    return None


def _rational_colloc_1d(kv: KnotVector, w1d: np.ndarray):
    n = kv.n_basis
    phi = np.zeros((n, n))
    dphi = np.zeros((n, n))
    for row, x in enumerate(greville_points(kv)):
        vals, ders, idx = eval_basis_derivs(kv, x)
        wl = w1d[idx]
        a = vals * wl
        ax = ders * wl
        wsum = a.sum()
        r = a / wsum
        phi[row, idx] = r
        dphi[row, idx] = (ax - r * ax.sum()) / wsum
    return phi, dphi


def build_tensor_diff_factors(
    patch: NurbsPatch2D, *, cond_limit: float = COND_LIMIT
) -> TensorDiffFactors | None:
    """1D differentiation factors, or None when the weights do not factor."""
    fac = separable_weights(patch)
    if fac is None:
        return None
    a, b = fac
    out = []
    for kv, w1d in ((patch.kv_u, a), (patch.kv_v, b)):
        phi, dphi = _rational_colloc_1d(kv, w1d)
        anorm = np.abs(phi.T).sum(axis=0).max()
        lu, piv = sla.lu_factor(phi.T)
        _condition_guard(lu, anorm, patch.label, cond_limit)
        out.append(np.ascontiguousarray(sla.lu_solve((lu, piv), dphi.T).T))
    return TensorDiffFactors(out[0], out[1])


# ---------------------------------------------------------------------------
# Optional binary cache keyed by the patch definition

def patch_fingerprint(patch: NurbsPatch2D) -> str:
    """Stable hash of everything that determines the operators."""
    h = hashlib.sha256()
    for kv in (patch.kv_u, patch.kv_v):
        h.update(np.int64([kv.degree, kv.n_basis, int(kv.periodic)]).tobytes())
        h.update(np.float64(kv.period).tobytes())
        h.update(np.ascontiguousarray(kv.knots).tobytes())
    h.update(np.ascontiguousarray(patch.control_points).tobytes())
    h.update(np.ascontiguousarray(patch.weights).tobytes())
    if patch.affine is not None:
        h.update(np.ascontiguousarray(patch.affine[0]).tobytes())
        h.update(np.ascontiguousarray(patch.affine[1]).tobytes())
    return h.hexdigest()


def save_operator_cache(directory, patch: NurbsPatch2D, ops: DiffOperators, metrics: MetricData):
    """Persist (D_xi, D_eta, metrics) under the patch fingerprint.

    Layout: a single .npz with arrays d_xi, d_eta, jac, det, inv, h_xi,
    h_eta named exactly as the dataclass fields.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savez(
        directory / f"{patch_fingerprint(patch)}.npz",
        d_xi=ops.d_xi,
        d_eta=ops.d_eta,
        jac=metrics.jac,
        det=metrics.det,
        inv=metrics.inv,
        h_xi=metrics.h_xi,
        h_eta=metrics.h_eta,
    )


def load_operator_cache(directory, patch: NurbsPatch2D):
    """Load cached (DiffOperators, MetricData) or None on a cache miss."""
    path = Path(directory) / f"{patch_fingerprint(patch)}.npz"
    if not path.exists():
        return None
    with np.load(path) as z:
        ops = DiffOperators(z["d_xi"].copy(), z["d_eta"].copy())
        metrics = MetricData(
            z["jac"].copy(), z["det"].copy(), z["inv"].copy(), z["h_xi"].copy(), z["h_eta"].copy()
        )
    return ops, metrics
