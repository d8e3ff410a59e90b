"""Minkowski linear algebra and the ambient geometry of S^k x H^m.

Conventions used everywhere in this package:

* The Lorentzian form on R^N has signature (+, ..., +, -) with the timelike
  coordinate LAST; serialization follows the same order.
* A point of the product S^k x H^m sits in R^(k+m+2) as (sphere block,
  hyperbolic block) with |x|^2 = 1, <y, y> = -1 and the last entry of y
  positive (upper sheet of the hyperboloid).
* ``psi`` below always denotes the product structure: +1 on the sphere block,
  -1 on the hyperbolic block, extended to the two unit normals xi1, xi2 of
  the product by psi(xi1) = xi1, psi(xi2) = -xi2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConstraintError, DegeneracyError, DimensionError, InsufficientDataError

DEFAULT_TANGENCY_TOL = 1e-8


def minkowski_dot(x, y):
    """Signature (+...+,-) bilinear form; broadcasts over leading axes."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != y.shape[-1]:
        raise DimensionError(
            f"vectors of length {x.shape[-1]} and {y.shape[-1]} cannot be paired"
        )
    if x.shape[-1] < 2:
        raise DimensionError("Lorentzian vectors need at least 2 entries")
    prod = x * y
    return prod[..., :-1].sum(axis=-1) - prod[..., -1]


def eta(n: int) -> np.ndarray:
    """Gram matrix diag(1, ..., 1, -1) of the Minkowski form."""
    g = np.eye(n)
    g[-1, -1] = -1.0
    return g


@dataclass(frozen=True)
class ProductPoint:
    """A point of S^k x H^m, stored as the two blocks of its ambient vector."""

    sphere_part: np.ndarray
    hyper_part: np.ndarray
    tol: float = DEFAULT_TANGENCY_TOL

    def __post_init__(self):
        object.__setattr__(self, "sphere_part", np.asarray(self.sphere_part, dtype=float))
        object.__setattr__(self, "hyper_part", np.asarray(self.hyper_part, dtype=float))
        x, y = self.sphere_part, self.hyper_part
        if x.ndim != 1 or y.ndim != 1 or x.size < 2 or y.size < 2:
            raise DimensionError("product point needs blocks of length >= 2")
        if abs(x @ x - 1.0) > self.tol:
            raise ConstraintError(f"sphere block off the unit sphere by {abs(x @ x - 1.0):.3e}")
        ynorm = minkowski_dot(y, y)
        if abs(ynorm + 1.0) > self.tol:
            raise ConstraintError(f"hyperbolic block off the hyperboloid by {abs(ynorm + 1.0):.3e}")
        if y[-1] <= 0:
            raise ConstraintError("hyperbolic block on the lower sheet")

    @property
    def k(self) -> int:
        return self.sphere_part.size - 1

    @property
    def m(self) -> int:
        return self.hyper_part.size - 1

    @property
    def ambient(self) -> np.ndarray:
        return np.concatenate([self.sphere_part, self.hyper_part])


@dataclass(frozen=True)
class AmbientFrame:
    """Columns form a Lorentz-orthonormal basis: G^T eta G = eta."""

    columns: np.ndarray
    gram_signature: np.ndarray = field(default=None)

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=float)
        object.__setattr__(self, "columns", cols)
        n = cols.shape[0]
        if cols.shape != (n, n):
            raise DimensionError("frame must be square")
        object.__setattr__(self, "gram_signature", eta(n))

    def gram_defect(self) -> float:
        e = self.gram_signature
        return float(np.abs(self.columns.T @ e @ self.columns - e).max())


def ambient_psi(point: ProductPoint, v) -> np.ndarray:
    """Product structure on the trivial bundle: flips the hyperbolic block.

    Acts on any ambient vector (tangent or not); involution and an exact
    isometry of the Minkowski form.
    """
    v = np.asarray(v, dtype=float)
    n = point.k + point.m + 2
    if v.shape[-1] != n:
        raise DimensionError(f"expected ambient vectors of length {n}, got {v.shape[-1]}")
    out = v.copy()
    out[..., point.k + 1:] *= -1.0
    return out


def normal_fields(point: ProductPoint):
    """Unit normals xi1 = (x, 0), xi2 = (0, y) of the product in R^N_1."""
    zeros_s = np.zeros(point.k + 1)
    zeros_h = np.zeros(point.m + 1)
    xi1 = np.concatenate([point.sphere_part, zeros_h])
    xi2 = np.concatenate([zeros_s, point.hyper_part])
    return xi1, xi2


def _check_tangent(point: ProductPoint, v, tol):
    xi1, xi2 = normal_fields(point)
    scale = max(float(np.sqrt(abs(minkowski_dot(v, v)))), 1.0)
    for name, xi in (("xi1", xi1), ("xi2", xi2)):
        if abs(minkowski_dot(v, xi)) > tol * scale:
            raise ConstraintError(f"vector not tangent to the product: <v,{name}> = "
                                  f"{minkowski_dot(v, xi):.3e}")


def ambient_curvature(point: ProductPoint, x, y, z, tol: float = DEFAULT_TANGENCY_TOL):
    """Curvature operator of S^k x H^m applied to tangent vectors.

    R(X,Y)Z = 1/2 (<psi Y, Z> X + <Y, Z> psi X - <psi X, Z> Y - <X, Z> psi Y).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    for v in (x, y, z):
        _check_tangent(point, v, tol)
    px = ambient_psi(point, x)
    py = ambient_psi(point, y)
    return 0.5 * (minkowski_dot(py, z) * x + minkowski_dot(y, z) * px
                  - minkowski_dot(px, z) * y - minkowski_dot(x, z) * py)


def _curve_points(points, k):
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] < 3:
        raise InsufficientDataError("need at least 3 curve samples")
    return [ProductPoint(p[: k + 1], p[k + 1:]) for p in points]


def ambient_connection_relation_residual(points, dt: float, k: int, tangent_field=None,
                                         tol: float = DEFAULT_TANGENCY_TOL) -> float:
    """Max residual of the flat-vs-induced connection relations along a curve.

    ``points``: (T, N) samples on S^k x H^m; ``tangent_field``: optional (T, N)
    field tangent to the product along the curve.  Always checks the position
    normals: d(xi_i)/dt must equal the sphere/hyperbolic part of the velocity;
    with ``tangent_field`` given, additionally checks that the normal component
    of its flat derivative is carried by xi1, xi2 with the product-structure
    coefficients.  All derivatives are second-order finite differences.
    """
    pts = _curve_points(points, k)
    points = np.asarray(points, dtype=float)
    vel = np.gradient(points, dt, axis=0, edge_order=2)

    xi1 = np.stack([np.concatenate([p.sphere_part, np.zeros(p.m + 1)]) for p in pts])
    xi2 = np.stack([np.concatenate([np.zeros(p.k + 1), p.hyper_part]) for p in pts])
    psi_vel = np.stack([ambient_psi(p, v) for p, v in zip(pts, vel)])

    d_xi1 = np.gradient(xi1, dt, axis=0, edge_order=2)
    d_xi2 = np.gradient(xi2, dt, axis=0, edge_order=2)
    res = max(
        float(np.abs(d_xi1 - 0.5 * (vel + psi_vel)).max()),
        float(np.abs(d_xi2 - 0.5 * (vel - psi_vel)).max()),
    )

    if tangent_field is not None:
        field_arr = np.asarray(tangent_field, dtype=float)
        for p, v in zip(pts, field_arr):
            _check_tangent(p, v, tol)
        d_field = np.gradient(field_arr, dt, axis=0, edge_order=2)
        c1 = minkowski_dot(d_field, xi1)[..., None] * xi1
        c2 = minkowski_dot(d_field, xi2)[..., None] * xi2
        induced = d_field - c1 + c2  # tangential projection of the flat derivative
        want_1 = -0.5 * minkowski_dot(vel + psi_vel, field_arr)
        want_2 = 0.5 * minkowski_dot(vel - psi_vel, field_arr)
        rec = induced + want_1[..., None] * xi1 + want_2[..., None] * xi2
        res = max(res, float(np.abs(d_field - rec).max()))
    return res


def minkowski_gram_schmidt(vectors, tol: float = 1e-10) -> np.ndarray:
    """Orthonormalize rows w.r.t. the Minkowski form, preserving order.

    Classical Gram-Schmidt applied twice for stability; each pivot is
    normalized by sqrt(|<v,v>|).  Raises on a null or dependent pivot.
    Returns the orthonormalized vectors as rows.
    """
    vecs = [np.array(v, dtype=float) for v in vectors]
    out: list[np.ndarray] = []
    for idx, v in enumerate(vecs):
        scale = max(float(np.linalg.norm(v)), 1.0)
        for _ in range(2):
            for w in out:
                v = v - (minkowski_dot(v, w) / minkowski_dot(w, w)) * w
        norm2 = minkowski_dot(v, v)
        if abs(norm2) <= tol * scale**2:
            raise DegeneracyError(
                f"vector {idx} is null or dependent after projection", index=idx)
        out.append(v / np.sqrt(abs(norm2)))
    return np.stack(out)


def lorentz_orthonormalize(vectors, tol: float = 1e-10) -> AmbientFrame:
    """Build a full Lorentz-orthonormal frame from independent vectors.

    Expects exactly one vector to become timelike after projection; it must
    be supplied last.  The result satisfies G^T eta G = eta to 1e-12.
    """
    rows = minkowski_gram_schmidt(vectors, tol=tol)
    n = rows.shape[1]
    if rows.shape[0] != n:
        raise DimensionError(f"need {n} vectors for a full frame, got {rows.shape[0]}")
    norms = minkowski_dot(rows, rows)
    timelike = np.flatnonzero(norms < 0)
    if timelike.size != 1 or timelike[0] != n - 1:
        raise DegeneracyError(
            "expected exactly one timelike direction, placed last; "
            f"timelike indices: {timelike.tolist()}",
            index=int(timelike[0]) if timelike.size else None)
    return AmbientFrame(columns=rows.T)
