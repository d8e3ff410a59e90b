"""Product-structure field and the compatibility-equation checkers.

The checked identities, in the index conventions of :mod:`prodimm.fields`
(A[..., a, i, j] denotes the shape operator of the a-th bundle frame vector):

* algebra: f and lambda symmetric, u/U metric-adjoint, and the two block
  rows of "the structure squares to the identity";
* parallelism: the four covariant-derivative identities tying the blocks
  of the structure to the second form and the shape operators;
* Gauss / Codazzi / Ricci: curvature of the metric, antisymmetrized
  derivative of the second form, and bundle curvature against the
  shape-operator commutator, each with its product-structure source term.

Residuals are reported nodewise as max-abs over all free indices; for charts
of dimension <= 3 every index combination is formed explicitly (no sampling).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import DimensionError
from .fields import (BundleData, ChartGrid, MetricField, SecondFormField, TensorField,
                     bundle_curvature, christoffel, curvature_tensor, same_grid,
                     shape_operator_field, sum_bundle_covariant_derivative)

ALGEBRAIC_CHECKS = frozenset({
    "psi_f_symmetric", "psi_lambda_symmetric", "psi_u_U_adjoint",
    "psi_involution_tangent", "psi_involution_bundle",
})


class StructureWarning(UserWarning):
    """Diagnostic for data touching the excluded identity structure."""


@dataclass(frozen=True)
class ToleranceModel:
    """Pass thresholds: differencing checks scale with h^2, algebra does not."""

    factor: float = 10.0
    floor: float = 1e-8
    algebraic: float = 1e-10
    overrides: dict = dataclass_field(default_factory=dict)

    def threshold(self, name: str, grid: ChartGrid) -> float:
        if name in self.overrides:
            return float(self.overrides[name])
        if name in ALGEBRAIC_CHECKS and self.algebraic is not None:
            return self.algebraic
        return max(self.factor * grid.h_max**2, self.floor)

    def to_dict(self) -> dict:
        return {"factor": self.factor, "floor": self.floor,
                "algebraic": self.algebraic, "overrides": dict(self.overrides)}

    @classmethod
    def from_dict(cls, d: dict) -> "ToleranceModel":
        return cls(factor=float(d.get("factor", 10.0)),
                   floor=float(d.get("floor", 1e-8)),
                   algebraic=None if d.get("algebraic") is None else float(d["algebraic"]),
                   overrides={str(k): float(v) for k, v in d.get("overrides", {}).items()})


@dataclass(frozen=True)
class CheckRecord:
    name: str
    max_abs: float
    mean_abs: float
    argmax_node: tuple
    threshold: float
    passed: bool

    def to_dict(self) -> dict:
        return {"name": self.name, "max": self.max_abs, "mean": self.mean_abs,
                "argmax_node": list(self.argmax_node), "threshold": self.threshold,
                "pass": self.passed}


@dataclass(frozen=True)
class ResidualReport:
    records: tuple

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def __getitem__(self, name: str) -> CheckRecord:
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)

    def names(self):
        return [r.name for r in self.records]

    @classmethod
    def merge(cls, *reports) -> "ResidualReport":
        records = []
        for rep in reports:
            records.extend(rep.records)
        return cls(records=tuple(records))


def make_record(name: str, residual: np.ndarray, grid: ChartGrid,
                threshold: float) -> CheckRecord:
    """Reduce a (*dims, *free) residual array to a report record."""
    nodewise = np.abs(residual).reshape(grid.dims + (-1,)).max(axis=-1)
    argmax = tuple(int(i) for i in np.unravel_index(int(nodewise.argmax()), grid.dims))
    max_abs = float(nodewise.max())
    return CheckRecord(name=name, max_abs=max_abs,
                       mean_abs=float(np.abs(residual).mean()),
                       argmax_node=argmax, threshold=float(threshold),
                       passed=bool(max_abs <= threshold))


@dataclass(frozen=True)
class ProductStructureField:
    """The four blocks of the sum-bundle structure as node-wise matrices."""

    f: TensorField      # (tu, td): tangent endomorphism
    u: TensorField      # (bu, td): tangent -> bundle
    big_u: TensorField  # (tu, bd): bundle -> tangent
    lam: TensorField    # (bu, bd): bundle endomorphism

    def __post_init__(self):
        same_grid(self.f, self.u, self.big_u, self.lam)
        for blk, spec in ((self.f, ("tu", "td")), (self.u, ("bu", "td")),
                          (self.big_u, ("tu", "bd")), (self.lam, ("bu", "bd"))):
            if blk.index_spec != spec:
                raise DimensionError(f"block with slots {blk.index_spec}, expected {spec}")

    @property
    def grid(self) -> ChartGrid:
        return self.f.grid

    @property
    def n(self) -> int:
        return self.grid.ndim

    @property
    def p(self) -> int:
        return self.lam.values.shape[-1]

    def block_matrix(self) -> np.ndarray:
        """Full (n+p) x (n+p) structure matrix at every node."""
        top = np.concatenate([self.f.values, self.big_u.values], axis=-1)
        bot = np.concatenate([self.u.values, self.lam.values], axis=-1)
        return np.concatenate([top, bot], axis=-2)


def identity_structure_nodes(psi: ProductStructureField, tol: float = 1e-8) -> int:
    """Count nodes where the structure is within tol of plus or minus identity."""
    n, p = psi.n, psi.p
    count = 0
    for sign in (1.0, -1.0):
        dev = np.maximum.reduce([
            np.abs(psi.f.values - sign * np.eye(n)).reshape(psi.grid.dims + (-1,)).max(-1),
            np.abs(psi.lam.values - sign * np.eye(p)).reshape(psi.grid.dims + (-1,)).max(-1),
            np.abs(psi.u.values).reshape(psi.grid.dims + (-1,)).max(-1),
            np.abs(psi.big_u.values).reshape(psi.grid.dims + (-1,)).max(-1),
        ])
        count += int((dev <= tol).sum())
    return count


def check_psi_algebra(psi: ProductStructureField, g: MetricField,
                      tolerances: ToleranceModel | None = None) -> ResidualReport:
    """Symmetry, adjointness and involution residuals (exact linear algebra)."""
    tolerances = tolerances or ToleranceModel()
    same_grid(psi.f, g)
    grid = psi.grid
    n, p = psi.n, psi.p
    f, u, big_u, lam = psi.f.values, psi.u.values, psi.big_u.values, psi.lam.values
    gv = g.values

    gf = np.einsum("...kj,...ki->...ij", gv, f)          # g(f d_i, d_j)
    res_f = gf - np.swapaxes(gf, -1, -2)
    res_lam = lam - np.swapaxes(lam, -1, -2)
    res_adj = u - np.einsum("...ij,...ja->...ai", gv, big_u)
    res_inv_t = np.concatenate([
        (np.einsum("...ik,...kj->...ij", f, f)
         + np.einsum("...ia,...aj->...ij", big_u, u) - np.eye(n)).reshape(grid.dims + (-1,)),
        (np.einsum("...ik,...ka->...ia", f, big_u)
         + np.einsum("...ia,...ab->...ib", big_u, lam)).reshape(grid.dims + (-1,)),
    ], axis=-1)
    res_inv_b = np.concatenate([
        (np.einsum("...ak,...kj->...aj", u, f)
         + np.einsum("...ab,...bj->...aj", lam, u)).reshape(grid.dims + (-1,)),
        (np.einsum("...ak,...kb->...ab", u, big_u)
         + np.einsum("...ac,...cb->...ab", lam, lam) - np.eye(p)).reshape(grid.dims + (-1,)),
    ], axis=-1)

    n_id = identity_structure_nodes(psi)
    if n_id:
        warnings.warn(f"structure within 1e-8 of plus/minus identity at {n_id} node(s); "
                      "such data is outside the reconstructible class", StructureWarning)

    records = tuple(
        make_record(name, resid, grid, tolerances.threshold(name, grid))
        for name, resid in (
            ("psi_f_symmetric", res_f),
            ("psi_lambda_symmetric", res_lam),
            ("psi_u_U_adjoint", res_adj),
            ("psi_involution_tangent", res_inv_t),
            ("psi_involution_bundle", res_inv_b),
        ))
    return ResidualReport(records)


def check_psi_parallel(psi: ProductStructureField, g: MetricField, bundle: BundleData,
                       sigma: SecondFormField,
                       tolerances: ToleranceModel | None = None) -> ResidualReport:
    """Residuals of the four parallel-structure identities."""
    tolerances = tolerances or ToleranceModel()
    same_grid(psi.f, g, bundle.omega, sigma)
    grid = psi.grid
    chris = christoffel(g)
    shape_ops = shape_operator_field(sigma, g)          # (..., a, i, m)
    f, u, big_u, lam = psi.f.values, psi.u.values, psi.big_u.values, psi.lam.values
    sg = sigma.values

    d_f = sum_bundle_covariant_derivative(psi.f, chris, bundle).values
    d_u = sum_bundle_covariant_derivative(psi.u, chris, bundle).values
    d_big_u = sum_bundle_covariant_derivative(psi.big_u, chris, bundle).values
    d_lam = sum_bundle_covariant_derivative(psi.lam, chris, bundle).values

    res_f = (d_f - np.einsum("...aj,...aim->...mij", u, shape_ops)
             - np.einsum("...ia,...mja->...mij", big_u, sg))
    res_u = (d_u - np.einsum("...ab,...mjb->...maj", lam, sg)
             + np.einsum("...mka,...kj->...maj", sg, f))
    res_big_u = (d_big_u - np.einsum("...cb,...cim->...mib", lam, shape_ops)
                 + np.einsum("...ik,...bkm->...mib", f, shape_ops))
    res_lam = (d_lam + np.einsum("...mka,...kb->...mab", sg, big_u)
               + np.einsum("...ak,...bkm->...mab", u, shape_ops))

    records = tuple(
        make_record(name, resid, grid, tolerances.threshold(name, grid))
        for name, resid in (
            ("psi_parallel_f", res_f),
            ("psi_parallel_u", res_u),
            ("psi_parallel_U", res_big_u),
            ("psi_parallel_lambda", res_lam),
        ))
    return ResidualReport(records)


def check_gauss(g: MetricField, sigma: SecondFormField, psi: ProductStructureField,
                tolerances: ToleranceModel | None = None) -> ResidualReport:
    """Curvature against shape-operator terms plus the structure source."""
    tolerances = tolerances or ToleranceModel()
    same_grid(g, sigma, psi.f)
    grid = g.grid
    n = grid.ndim
    riem = curvature_tensor(g).values                   # (..., i, r, m, n)
    shape_ops = shape_operator_field(sigma, g)          # (..., a, i, m)
    f = psi.f.values
    gv = g.values
    gf = np.einsum("...kr,...kn->...nr", gv, f)         # g(f d_n, d_r)
    ident = np.eye(n)

    rhs = (np.einsum("...nra,...aim->...irmn", sigma.values, shape_ops)
           - np.einsum("...mra,...ain->...irmn", sigma.values, shape_ops)
           + 0.5 * (np.einsum("...nr,...im->...irmn", gv, f)
                    - np.einsum("...mr,...in->...irmn", gv, f)
                    + np.einsum("...nr,im->...irmn", gf, ident)
                    - np.einsum("...mr,in->...irmn", gf, ident)))
    resid = riem - rhs
    name = "gauss"
    return ResidualReport((make_record(name, resid, grid,
                                       tolerances.threshold(name, grid)),))


def check_codazzi(g: MetricField, bundle: BundleData, sigma: SecondFormField,
                  psi: ProductStructureField,
                  tolerances: ToleranceModel | None = None) -> ResidualReport:
    """Antisymmetrized derivative of the second form against the u source."""
    tolerances = tolerances or ToleranceModel()
    same_grid(g, bundle.omega, sigma, psi.u)
    grid = g.grid
    chris = christoffel(g)
    d_sigma = sum_bundle_covariant_derivative(sigma, chris, bundle).values  # (...,m,i,j,a)
    u = psi.u.values
    gv = g.values
    resid = (2.0 * (d_sigma - np.einsum("...mnra->...nmra", d_sigma))
             - np.einsum("...nr,...am->...mnra", gv, u)
             + np.einsum("...mr,...an->...mnra", gv, u))
    name = "codazzi"
    return ResidualReport((make_record(name, resid, grid,
                                       tolerances.threshold(name, grid)),))


def check_ricci(g: MetricField, bundle: BundleData, sigma: SecondFormField,
                tolerances: ToleranceModel | None = None) -> ResidualReport:
    """Bundle curvature against the shape-operator commutator."""
    tolerances = tolerances or ToleranceModel()
    same_grid(g, bundle.omega, sigma)
    grid = g.grid
    curv = bundle_curvature(bundle).values              # (..., m, n, a, b)
    shape_ops = shape_operator_field(sigma, g)          # (..., b, k, n)
    rhs = (np.einsum("...kma,...bkn->...mnab", sigma.values, shape_ops)
           - np.einsum("...kna,...bkm->...mnab", sigma.values, shape_ops))
    resid = curv - rhs
    name = "ricci"
    return ResidualReport((make_record(name, resid, grid,
                                       tolerances.threshold(name, grid)),))


def check_all(g: MetricField, bundle: BundleData, sigma: SecondFormField,
              psi: ProductStructureField,
              tolerances: ToleranceModel | None = None) -> ResidualReport:
    """Every structure-module check, merged into one report."""
    tolerances = tolerances or ToleranceModel()
    return ResidualReport.merge(
        check_psi_algebra(psi, g, tolerances),
        check_psi_parallel(psi, g, bundle, sigma, tolerances),
        check_gauss(g, sigma, psi, tolerances),
        check_codazzi(g, bundle, sigma, psi, tolerances),
        check_ricci(g, bundle, sigma, tolerances),
    )
