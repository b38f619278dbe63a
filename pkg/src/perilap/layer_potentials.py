"""Nystrom matrices for the boundary operators and off-boundary potentials.

The operator acting on a density theta at curve nodes is the free double
layer

    (W theta)(t) = -sum_j DS(t - s_j) . nu(s_j) theta_j w_j,

whose kernel extends smoothly to the diagonal with limit kappa(t)/(4 pi)
under the counterclockwise/outward convention (pinned by the unit-disk test,
where the kernel is the constant 1/(4 pi)).  The lattice-interaction
correction at scaling eps is

    (W_R theta)(t) = -eps * sum_j DR(eps (t - s_j)) . nu(s_j) theta_j w_j,

a smooth kernel for all node pairs since the regular part is analytic at the
origin; it vanishes identically at eps = 0.

Off-boundary evaluation of the periodic double layer splits into the free
part (upsampled near the boundary) plus the regular part on coarse nodes;
boundary traces come from offset ladders with Richardson extrapolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lattice_green as lg
from ._nearfield import (FreeDoubleLayer, SourceGeometry, extrapolate_ladder,
                         min_distance)
from .boundary_geometry import BoundaryCurve, Placement
from .exceptions import ProximityError

MEAN_ZERO_TOL = 1e-10


@dataclass(frozen=True)
class Density:
    """Node values of a boundary density, optionally constrained to mean zero."""

    values: np.ndarray
    curve: BoundaryCurve
    mean_zero: bool = False

    def __post_init__(self):
        object.__setattr__(self, "values",
                           np.asarray(self.values, dtype=float))
        if self.values.shape != (self.curve.n,):
            raise ValueError("values must match the curve node count")
        if self.mean_zero:
            mass = abs(float(np.dot(self.values, self.curve.weights)))
            scale = float(np.linalg.norm(self.values)) + 1e-300
            if mass > MEAN_ZERO_TOL * scale and mass > MEAN_ZERO_TOL:
                raise ValueError(
                    f"density flagged mean-zero has mass {mass:.3e}")

    @property
    def mass(self) -> float:
        return float(np.dot(self.values, self.curve.weights))


@dataclass(frozen=True)
class BoundaryOperator:
    """Dense Nystrom matrix acting on node values."""

    matrix: np.ndarray
    kind: str
    eps: float | None = None

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(values, dtype=float)


def _pairwise(curve: BoundaryCurve):
    d = curve.nodes[:, None, :] - curve.nodes[None, :, :]
    r2 = np.sum(d * d, axis=2)
    np.fill_diagonal(r2, 1.0)
    return d, r2


def assemble_free(curve: BoundaryCurve) -> BoundaryOperator:
    """Free double-layer matrix with the curvature diagonal limit."""
    d, r2 = _pairwise(curve)
    ker = -np.einsum("ijk,jk->ij", d, curve.normals) / (2 * np.pi * r2)
    np.fill_diagonal(ker, curve.curvature / (4 * np.pi))
    return BoundaryOperator(matrix=ker * curve.weights[None, :],
                            kind="free_double_layer")


def assemble_free_adjoint(curve: BoundaryCurve) -> BoundaryOperator:
    """Transposed-geometry kernel (normal at the target point)."""
    d, r2 = _pairwise(curve)
    ker = np.einsum("ijk,ik->ij", d, curve.normals) / (2 * np.pi * r2)
    np.fill_diagonal(ker, curve.curvature / (4 * np.pi))
    return BoundaryOperator(matrix=ker * curve.weights[None, :],
                            kind="free_double_layer_adjoint")


def assemble_regular(curve: BoundaryCurve, eps: float, cell: lg.LatticeCell,
                     params: lg.EwaldParams) -> BoundaryOperator:
    """Lattice-correction matrix at scaling eps (zero matrix at eps = 0)."""
    n = curve.n
    if eps == 0.0:
        return BoundaryOperator(matrix=np.zeros((n, n)), kind="regular_part",
                                eps=0.0)
    d = curve.nodes[:, None, :] - curve.nodes[None, :, :]
    _, grad, _ = lg.regular_batch((eps * d).reshape(-1, 2), cell, params,
                                  want_value=False)
    grad = grad.reshape(n, n, 2)
    ker = -eps * np.einsum("ijk,jk->ij", grad, curve.normals)
    return BoundaryOperator(matrix=ker * curve.weights[None, :],
                            kind="regular_part", eps=float(eps))


# ---------------------------------------------------------------------------
# Off-boundary evaluation
# ---------------------------------------------------------------------------
class PeriodicDoubleLayer:
    """Evaluator of the periodic double layer for a density on a placed hole.

    Values and gradients are the free-kernel sums on an upsampled copy of the
    placed boundary plus the smooth regular-part sums on the coarse nodes, so
    targets may sit arbitrarily close to (either side of) the boundary.
    """

    def __init__(self, theta: Density, placement: Placement,
                 cell: lg.LatticeCell, params: lg.EwaldParams):
        if theta.curve is not placement.curve and theta.curve.n != placement.curve.n:
            raise ValueError("density and placement use different curves")
        self.placement = placement
        self.cell = cell
        self.params = params
        self.theta = theta
        self.geom = SourceGeometry(placement.curve, placement.p, placement.eps)
        self._free = FreeDoubleLayer(self.geom, theta.values)
        # Coarse source strengths nu * theta * w on the placed boundary.
        self._m = placement.normals * (theta.values * placement.weights)[:, None]
        self._nodes = placement.nodes

    def _regular_values(self, X: np.ndarray) -> np.ndarray:
        d = X[:, None, :] - self._nodes[None, :, :]
        _, grad, _ = lg.regular_batch(d.reshape(-1, 2), self.cell, self.params,
                                      want_value=False)
        grad = grad.reshape(X.shape[0], -1, 2)
        return -np.einsum("ijk,jk->i", grad, self._m)

    def _regular_gradients(self, X: np.ndarray) -> np.ndarray:
        d = X[:, None, :] - self._nodes[None, :, :]
        _, _, hess = lg.regular_batch(d.reshape(-1, 2), self.cell, self.params,
                                      want_value=False, want_hess=True)
        hess = hess.reshape(X.shape[0], -1, 2, 2)
        return -np.einsum("ijkl,jl->ik", hess, self._m)

    def values(self, X: np.ndarray, *, dmin: float | None = None,
               n_min: float | None = None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.placement.eps == 0.0:
            return np.zeros(X.shape[0])
        return (self._free.values(X, dmin=dmin, n_min=n_min)
                + self._regular_values(X))

    def gradients(self, X: np.ndarray, *, dmin: float | None = None,
                  n_min: float | None = None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.placement.eps == 0.0:
            return np.zeros((X.shape[0], 2))
        return (self._free.gradients(X, dmin=dmin, n_min=n_min)
                + self._regular_gradients(X))

    def trace_values(self, side: int, levels: int | None = None):
        """One-sided boundary trace at the nodes by offset extrapolation.

        Only the free log part jumps across the boundary and is laddered;
        the lattice-interaction part is analytic across it, so its trace is
        its direct nodal value.  Returns (trace, extrapolation error).
        """
        kwargs = {} if levels is None else {"levels": levels}
        free, err = extrapolate_ladder(
            lambda X, n_min: self._free.values(X, n_min=n_min),
            self.geom, side=side, **kwargs)
        return free + self._regular_values(self._nodes), err

    def trace_normal_derivatives(self, side: int, levels: int | None = None):
        """One-sided normal derivative at the nodes by offset extrapolation."""
        normals = self.placement.curve.normals

        def normal_component(X, n_min):
            return np.einsum("ij,ij->i",
                             self._free.gradients(X, n_min=n_min), normals)

        kwargs = {} if levels is None else {"levels": levels}
        free, err = extrapolate_ladder(normal_component, self.geom,
                                       side=side, **kwargs)
        smooth = np.einsum("ij,ij->i",
                           self._regular_gradients(self._nodes), normals)
        return free + smooth, err


def hole_distance(placement: Placement, cell: lg.LatticeCell,
                  X: np.ndarray) -> np.ndarray:
    """Distance from each target to the nearest lattice copy of the hole boundary."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if placement.eps == 0.0:
        d = cell.wrap(X - np.asarray(placement.p)[None, :])
        return np.sqrt(np.sum(d * d, axis=1))
    probe = placement.curve if placement.curve.n >= 512 else \
        placement.curve.resample(512)
    nodes = np.asarray(placement.p)[None, :] + placement.eps * probe.nodes
    best = np.full(X.shape[0], np.inf)
    for j in range(0, nodes.shape[0], 256):
        d = cell.wrap(X[:, None, :] - nodes[None, j:j + 256, :])
        best = np.minimum(best, np.min(np.sum(d * d, axis=2), axis=1))
    spacing = placement.eps * float(np.max(probe.speed)) * (2 * np.pi / probe.n)
    return np.maximum(np.sqrt(best) - 0.5 * spacing, 0.0)


def default_boundary_guard(placement: Placement) -> float:
    """Distance below which plain coarse-node evaluation is refused."""
    spacing = (placement.eps * float(np.max(placement.curve.speed))
               * 2 * np.pi / placement.curve.n)
    return 4.0 * spacing


def eval_w_periodic(theta: Density, placement: Placement,
                    cell: lg.LatticeCell, params: lg.EwaldParams,
                    x, guard: float | None = None) -> float:
    """Periodic double-layer potential of theta at a single point.

    The point must keep a configurable distance from every lattice copy of
    the hole boundary; values on either side of the boundary are fine (the
    potential is defined across it, with a jump).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (2,):
        raise ValueError("x must be a 2-vector")
    if placement.eps == 0.0:
        return 0.0
    if guard is None:
        guard = default_boundary_guard(placement)
    dist = float(hole_distance(placement, cell, x[None, :])[0])
    if dist <= guard:
        raise ProximityError(
            f"evaluation point at distance {dist:.3e} from the hole boundary "
            f"(guard {guard:.3e}); use offset extrapolation for traces")
    dlp = PeriodicDoubleLayer(theta, placement, cell, params)
    return float(dlp.values(x[None, :], dmin=dist)[0])


# ---------------------------------------------------------------------------
# Jump relations
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class JumpReport:
    """Nodewise defects of the trace and flux matching relations."""

    jump_defect: float          # (w+ - w-) vs the density
    exterior_defect: float      # w- vs -mu/2 + principal value
    interior_defect: float      # w+ vs +mu/2 + principal value
    normal_defect: float        # exterior vs interior normal derivative
    extrapolation_error: float

    def max_defect(self) -> float:
        return max(self.jump_defect, self.exterior_defect,
                   self.interior_defect, self.normal_defect)


def check_jump(theta: Density, placement: Placement, cell: lg.LatticeCell,
               params: lg.EwaldParams) -> JumpReport:
    """Verify the trace jump and normal-derivative continuity at the nodes.

    One-sided traces come from offset Richardson ladders; the boundary
    principal value comes from the assembled free + regular matrices (the
    node values of both agree with the integral on the placed hole after
    rescaling).
    """
    if placement.eps == 0.0:
        raise ValueError("jump check needs a non-degenerate hole (eps > 0)")
    curve = placement.curve
    dlp = PeriodicDoubleLayer(theta, placement, cell, params)

    pv = (assemble_free(curve).apply(theta.values)
          + assemble_regular(curve, placement.eps, cell, params).apply(theta.values))

    w_minus, err_m = dlp.trace_values(side=+1)
    w_plus, err_p = dlp.trace_values(side=-1)
    dn_minus, err_gm = dlp.trace_normal_derivatives(side=+1)
    dn_plus, err_gp = dlp.trace_normal_derivatives(side=-1)

    mu = theta.values
    return JumpReport(
        jump_defect=float(np.max(np.abs((w_plus - w_minus) - mu))),
        exterior_defect=float(np.max(np.abs(w_minus - (-0.5 * mu + pv)))),
        interior_defect=float(np.max(np.abs(w_plus - (0.5 * mu + pv)))),
        normal_defect=float(np.max(np.abs(dn_plus - dn_minus))),
        extrapolation_error=float(max(np.max(err_m), np.max(err_p),
                                      np.max(err_gm), np.max(err_gp))),
    )
