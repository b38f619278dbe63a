"""Field evaluation, scaling limits, and the cell energy of the solution.

Away from the holes the solution is reconstructed from the solved density,

    u(x) = -eps * sum_j DS_per(x - p - eps s_j) . nu_j theta_j w_j + xi,

and the same sums without the eps prefactor give the macroscopic factor U
in u = eps U + xi.  Near the hole the natural variable is t = (x - p)/eps;
in that frame the field splits exactly into a free double layer on the
reference curve plus the smooth lattice correction, which is what the
microscopic evaluator computes.  At eps = 0 the free part alone solves the
exterior problem with datum g0 - xi0 and decay at infinity.

Boundary gradients (for the energy and for the exterior normal derivative
of the limiting field) come from the shared offset-ladder policy: the free
part is Richardson-extrapolated from one side, the lattice part is analytic
across the boundary and is evaluated directly at the nodes.  The cell
energy is the boundary flux integral

    G = -sum_i (D u_micro . nu)_i g_i w_i,

whose eps = 0 limit is checked against the exterior Dirichlet energy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lattice_green as lg
from ._nearfield import (QUAD_TOL, FreeDoubleLayer, SourceGeometry,
                         extrapolate_ladder, min_distance)
from .boundary_geometry import BoundaryCurve, Placement, _shape_xva
from .dirichlet_solver import RescaledSolution
from .exceptions import ExtrapolationError, ProximityError
from .layer_potentials import (Density, PeriodicDoubleLayer,
                               default_boundary_guard, hole_distance)


@dataclass(frozen=True)
class FieldSample:
    """Field value (and optional gradient) at a point."""

    point: np.ndarray
    value: float
    gradient: np.ndarray | None = None

    def __post_init__(self):
        ok = np.isfinite(self.value)
        if self.gradient is not None:
            ok = ok and bool(np.all(np.isfinite(self.gradient)))
        if not ok:
            raise ValueError("non-finite field sample")


@dataclass(frozen=True)
class EnergyValue:
    """Factored cell energy G and the raw integral eps^(n-2) G (equal in 2D)."""

    eps: float
    G: float
    raw: float


def _require_placement(sol: RescaledSolution) -> Placement:
    if sol.placement is None:
        raise ValueError("solution carries no placement (degenerate solve); "
                         "field evaluation needs one")
    return sol.placement


def _placed_strengths(sol: RescaledSolution) -> tuple[np.ndarray, np.ndarray]:
    pl = _require_placement(sol)
    m = pl.normals * (sol.theta.values * pl.weights)[:, None]
    return pl.nodes, m


def eval_solution_batch(sol: RescaledSolution, cell: lg.LatticeCell,
                        params: lg.EwaldParams, X: np.ndarray,
                        with_gradient: bool = False,
                        guard: float | None = None):
    """Solution values (and gradients) at points away from all hole copies."""
    pl = _require_placement(sol)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if guard is None:
        guard = default_boundary_guard(pl)
    dist = hole_distance(pl, cell, X)
    if np.any(dist <= guard):
        raise ProximityError(
            f"points within {guard:.3e} of a hole boundary copy; "
            "use boundary_trace for traces")
    nodes, m = _placed_strengths(sol)
    d = (X[:, None, :] - nodes[None, :, :]).reshape(-1, 2)
    _, grad, hess = lg.periodic_batch(d, cell, params, want_value=False,
                                      want_hess=with_gradient)
    grad = grad.reshape(X.shape[0], -1, 2)
    values = -np.einsum("ijk,jk->i", grad, m) + sol.xi
    if not with_gradient:
        return values, None
    hess = hess.reshape(X.shape[0], -1, 2, 2)
    return values, -np.einsum("ijkl,jl->ik", hess, m)


def eval_solution(sol: RescaledSolution, cell: lg.LatticeCell,
                  params: lg.EwaldParams, x, with_gradient: bool = False,
                  guard: float | None = None) -> FieldSample:
    """Reconstructed solution at one point of the perforated domain."""
    x = np.asarray(x, dtype=float)
    values, grads = eval_solution_batch(sol, cell, params, x[None, :],
                                        with_gradient, guard)
    return FieldSample(point=x, value=float(values[0]),
                       gradient=None if grads is None else grads[0])


def eval_macroscopic(sol: RescaledSolution, cell: lg.LatticeCell,
                     params: lg.EwaldParams, x,
                     guard: float | None = None) -> FieldSample:
    """Macroscopic factor U(x) with u = eps U + xi, for x away from p mod lattice.

    Uses reference-curve weights, so no eps prefactor appears; the identity
    against eval_solution holds to roundoff by construction.
    """
    pl = _require_placement(sol)
    x = np.asarray(x, dtype=float)
    if guard is None:
        guard = default_boundary_guard(pl)
    dist = hole_distance(pl, cell, x[None, :])
    dp = cell.wrap(x - pl.p)
    if np.any(dist <= guard) or np.sqrt(np.sum(dp * dp)) <= guard:
        raise ProximityError("point too close to the degeneration center or hole")
    curve = pl.curve
    m = curve.normals * (sol.theta.values * curve.weights)[:, None]
    d = x[None, None, :] - pl.nodes[None, :, :]
    _, grad, _ = lg.periodic_batch(d.reshape(-1, 2), cell, params,
                                   want_value=False)
    value = -np.einsum("jk,jk->", grad.reshape(-1, 2), m)
    return FieldSample(point=x, value=float(value))


def eval_U0(limiting: RescaledSolution, placement: Placement,
            cell: lg.LatticeCell, params: lg.EwaldParams, x,
            levels: int | None = None) -> FieldSample:
    """Limit of the macroscopic factor from the two boundary moments.

    Contracts the periodic kernel gradient at x - p with the difference of
    the datum moment  int nu g0  and the flux moment  int s (d u0/d nu),
    the latter from the extrapolated exterior normal derivative of the
    limiting field.
    """
    if limiting.eps != 0.0:
        raise ValueError("eval_U0 expects the degenerate (eps = 0) solution")
    x = np.asarray(x, dtype=float)
    curve = limiting.curve
    g0 = limiting.datum.values(curve)
    dn = normal_derivative_limiting(limiting, levels=levels).values
    mom_g = np.sum(curve.normals * (g0 * curve.weights)[:, None], axis=0)
    mom_flux = np.sum(curve.nodes * (dn * curve.weights)[:, None], axis=0)
    _, grad, _ = lg.periodic_batch((x - np.asarray(placement.p))[None, :],
                                   cell, params, want_value=False)
    return FieldSample(point=x, value=float(grad[0] @ (mom_g - mom_flux)))


def _winding(curve: BoundaryCurve, X: np.ndarray) -> np.ndarray:
    """Double-layer indicator: ~1 inside the curve, ~0 outside."""
    d = X[:, None, :] - curve.nodes[None, :, :]
    r2 = np.sum(d * d, axis=2)
    ker = -np.einsum("ijk,jk->ij", d, curve.normals) / (2 * np.pi * r2)
    return ker @ (np.ones(curve.n) * curve.weights)


def eval_limiting_exterior(limiting: RescaledSolution, t,
                           with_gradient: bool = False) -> FieldSample:
    """Limiting exterior field at a point t outside the reference hole.

    The representation decays at infinity for the mean-zero solved density;
    values arbitrarily close to the boundary are handled by upsampling.
    """
    if limiting.eps != 0.0:
        raise ValueError("expects the degenerate (eps = 0) solution")
    t = np.asarray(t, dtype=float)
    curve = limiting.curve
    geom = SourceGeometry(curve, np.zeros(2), 1.0)
    dmin = min_distance(geom, t[None, :])
    spacing = 2 * np.pi * float(np.max(curve.speed)) / curve.n
    if dmin <= 0.5 * spacing:
        raise ProximityError("point within half a node spacing of the "
                             "boundary; use boundary traces instead")
    if _winding(curve, t[None, :])[0] > 0.5:
        raise ValueError(f"point {t.tolist()} lies inside the hole")
    free = FreeDoubleLayer(geom, limiting.theta.values)
    value = float(free.values(t[None, :], dmin=dmin)[0])
    grad = free.gradients(t[None, :], dmin=dmin)[0] if with_gradient else None
    return FieldSample(point=t, value=value, gradient=grad)


def normal_derivative_limiting(limiting: RescaledSolution,
                               levels: int | None = None,
                               err_tol: float = 1e-3) -> Density:
    """Exterior normal derivative of the limiting field at the nodes."""
    if limiting.eps != 0.0:
        raise ValueError("expects the degenerate (eps = 0) solution")
    curve = limiting.curve
    geom = SourceGeometry(curve, np.zeros(2), 1.0)
    free = FreeDoubleLayer(geom, limiting.theta.values)
    normals = curve.normals

    def normal_component(X, n_min):
        return np.einsum("ij,ij->i", free.gradients(X, n_min=n_min), normals)

    kwargs = {} if levels is None else {"levels": levels}
    dn, err = extrapolate_ladder(normal_component, geom, side=+1, **kwargs)
    scale = float(np.max(np.abs(dn))) + 1.0
    if np.max(err) > err_tol * scale:
        raise ExtrapolationError(
            f"normal-derivative ladder correction {np.max(err):.3e} has not "
            "converged; increase the node count")
    return Density(dn, curve)


def boundary_trace(sol: RescaledSolution, cell: lg.LatticeCell,
                   params: lg.EwaldParams, t_params,
                   levels: int = 5) -> np.ndarray:
    """Dirichlet trace of the solution at arbitrary boundary parameters.

    Exterior offset ladder at off-node points; the offsets scale with the
    local parametrization speed like the nodewise ladders.
    """
    pl = _require_placement(sol)
    t_params = np.atleast_1d(np.asarray(t_params, dtype=float))
    curve = pl.curve
    x, v, _ = _shape_xva(curve.shape, t_params)
    speed = np.linalg.norm(v, axis=1)
    normals = np.stack([v[:, 1], -v[:, 0]], axis=-1) / speed[:, None]
    base = pl.p[None, :] + pl.eps * x

    dlp = PeriodicDoubleLayer(sol.theta, pl, cell, params)
    geom = SourceGeometry(curve, pl.p, pl.eps)
    step0 = geom.offset_step0(0.1)
    ladder = []
    for k in range(levels):
        step = step0 * 0.5 ** k
        X = base + (step * pl.eps * speed)[:, None] * normals
        n_min = np.log(1.0 / QUAD_TOL) / step
        ladder.append(dlp._free.values(X, n_min=n_min))
    from ._nearfield import richardson
    free, _ = richardson(np.stack(ladder))
    return free + dlp._regular_values(base) + sol.xi


def eval_microscopic(sol: RescaledSolution, cell: lg.LatticeCell,
                     params: lg.EwaldParams, t,
                     with_gradient: bool = False) -> FieldSample:
    """Rescaled near-hole field: u(p + eps t) = value + xi exactly.

    Splits into the free double layer on the reference curve plus the
    lattice correction with contracted argument; the free part of the split
    reproduces the periodic kernel's log part exactly under the rescaling.
    """
    pl = _require_placement(sol)
    if pl.eps <= 0.0:
        raise ValueError("microscopic evaluation needs eps > 0")
    t = np.asarray(t, dtype=float)
    curve = pl.curve
    geom = SourceGeometry(curve, np.zeros(2), 1.0)
    dmin = min_distance(geom, t[None, :])
    spacing = 2 * np.pi * float(np.max(curve.speed)) / curve.n
    if dmin <= 0.5 * spacing:
        raise ProximityError("point within half a node spacing of the hole")
    if _winding(curve, t[None, :])[0] > 0.5:
        raise ValueError(f"point {t.tolist()} lies inside the hole")
    x_phys = pl.p + pl.eps * t
    if float(hole_distance(pl, cell, x_phys[None, :])[0]) <= 0.0:
        raise ValueError("rescaled point lands in a lattice copy of the hole")

    free = FreeDoubleLayer(geom, sol.theta.values)
    value = float(free.values(t[None, :], dmin=dmin)[0])
    m = curve.normals * (sol.theta.values * curve.weights)[:, None]
    d = pl.eps * (t[None, :] - curve.nodes)
    _, grad, hess = lg.regular_batch(d, cell, params, want_value=False,
                                     want_hess=with_gradient)
    value += -pl.eps * float(np.einsum("jk,jk->", grad, m))
    gradient = None
    if with_gradient:
        gradient = (free.gradients(t[None, :], dmin=dmin)[0]
                    - pl.eps ** 2 * np.einsum("jkl,jl->k", hess, m))
    return FieldSample(point=t, value=value, gradient=gradient)


def energy(sol: RescaledSolution, cell: lg.LatticeCell,
           params: lg.EwaldParams, levels: int | None = None) -> EnergyValue:
    """Cell energy from the boundary flux of the rescaled field.

    The flux is the exterior normal derivative of the microscopic field at
    the nodes (free part extrapolated, lattice part direct), contracted
    with the boundary datum under quadrature.
    """
    pl = _require_placement(sol)
    if pl.eps <= 0.0:
        raise ValueError("energy needs eps > 0; use energy_limit at eps = 0")
    curve = pl.curve
    geom = SourceGeometry(curve, np.zeros(2), 1.0)
    free = FreeDoubleLayer(geom, sol.theta.values)
    normals = curve.normals

    def normal_component(X, n_min):
        return np.einsum("ij,ij->i", free.gradients(X, n_min=n_min), normals)

    kwargs = {} if levels is None else {"levels": levels}
    dn_free, _ = extrapolate_ladder(normal_component, geom, side=+1, **kwargs)

    m = curve.normals * (sol.theta.values * curve.weights)[:, None]
    d = pl.eps * (curve.nodes[:, None, :] - curve.nodes[None, :, :])
    _, _, hess = lg.regular_batch(d.reshape(-1, 2), cell, params,
                                  want_value=False, want_hess=True)
    hess = hess.reshape(curve.n, curve.n, 2, 2)
    dn_smooth = -pl.eps ** 2 * np.einsum("ijkl,jl,ik->i", hess, m, normals)

    g = sol.datum.values(curve)
    G = -float(np.sum((dn_free + dn_smooth) * g * curve.weights))
    return EnergyValue(eps=pl.eps, G=G, raw=G)


def energy_limit(limiting: RescaledSolution,
                 levels: int | None = None) -> float:
    """Limit of the cell energy: exterior Dirichlet energy of the limiting field."""
    if limiting.eps != 0.0:
        raise ValueError("expects the degenerate (eps = 0) solution")
    curve = limiting.curve
    dn = normal_derivative_limiting(limiting, levels=levels).values
    g0 = limiting.datum.values(curve)
    return -float(np.sum(dn * (g0 - limiting.xi) * curve.weights))
