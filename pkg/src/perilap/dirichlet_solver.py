"""Dense solves of the rescaled boundary system and its limiting form.

The unknowns are a mean-zero density theta at the reference-curve nodes and
a scalar xi.  At hole scaling eps > 0 the collocation rows read

    -theta_i/2 + [W theta]_i + [W_R(eps) theta]_i + xi = g_i,

with W the free double-layer matrix and W_R the lattice correction; one
extra row enforces the quadrature mean of theta to vanish, and the xi column
is all ones.  The system is solved by dense LU with partial pivoting (the
operator is a compact perturbation of -I/2, so conditioning is benign at
the node counts used here).  Dropping the W_R term gives the eps = 0
limiting system, whose solution controls every small-eps limit downstream.

``solve_tau0`` produces the normalized kernel density of the transposed
free operator; by discrete duality the limiting xi equals the tau0-weighted
quadrature mean of the boundary datum to solver precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import lattice_green as lg
from .boundary_geometry import BoundaryCurve, Placement
from .layer_potentials import (Density, assemble_free, assemble_free_adjoint,
                               assemble_regular)

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class BoundaryDatum:
    """Finite Fourier series a0 + sum_k (a_k cos kt + b_k sin kt) on the curve parameter."""

    a0: float = 0.0
    cos_coeffs: tuple[float, ...] = ()
    sin_coeffs: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "cos_coeffs", tuple(float(c) for c in self.cos_coeffs))
        object.__setattr__(self, "sin_coeffs", tuple(float(c) for c in self.sin_coeffs))
        object.__setattr__(self, "a0", float(self.a0))

    @property
    def degree(self) -> int:
        return max(len(self.cos_coeffs), len(self.sin_coeffs))

    def values_at(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, self.a0)
        for k, a in enumerate(self.cos_coeffs, start=1):
            out += a * np.cos(k * t)
        for k, b in enumerate(self.sin_coeffs, start=1):
            out += b * np.sin(k * t)
        return out

    def values(self, curve: BoundaryCurve) -> np.ndarray:
        if self.degree > curve.n // 4:
            raise ValueError(
                f"datum degree {self.degree} too high for {curve.n} nodes "
                "(limit n/4)")
        return self.values_at(curve.t)

    def sup_norm(self) -> float:
        return (abs(self.a0) + sum(abs(c) for c in self.cos_coeffs)
                + sum(abs(b) for b in self.sin_coeffs))


@dataclass(frozen=True)
class RescaledSolution:
    """Density/constant pair solving the boundary system at a given eps."""

    theta: Density
    xi: float
    eps: float
    datum: BoundaryDatum
    residual: float
    placement: Placement | None = None

    def __post_init__(self):
        bound = RESIDUAL_TOL * (1.0 + self.datum.sup_norm())
        if self.residual > bound:
            raise ValueError(
                f"solver residual {self.residual:.3e} exceeds {bound:.3e}")

    @property
    def curve(self) -> BoundaryCurve:
        return self.theta.curve


@dataclass(frozen=True)
class AdjointDensity:
    """Normalized kernel density of the transposed free double layer."""

    tau0: Density
    residual: float
    replaced_row_defect: float

    def __post_init__(self):
        if abs(self.tau0.mass - 1.0) > 1e-10:
            raise ValueError("tau0 normalization defect exceeds 1e-10")
        if self.residual > 1e-8:
            raise ValueError(f"adjoint residual {self.residual:.3e} exceeds 1e-8")


def _solve_augmented(curve: BoundaryCurve, system: np.ndarray,
                     g_values: np.ndarray):
    n = curve.n
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = system
    aug[:n, n] = 1.0
    aug[n, :n] = curve.weights
    rhs = np.concatenate([g_values, [0.0]])
    sol = scipy.linalg.lu_solve(scipy.linalg.lu_factor(aug), rhs)
    residual = float(np.max(np.abs(aug @ sol - rhs)))
    return sol[:n], float(sol[n]), residual


def solve_rescaled(placement: Placement, cell: lg.LatticeCell,
                   params: lg.EwaldParams, datum: BoundaryDatum) -> RescaledSolution:
    """Solve the boundary system at placement.eps > 0."""
    if placement.eps <= 0.0:
        raise ValueError("rescaled solve needs eps > 0; "
                         "use solve_limiting for the degenerate system")
    curve = placement.curve
    system = (-0.5 * np.eye(curve.n)
              + assemble_free(curve).matrix
              + assemble_regular(curve, placement.eps, cell, params).matrix)
    g = datum.values(curve)
    theta, xi, residual = _solve_augmented(curve, system, g)
    return RescaledSolution(theta=Density(theta, curve, mean_zero=True),
                            xi=xi, eps=placement.eps, datum=datum,
                            residual=residual, placement=placement)


def solve_limiting(curve: BoundaryCurve, datum: BoundaryDatum) -> RescaledSolution:
    """Solve the degenerate (eps = 0) system: free kernel only."""
    system = -0.5 * np.eye(curve.n) + assemble_free(curve).matrix
    g = datum.values(curve)
    theta, xi, residual = _solve_augmented(curve, system, g)
    return RescaledSolution(theta=Density(theta, curve, mean_zero=True),
                            xi=xi, eps=0.0, datum=datum, residual=residual,
                            placement=None)


def solve_tau0(curve: BoundaryCurve) -> AdjointDensity:
    """Kernel density of the transposed free operator with unit mass.

    The homogeneous system is rank-deficient by exactly one, so the row with
    the largest diagonal magnitude is replaced by the normalization; the
    defect of the replaced equation is reported alongside the residual of
    the remaining ones.
    """
    n = curve.n
    B = -0.5 * np.eye(n) + assemble_free_adjoint(curve).matrix
    row = int(np.argmax(np.diag(B)))
    A = B.copy()
    A[row, :] = curve.weights
    rhs = np.zeros(n)
    rhs[row] = 1.0
    tau = scipy.linalg.lu_solve(scipy.linalg.lu_factor(A), rhs)
    full = B @ tau
    replaced_defect = float(abs(full[row]))
    residual = float(np.max(np.abs(full)))
    return AdjointDensity(tau0=Density(tau, curve), residual=residual,
                          replaced_row_defect=replaced_defect)


def convergence_study(curve: BoundaryCurve, p, cell: lg.LatticeCell,
                      params: lg.EwaldParams, datum: BoundaryDatum,
                      eps: float, n_list: list[int]):
    """Self-convergence of (theta, xi) against the finest node count.

    Node counts must be increasing and divide the finest one so coarse nodes
    are a subset of fine nodes; errors are sup norms on the coarse nodes.
    Returns a list of (n, error) pairs for all but the finest entry.
    """
    from .boundary_geometry import place

    if sorted(n_list) != list(n_list) or len(set(n_list)) != len(n_list):
        raise ValueError("node counts must be strictly increasing")
    n_fine = n_list[-1]
    solutions = {}
    for n in n_list:
        cn = curve.resample(n)
        if eps == 0.0:
            solutions[n] = solve_limiting(cn, datum)
        else:
            solutions[n] = solve_rescaled(place(cn, p, eps, cell), cell,
                                          params, datum)
    fine = solutions[n_fine]
    rows = []
    for n in n_list[:-1]:
        if n_fine % n:
            raise ValueError("coarse node counts must divide the finest")
        stride = n_fine // n
        err = float(np.max(np.abs(solutions[n].theta.values
                                  - fine.theta.values[::stride])))
        err += abs(solutions[n].xi - fine.xi)
        rows.append((n, err))
    return rows
