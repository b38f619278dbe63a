"""Scaling sweeps, polynomial fits, and extrapolation to the degenerate limit.

Each functional of the solved field (the constant xi, the field at a fixed
point, the rescaled near-hole field, the cell energy) is sampled over a grid
of hole scalings, fitted by least squares with a polynomial in the scaled
variable eps/eps_max, and extrapolated to eps = 0 by the constant
coefficient.  Agreement of the extrapolated constant with the directly
computed degenerate limit, stability of the fit under degree and grid
changes, and small fit residuals together are the numerical evidence that
these functionals continue smoothly through zero scaling.

Residuals are reported, never suppressed; the comparison of constants
across grids uses the exact sensitivity of the constant coefficient to
value perturbations (the first row of the fit pseudoinverse), so the
stability checks are bounds, not heuristics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lattice_green as lg
from .boundary_geometry import BoundaryCurve, compute_eps0, place
from .dirichlet_solver import (BoundaryDatum, RescaledSolution,
                               solve_limiting, solve_rescaled)
from .field_and_energy import (energy, energy_limit, eval_U0,
                               eval_limiting_exterior, eval_macroscopic,
                               eval_microscopic)

FUNCTIONALS = ("xi", "U_at_point", "microscopic_at", "energy_G")

# Extrapolated-limit tolerances per functional (acceptance scale).
DEFAULT_LIMIT_TOLS = {
    "xi": 1e-6,
    "U_at_point": 1e-4,
    "microscopic_at": 1e-3,
    "energy_G": 1e-3,
}


@dataclass(frozen=True)
class SweepProblem:
    """Geometry, datum, and probe points for a family of solves."""

    curve: BoundaryCurve
    p: tuple[float, float]
    cell: lg.LatticeCell
    params: lg.EwaldParams
    datum: BoundaryDatum
    macro_point: tuple[float, float] | None = None
    micro_point: tuple[float, float] | None = None

    @property
    def eps0(self) -> float:
        return compute_eps0(self.curve, self.p, self.cell)

    def solve_at(self, eps: float) -> RescaledSolution:
        placement = place(self.curve, self.p, eps, self.cell)
        return solve_rescaled(placement, self.cell, self.params, self.datum)

    def limiting(self) -> RescaledSolution:
        return solve_limiting(self.curve, self.datum)


@dataclass(frozen=True)
class SweepTable:
    """Functional values over an ascending grid of hole scalings."""

    functional_id: str
    eps_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eps_grid",
                           np.asarray(self.eps_grid, dtype=float))
        object.__setattr__(self, "values",
                           np.asarray(self.values, dtype=float))
        if np.any(np.diff(self.eps_grid) <= 0) or np.any(self.eps_grid <= 0):
            raise ValueError("eps grid must be ascending and positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite sweep values")


@dataclass(frozen=True)
class FitResult:
    """Least-squares polynomial fit of a sweep in the scaled variable."""

    coeffs: np.ndarray          # in powers of eps/scale
    scale: float
    max_residual: float
    extrapolated_limit: float   # constant coefficient
    limit_sensitivity: float    # l1 norm of the constant's pseudoinverse row

    def predict(self, eps: np.ndarray) -> np.ndarray:
        u = np.asarray(eps, dtype=float) / self.scale
        return np.polyval(self.coeffs[::-1], u)


def chebyshev_grid(count: int, lo: float, hi: float) -> np.ndarray:
    """Chebyshev points of the first kind on [lo, hi], ascending."""
    k = np.arange(count)
    x = np.cos(np.pi * (2 * k + 1) / (2 * count))
    return np.sort(0.5 * (lo + hi) + 0.5 * (hi - lo) * x)


def default_eps_grid(problem: SweepProblem, count: int = 8,
                     lo: float = 0.05) -> np.ndarray:
    """Eight Chebyshev-spaced scalings between lo and half the admissible bound."""
    return chebyshev_grid(count, lo, 0.5 * problem.eps0)


def sweep(functional_id: str, problem: SweepProblem,
          eps_grid: np.ndarray) -> SweepTable:
    """One solve per grid point; deterministic for a fixed problem."""
    if functional_id not in FUNCTIONALS:
        raise ValueError(f"unknown functional {functional_id!r}; "
                         f"choose from {FUNCTIONALS}")
    eps_grid = np.asarray(eps_grid, dtype=float)
    if np.any(eps_grid >= problem.eps0):
        raise ValueError("grid reaches the admissible scaling bound")
    if functional_id == "U_at_point" and problem.macro_point is None:
        raise ValueError("problem has no macro_point")
    if functional_id == "microscopic_at" and problem.micro_point is None:
        raise ValueError("problem has no micro_point")

    values = []
    for eps in eps_grid:
        sol = problem.solve_at(float(eps))
        if functional_id == "xi":
            values.append(sol.xi)
        elif functional_id == "U_at_point":
            values.append(eval_macroscopic(sol, problem.cell, problem.params,
                                           problem.macro_point).value)
        elif functional_id == "microscopic_at":
            values.append(eval_microscopic(sol, problem.cell, problem.params,
                                           problem.micro_point).value)
        else:
            values.append(energy(sol, problem.cell, problem.params).G)
    return SweepTable(functional_id=functional_id, eps_grid=eps_grid,
                      values=np.array(values))


def fit(table: SweepTable, degree: int = 4) -> FitResult:
    """Least-squares polynomial in eps/eps_max; the grid must oversample it."""
    m = table.eps_grid.shape[0]
    if m < degree + 2:
        raise ValueError(f"grid of {m} points cannot support degree {degree} "
                         "(need degree + 2)")
    scale = float(table.eps_grid[-1])
    V = np.vander(table.eps_grid / scale, degree + 1, increasing=True)
    coeffs, _, rank, _ = np.linalg.lstsq(V, table.values, rcond=None)
    if rank < degree + 1:
        raise ValueError("degenerate grid: fit matrix is rank deficient")
    resid = float(np.max(np.abs(V @ coeffs - table.values)))
    sens = float(np.sum(np.abs(np.linalg.pinv(V)[0])))
    return FitResult(coeffs=coeffs, scale=scale, max_residual=resid,
                     extrapolated_limit=float(coeffs[0]),
                     limit_sensitivity=sens)


@dataclass(frozen=True)
class LimitCheck:
    functional_id: str
    extrapolated: float
    limit: float
    difference: float
    max_residual: float
    tolerance: float
    passed: bool


@dataclass(frozen=True)
class LimitReport:
    checks: tuple[LimitCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def check_limits(problem: SweepProblem, degree: int = 4,
                 eps_grid: np.ndarray | None = None,
                 tolerances: dict[str, float] | None = None) -> LimitReport:
    """Extrapolate every applicable functional and compare with its limit."""
    tols = dict(DEFAULT_LIMIT_TOLS)
    if tolerances:
        tols.update(tolerances)
    if eps_grid is None:
        eps_grid = default_eps_grid(problem)

    limiting = problem.limiting()
    checks = []
    for fid in FUNCTIONALS:
        if fid == "U_at_point" and problem.macro_point is None:
            continue
        if fid == "microscopic_at" and problem.micro_point is None:
            continue
        result = fit(sweep(fid, problem, eps_grid), degree)
        if fid == "xi":
            limit = limiting.xi
        elif fid == "U_at_point":
            zero = place(problem.curve, problem.p, 0.0, problem.cell)
            limit = eval_U0(limiting, zero, problem.cell, problem.params,
                            problem.macro_point).value
        elif fid == "microscopic_at":
            limit = eval_limiting_exterior(limiting, problem.micro_point).value
        else:
            limit = energy_limit(limiting)
        diff = abs(result.extrapolated_limit - limit)
        checks.append(LimitCheck(functional_id=fid,
                                 extrapolated=result.extrapolated_limit,
                                 limit=float(limit), difference=diff,
                                 max_residual=result.max_residual,
                                 tolerance=tols[fid],
                                 passed=bool(diff < tols[fid])))
    return LimitReport(checks=tuple(checks))
