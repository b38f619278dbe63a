"""Smooth hole shapes, their quadrature data, and placement into a cell.

Shapes are analytic catalog entries (disk, ellipse, kite) parametrized
counterclockwise over [0, 2pi), with closed-form derivatives so normals,
speed and curvature are exact at the nodes.  Quadrature is the periodic
trapezoid rule at equispaced parameters, spectrally accurate for the smooth
kernels assembled downstream.

A ``Placement`` scales a reference shape by eps about a center p inside the
cell; the admissible range of eps is governed by the largest scaling for
which every copy of the scaled hole stays strictly inside its cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice_green import LatticeCell


@dataclass(frozen=True)
class ShapeSpec:
    """Catalog shape identifier plus positive parameters."""

    kind: str
    params: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("disk", "ellipse", "kite"):
            raise ValueError(f"unknown shape kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        expected = {"disk": 1, "ellipse": 2, "kite": 0}[self.kind]
        if len(self.params) != expected:
            raise ValueError(f"{self.kind} takes {expected} parameter(s)")
        if any(p <= 0 for p in self.params):
            raise ValueError("shape parameters must be positive")


def disk(radius: float) -> ShapeSpec:
    return ShapeSpec("disk", (radius,))


def ellipse(a: float, b: float) -> ShapeSpec:
    return ShapeSpec("ellipse", (a, b))


def kite() -> ShapeSpec:
    """Non-symmetric smooth test shape (cos t + 0.65 cos 2t - 0.65, 1.5 sin t)."""
    return ShapeSpec("kite")


def _shape_xva(shape: ShapeSpec, t: np.ndarray):
    """Position, velocity, acceleration of the parametrization at parameters t."""
    t = np.asarray(t, dtype=float)
    if shape.kind == "disk":
        r = shape.params[0]
        x = np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)
        v = np.stack([-r * np.sin(t), r * np.cos(t)], axis=-1)
        a = -x
    elif shape.kind == "ellipse":
        ea, eb = shape.params
        x = np.stack([ea * np.cos(t), eb * np.sin(t)], axis=-1)
        v = np.stack([-ea * np.sin(t), eb * np.cos(t)], axis=-1)
        a = -x
    else:  # kite
        x = np.stack([np.cos(t) + 0.65 * np.cos(2 * t) - 0.65,
                      1.5 * np.sin(t)], axis=-1)
        v = np.stack([-np.sin(t) - 1.3 * np.sin(2 * t),
                      1.5 * np.cos(t)], axis=-1)
        a = np.stack([-np.cos(t) - 2.6 * np.cos(2 * t),
                      -1.5 * np.sin(t)], axis=-1)
    return x, v, a


def axis_extents(shape: ShapeSpec) -> np.ndarray:
    """Per-axis maxima of |x_j| over the closed shape (attained on the boundary)."""
    if shape.kind == "disk":
        r = shape.params[0]
        return np.array([r, r])
    if shape.kind == "ellipse":
        return np.array(shape.params)
    # kite: x'(t) = -sin t (1 + 2.6 cos t) vanishes at t = 0, pi and
    # cos t = -1/2.6; the interior critical point gives the x-extent.
    c = -1.0 / 2.6
    x_crit = abs(c + 0.65 * (2 * c * c - 1) - 0.65)
    return np.array([max(1.0, x_crit), 1.5])


@dataclass(frozen=True)
class BoundaryCurve:
    """Closed counterclockwise curve sampled at equispaced parameters.

    Attributes
    ----------
    shape : ShapeSpec
        Analytic catalog entry the nodes were sampled from.
    t : (N,) ndarray
        Parameter values 2 pi k / N.
    nodes, tangents, normals : (N, 2) ndarrays
        Node positions, unit tangents, unit outward normals.
    speed : (N,) ndarray
        |dx/dt| at the nodes.
    curvature : (N,) ndarray
        Signed curvature (positive for convex arcs under this orientation).
    weights : (N,) ndarray
        Trapezoid quadrature weights (2 pi / N) * speed for arclength
        integrals.
    """

    shape: ShapeSpec
    t: np.ndarray
    nodes: np.ndarray
    tangents: np.ndarray
    normals: np.ndarray
    speed: np.ndarray
    curvature: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return self.t.shape[0]

    @property
    def perimeter(self) -> float:
        return float(np.sum(self.weights))

    def point(self, t) -> np.ndarray:
        return _shape_xva(self.shape, t)[0]

    def resample(self, n: int) -> "BoundaryCurve":
        return make_curve(self.shape, n)

    def signed_area(self) -> float:
        x, v, _ = _shape_xva(self.shape, self.t)
        return float(np.sum(x[:, 0] * v[:, 1] - x[:, 1] * v[:, 0])
                     * (np.pi / self.n))

    def feature_size(self) -> float:
        """Scale used for offset ladders: min of curvature radius and mean radius."""
        return float(min(1.0 / np.max(np.abs(self.curvature)),
                         self.perimeter / (2 * np.pi)))


def make_curve(shape: ShapeSpec, n: int) -> BoundaryCurve:
    """Sample a catalog shape at n equispaced parameters with analytic data."""
    if n < 8 or n % 2 != 0:
        raise ValueError(f"node count must be even and at least 8, got {n}")
    t = 2 * np.pi * np.arange(n) / n
    x, v, a = _shape_xva(shape, t)
    speed = np.linalg.norm(v, axis=1)
    tangents = v / speed[:, None]
    # Outward normal for a counterclockwise parametrization.
    normals = np.stack([tangents[:, 1], -tangents[:, 0]], axis=-1)
    curvature = (v[:, 0] * a[:, 1] - v[:, 1] * a[:, 0]) / speed ** 3
    weights = (2 * np.pi / n) * speed
    return BoundaryCurve(shape=shape, t=t, nodes=x, tangents=tangents,
                         normals=normals, speed=speed, curvature=curvature,
                         weights=weights)


def compute_eps0(curve: BoundaryCurve, p, cell: LatticeCell) -> float:
    """Largest scaling bound: p + eps * (closed shape) stays in the open cell
    for every |eps| below the returned value.

    Uses the per-axis extents of the shape against the distances from p to
    the cell faces; both signs of eps are admitted, so the extent is the
    maximum of |x_j| over the shape.
    """
    p = np.asarray(p, dtype=float)
    q = cell.periods_array
    if np.any(p <= 0) or np.any(p >= q):
        raise ValueError(f"center {p.tolist()} is not interior to the cell")
    ext = axis_extents(curve.shape)
    face_dist = np.minimum(p, q - p)
    return float(np.min(face_dist / ext))


@dataclass(frozen=True)
class Placement:
    """A hole p + eps * Omega inside the cell (eps = 0 collapses it to p)."""

    curve: BoundaryCurve
    p: np.ndarray
    eps: float
    eps0: float

    @property
    def nodes(self) -> np.ndarray:
        return self.p[None, :] + self.eps * self.curve.nodes

    @property
    def normals(self) -> np.ndarray:
        return self.curve.normals

    @property
    def weights(self) -> np.ndarray:
        """Arclength weights on the scaled boundary (one power of eps in 2D)."""
        return self.eps * self.curve.weights

    def scaled(self, curve_fine: BoundaryCurve) -> "Placement":
        """Same placement on a resampled copy of the reference curve."""
        return Placement(curve=curve_fine, p=self.p, eps=self.eps,
                         eps0=self.eps0)


def place(curve: BoundaryCurve, p, eps: float, cell: LatticeCell) -> Placement:
    """Validated placement of the scaled hole; eps in [0, eps0) with eps0 strict."""
    p = np.asarray(p, dtype=float)
    eps0 = compute_eps0(curve, p, cell)
    if not 0 <= eps < eps0:
        raise ValueError(
            f"eps must lie in [0, eps0) with eps0 = {eps0:.6g}, got {eps}")
    return Placement(curve=curve, p=p, eps=float(eps), eps0=eps0)
