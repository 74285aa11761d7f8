"""Forward semi-Lagrangian scheme for the viscous conservative equation.

Measures live on mesh vertices. The forward step scatters each vertex's
mass along its transition row, i.e. applies the transpose of the backward
transport step, so the two schemes are exactly adjoint.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .chain import TransitionOperators
from .fields import Coefficients, TimeGrid
from .mesh import GridFunction, Mesh, MeshError, as_points
from .transport import write_snapshots

logger = logging.getLogger(__name__)


class SupportOutsideHull(MeshError):
    def __init__(self, location):
        location = np.asarray(location, dtype=float).ravel()
        super().__init__(f"initial mass at {location.tolist()} lies outside the mesh")
        self.location = location


# -- sources ------------------------------------------------------------------


@dataclass
class PiecewiseConstantDensity:
    """Density equal to ``value`` on each listed axis-aligned box (boxes add up).

    Each box is ``(lo0, hi0[, lo1, hi1])``. Simplex masses are exact.
    """

    boxes: list
    values: list

    @classmethod
    def indicator(cls, box) -> "PiecewiseConstantDensity":
        return cls([tuple(box)], [1.0])

    @property
    def total_mass(self) -> float:
        return float(sum(v * np.prod(np.diff(np.reshape(b, (-1, 2)), axis=1)) for b, v in zip(self.boxes, self.values)))

    def __call__(self, x):
        x = np.atleast_2d(x)
        out = np.zeros(len(x))
        for b, v in zip(self.boxes, self.values):
            b = np.reshape(b, (-1, 2))
            out += v * np.all((x >= b[:, 0]) & (x < b[:, 1]), axis=1)
        return out

    def support_box(self):
        arr = np.array([np.reshape(b, (-1, 2)) for b in self.boxes])
        return np.column_stack([arr[:, :, 0].min(axis=0), arr[:, :, 1].max(axis=0)])


@dataclass
class DensitySource:
    """Density rule ``func(x)`` (vectorized over (n, d)) supported in ``box``."""

    func: object
    box: tuple

    def support_box(self):
        return np.reshape(self.box, (-1, 2))


@dataclass
class PointCloud:
    points: np.ndarray
    weights: np.ndarray


@dataclass
class SimplexMasses:
    masses: np.ndarray


def _clip_area(tri, box):
    """Area of a triangle clipped to an axis-aligned box (Sutherland-Hodgman)."""
    poly = [tuple(p) for p in tri]
    (x0, x1), (y0, y1) = box
    for axis, bound, keep_below in ((0, x0, False), (0, x1, True), (1, y0, False), (1, y1, True)):
        if not poly:
            return 0.0
        out = []
        for a, b in zip(poly, poly[1:] + poly[:1]):
            ina = a[axis] <= bound if keep_below else a[axis] >= bound
            inb = b[axis] <= bound if keep_below else b[axis] >= bound
            if ina:
                out.append(a)
            if ina != inb:
                s = (bound - a[axis]) / (b[axis] - a[axis])
                out.append((a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])))
        poly = out
    if len(poly) < 3:
        return 0.0
    xs = np.array([p[0] for p in poly])
    ys = np.array([p[1] for p in poly])
    return 0.5 * abs(np.dot(xs, np.roll(ys, -1)) - np.dot(ys, np.roll(xs, -1)))


def _box_masses(mesh: Mesh, box) -> np.ndarray:
    """Exact volume of each simplex inside ``box``."""
    box = np.reshape(np.asarray(box, dtype=float), (mesh.dim, 2))
    corners = mesh.vertices[mesh.simplices]
    lo, hi = corners.min(axis=1), corners.max(axis=1)
    inside = np.all((lo >= box[:, 0]) & (hi <= box[:, 1]), axis=1)
    disjoint = np.any((hi <= box[:, 0]) | (lo >= box[:, 1]), axis=1)
    vol = np.where(inside, mesh.volumes, 0.0)
    partial = np.flatnonzero(~inside & ~disjoint)
    if mesh.dim == 1:
        a = np.maximum(lo[partial, 0], box[0, 0])
        b = np.minimum(hi[partial, 0], box[0, 1])
        vol[partial] = np.clip(b - a, 0.0, None)
    else:
        for s in partial:
            vol[s] = _clip_area(corners[s], box)
    return vol


def _refined_rule(dim, levels=4):
    """Centroids and weights of the uniform ``levels``-fold subdivision of the reference simplex."""
    if dim == 1:
        c = (np.arange(levels) + 0.5) / levels
        return np.column_stack([1.0 - c, c]), np.full(levels, 1.0 / levels)
    pts = []
    for i in range(levels):
        for j in range(levels - i):
            pts.append(((i + 1 / 3) / levels, (j + 1 / 3) / levels))
            if i + j < levels - 1:
                pts.append(((i + 2 / 3) / levels, (j + 2 / 3) / levels))
    pts = np.array(pts)
    lam = np.column_stack([1.0 - pts.sum(axis=1), pts])
    return lam, np.full(len(pts), 1.0 / len(pts))


def simplex_masses(mesh: Mesh, f0) -> np.ndarray:
    """Mass of ``f0`` in each simplex."""
    if isinstance(f0, SimplexMasses):
        m = np.asarray(f0.masses, dtype=float)
        if m.shape != (mesh.n_simplices,):
            raise ValueError("need one mass per simplex")
        return m
    if isinstance(f0, PointCloud):
        pts = as_points(f0.points, mesh.dim)
        s, _ = mesh.locate_many(pts)
        if (s < 0).any():
            raise SupportOutsideHull(pts[np.flatnonzero(s < 0)[0]])
        return np.bincount(s, weights=np.asarray(f0.weights, dtype=float), minlength=mesh.n_simplices)
    _check_support(mesh, f0.support_box())
    if isinstance(f0, PiecewiseConstantDensity):
        out = np.zeros(mesh.n_simplices)
        for b, v in zip(f0.boxes, f0.values):
            out += v * _box_masses(mesh, b)
        return out
    if isinstance(f0, DensitySource):
        lam, w = _refined_rule(mesh.dim)
        corners = mesh.vertices[mesh.simplices]
        pts = np.einsum("qk,skd->sqd", lam, corners)
        vals = np.asarray(f0.func(pts.reshape(-1, mesh.dim)), dtype=float).reshape(mesh.n_simplices, len(w))
        return mesh.volumes * (vals @ w)
    raise TypeError(f"unsupported source {type(f0).__name__}")


def _check_support(mesh, box):
    box = np.asarray(box, dtype=float).reshape(mesh.dim, 2)
    grids = np.meshgrid(*[np.linspace(lo, hi, 5) for lo, hi in box], indexing="ij")
    probe = np.column_stack([g.ravel() for g in grids])
    s, _ = mesh.locate_many(probe)
    if (s < 0).any():
        raise SupportOutsideHull(probe[np.flatnonzero(s < 0)[0]])


# -- measures -------------------------------------------------------------------


@dataclass
class DiscreteMeasure:
    """Nonnegative weights on mesh vertices."""

    mesh: Mesh
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.mesh.n_vertices,):
            raise ValueError("need one weight per vertex")
        if (self.weights < 0).any():
            raise ValueError("measure weights must be nonnegative")

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    def pair(self, g) -> float:
        """``int g df`` for vertex values ``g``."""
        g = g.values if isinstance(g, GridFunction) else np.asarray(g, dtype=float)
        return float(self.weights @ g)

    def density(self) -> np.ndarray:
        """Weight divided by lumped vertex area (display only)."""
        return self.weights / self.mesh.lumped_areas()


def project_initial(mesh: Mesh, f0) -> DiscreteMeasure:
    """Vertex weights from per-simplex masses split at each simplex barycenter.

    The barycenter has equal barycentric coordinates, so every vertex of
    a simplex receives ``1/(d+1)`` of its mass.
    """
    masses = simplex_masses(mesh, f0)
    share = np.repeat(masses / (mesh.dim + 1), mesh.dim + 1)
    w = np.bincount(mesh.simplices.ravel(), weights=share, minlength=mesh.n_vertices)
    return DiscreteMeasure(mesh, w)


@dataclass
class ForwardLedger:
    """Diagnostics accumulated by forward steps."""

    clamped_negative_mass: float = 0.0
    clamped_rows: list = field(default_factory=list)
    escaped_mass: float = 0.0


def step_forward(
    mesh: Mesh,
    coeffs: Coefficients,
    k: int,
    f: DiscreteMeasure,
    *,
    escape: str = "raise",
    operators: TransitionOperators | None = None,
    ledger: ForwardLedger | None = None,
) -> DiscreteMeasure:
    """``f_{k+1}(i) = sum_j p^k_ji f_k(j)`` over the support of ``f_k``.

    Only vertices carrying positive weight need rows, so escaping
    endpoints of empty vertices are never an error.
    """
    ops = operators or TransitionOperators(mesh, coeffs, escape=escape)
    rows = f.support
    op = ops.get(k, rows)
    new = op.push(f.weights, mesh.n_vertices)
    if ledger is not None:
        if op.clamped.any():
            ledger.clamped_rows.extend((k, int(j)) for j in rows[op.clamped])
            ledger.escaped_mass += float(f.weights[rows[op.clamped]].sum())
        neg = new < 0
        if neg.any():
            ledger.clamped_negative_mass += float(-new[neg].sum())
    new[new < 0] = 0.0
    return DiscreteMeasure(mesh, new)


class MeasurePath:
    """Vertex weights for ``k = 0..N`` with linear interpolation in time."""

    def __init__(self, mesh: Mesh, grid: TimeGrid, weights, ledger: ForwardLedger | None = None):
        self.mesh = mesh
        self.grid = grid
        self.weights = np.asarray(weights, dtype=float)
        self.ledger = ledger or ForwardLedger()

    def step(self, k: int) -> DiscreteMeasure:
        return DiscreteMeasure(self.mesh, self.weights[k])

    def at_time(self, t) -> DiscreteMeasure:
        if not -1e-12 <= t <= self.grid.T + 1e-12:
            raise ValueError(f"time {t} outside [0, {self.grid.T}]")
        if self.grid.N == 0:
            return self.step(0)
        s = min(max(t / self.grid.h, 0.0), float(self.grid.N))
        if abs(s - round(s)) <= 1e-9:
            s = float(round(s))  # grid times hit their step exactly
        k = min(int(np.floor(s)), self.grid.N - 1)
        theta = s - k
        return DiscreteMeasure(self.mesh, (1.0 - theta) * self.weights[k] + theta * self.weights[k + 1])

    @property
    def masses(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    def to_csv(self, path, stride: int = 1, vertices=None) -> None:
        areas = self.mesh.lumped_areas()
        cols = {"weight": self.weights, "density": self.weights / areas}
        write_snapshots(path, self.mesh, self.grid, cols, stride, vertices=vertices)


def solve_forward(
    mesh: Mesh,
    coeffs: Coefficients,
    f0,
    *,
    escape: str = "raise",
    operators: TransitionOperators | None = None,
    steps: int | None = None,
) -> MeasurePath:
    """Project ``f0`` and apply ``steps`` (default N) forward steps."""
    grid = coeffs.grid
    n_steps = grid.N if steps is None else steps
    ops = operators or TransitionOperators(mesh, coeffs, escape=escape)
    f = f0 if isinstance(f0, DiscreteMeasure) else project_initial(mesh, f0)
    weights = np.zeros((grid.N + 1, mesh.n_vertices))
    weights[0] = f.weights
    ledger = ForwardLedger()
    for k in range(n_steps):
        f = step_forward(mesh, coeffs, k, f, operators=ops, ledger=ledger)
        weights[k + 1] = f.weights
    if n_steps < grid.N:
        weights[n_steps + 1 :] = np.nan
    return MeasurePath(mesh, grid, weights, ledger)


def duality_gap(mesh: Mesh, coeffs: Coefficients, f0, g, k: int, *, escape: str = "raise", operators=None):
    """``|<g, f_k> - <u_0, f_0>|`` where ``u`` solves the backward scheme from ``u_k = g``.

    Both sweeps use the same retained rows. The backward sweep only needs
    ``u_m`` on the support of ``f_m``, which is exactly where the forward
    rows exist, so the full-mesh backward solve is never required.

    ``g`` may be a GridFunction, a (V,) array, or a (V, m) array of m data;
    the result is a float or an (m,) array accordingly.
    """
    if isinstance(g, GridFunction):
        if g.mesh is not mesh:
            raise ValueError("g lives on a different mesh")
        g = g.values
    if isinstance(f0, DiscreteMeasure) and f0.mesh is not mesh:
        raise ValueError("f0 lives on a different mesh")
    g = np.asarray(g, dtype=float)
    if g.shape[0] != mesh.n_vertices:
        raise ValueError("g must have one value per vertex")
    if not 0 <= k <= coeffs.grid.N:
        raise ValueError(f"step {k} outside 0..{coeffs.grid.N}")
    ops = operators or TransitionOperators(mesh, coeffs, escape=escape)
    f = f0 if isinstance(f0, DiscreteMeasure) else project_initial(mesh, f0)
    f_init = f.weights.copy()
    retained = []
    for m in range(k):
        op = ops.get(m, f.support)
        retained.append(op)
        f = DiscreteMeasure(mesh, op.push(f.weights, mesh.n_vertices))
    lhs = f.weights @ g
    u = g
    for op in reversed(retained):
        prev = np.zeros_like(g)
        prev[op.rows] = op.apply(u)
        u = prev
    rhs = f_init @ u
    gap = np.abs(lhs - rhs)
    return float(gap) if np.ndim(gap) == 0 else gap
