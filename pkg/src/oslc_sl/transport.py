"""Backward semi-Lagrangian scheme for the viscous transport equation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .chain import TransitionOperators, make_rng, walk
from .fields import Coefficients, TimeGrid
from .mesh import GridFunction, Mesh, as_points

logger = logging.getLogger(__name__)


class TimeInterpolant:
    """Linear-in-time, piecewise-affine-in-space extension of per-step vertex data.

    ``values`` has shape (N+1, V).
    """

    def __init__(self, mesh: Mesh, grid: TimeGrid, values):
        self.mesh = mesh
        self.grid = grid
        self.values = values

    def _weights(self, t):
        if not -1e-12 <= t <= self.grid.T + 1e-12:
            raise ValueError(f"time {t} outside [0, {self.grid.T}]")
        s = min(max(t / self.grid.h, 0.0), float(self.grid.N))
        if abs(s - round(s)) <= 1e-9:
            s = float(round(s))  # grid times hit their step exactly
        k = min(int(np.floor(s)), self.grid.N - 1)
        theta = s - k
        return k, theta

    def at_time(self, t) -> np.ndarray:
        """Vertex values at time ``t``."""
        k, theta = self._weights(t)
        if theta == 0.0:
            return self.values[k].copy()
        if theta == 1.0:
            return self.values[k + 1].copy()
        return (1.0 - theta) * self.values[k] + theta * self.values[k + 1]

    def __call__(self, t, x):
        return self.mesh.interpolate(self.at_time(t), x)


@dataclass
class TransportSolution:
    """Vertex values ``u[k, i]`` for ``k = 0..N``."""

    mesh: Mesh
    grid: TimeGrid
    values: np.ndarray
    clamped_rows: int = 0

    def step(self, k: int) -> GridFunction:
        return GridFunction(self.mesh, self.values[k])

    @property
    def interpolant(self) -> TimeInterpolant:
        return TimeInterpolant(self.mesh, self.grid, self.values)

    def evaluate(self, t, x):
        return self.interpolant(t, x)

    def to_csv(self, path, stride: int = 1, vertices=None) -> None:
        write_snapshots(path, self.mesh, self.grid, {"u": self.values}, stride, vertices=vertices)


def evaluate(sol: TransportSolution, t, x):
    """``u(t, x)`` from the time interpolant; raises ``OutsideHullError`` off-mesh."""
    out = sol.evaluate(t, x)
    if np.ndim(x) == 0 or (sol.mesh.dim == 2 and np.ndim(x) == 1):
        return float(out[0])
    return out


def _terminal_values(mesh, u_T):
    if isinstance(u_T, GridFunction):
        return u_T.values.copy()
    if callable(u_T):
        return np.asarray(u_T(mesh.vertices), dtype=float).reshape(mesh.n_vertices)
    vals = np.asarray(u_T, dtype=float)
    if vals.shape[0] != mesh.n_vertices:
        raise ValueError("terminal data must have one value per vertex")
    return vals.copy()


def solve_backward(
    mesh: Mesh,
    coeffs: Coefficients,
    u_T,
    *,
    escape: str = "raise",
    operators: TransitionOperators | None = None,
    from_step: int | None = None,
) -> TransportSolution:
    """Run ``u_k(i) = sum_j p^k_ij u_{k+1}(j)`` from ``u_N(i) = u_T(x_i)``.

    Parameters
    ----------
    u_T : callable, GridFunction or array
        Terminal datum, sampled pointwise at the vertices. An array may
        have trailing columns to solve several data at once.
    escape : {"raise", "clamp"}
        Policy for endpoints that leave the mesh.
    operators : TransitionOperators, optional
        Shared operator provider (e.g. with retention for duality tests).
    from_step : int, optional
        Place the terminal datum at this step instead of ``N``; earlier
        steps only are computed and later ones repeat the datum.
    """
    grid = coeffs.grid
    K = grid.N if from_step is None else from_step
    ops = operators or TransitionOperators(mesh, coeffs, escape=escape)
    u = _terminal_values(mesh, u_T)
    values = np.empty((grid.N + 1,) + u.shape)
    values[K:] = u
    for k in range(K - 1, -1, -1):
        op = ops.get(k)
        u = op.apply(u)
        values[k] = u
    n_clamped = len(ops.clamped)
    if n_clamped:
        logger.info("backward solve: %d rows clamped to the hull", n_clamped)
    return TransportSolution(mesh, grid, values, n_clamped)


def monte_carlo_value(coeffs: Coefficients, u_T, x, k: int, samples: int, seed: int):
    """Sample mean and standard error of ``u_T(Phi^h_{N,k}(x))``.

    ``u_T`` is applied to exact walker positions (no interpolation).
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    x0 = as_points(x, coeffs.dim)[:1]
    starts = np.repeat(x0, samples, axis=0)
    ends = walk(coeffs, starts, k, coeffs.grid.N, make_rng(seed))
    vals = np.asarray(u_T(ends), dtype=float).reshape(samples)
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / np.sqrt(samples))
    return mean, stderr


def write_snapshots(path, mesh: Mesh, grid: TimeGrid, columns: dict, stride: int = 1, extra_steps=(), vertices=None) -> None:
    """CSV of ``k,t_k,vertex,x[,y],<columns...>`` every ``stride`` steps (plus the last).

    ``vertices`` restricts the rows to a subset of vertex ids.
    """
    steps = sorted(set(range(0, grid.N + 1, max(1, stride))) | {grid.N} | set(extra_steps))
    axes = ["x", "y"][: mesh.dim]
    ids = np.arange(mesh.n_vertices) if vertices is None else np.asarray(vertices, dtype=np.int64)
    fmt = ["%d", "%.17g", "%d"] + ["%.17g"] * (mesh.dim + len(columns))
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["k", "t_k", "vertex", *axes, *columns]) + "\n")
        for k in steps:
            block = np.column_stack(
                [
                    np.full(ids.size, k),
                    np.full(ids.size, grid.t(k)),
                    ids,
                    mesh.vertices[ids],
                    *(np.asarray(c[k], dtype=float)[ids] for c in columns.values()),
                ]
            )
            np.savetxt(fh, block, fmt=fmt, delimiter=",")
