"""Error norms, 1-D Wasserstein distance, moments and convergence orders."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .conservative import DiscreteMeasure
from .mesh import GridFunction

UNDEFINED = "undefined"


def linf_gap(f: GridFunction, exact, roi=None) -> float:
    """``max_i |f(i) - exact(x_i)|``, optionally over vertices inside the box ``roi``."""
    mesh = f.mesh
    err = np.abs(f.values - np.asarray(exact(mesh.vertices), dtype=float).reshape(mesh.n_vertices))
    if roi is not None:
        err = err[mesh.vertices_in_box(roi)]
    return float(err.max()) if err.size else 0.0


# -- 1-D distributions ----------------------------------------------------------


class AtomicCDF:
    """Right-continuous step CDF of a finite sum of point masses on the line."""

    def __init__(self, points, weights):
        points = np.asarray(points, dtype=float).ravel()
        weights = np.asarray(weights, dtype=float).ravel()
        order = np.argsort(points, kind="stable")
        self.points = points[order]
        self._cum = np.concatenate([[0.0], np.cumsum(weights[order])])
        self.mass = float(self._cum[-1])

    @property
    def knots(self):
        return self.points

    def right(self, x):
        return self._cum[np.searchsorted(self.points, x, side="right")]

    def left(self, x):
        return self._cum[np.searchsorted(self.points, x, side="left")]


class PiecewiseLinearCDF:
    """Continuous CDF, linear between ``knots`` with values ``cdf``.

    Zero left of the first knot (``cdf[0]`` is an atom there if nonzero)
    and constant right of the last.
    """

    def __init__(self, knots, cdf):
        self.knots = np.asarray(knots, dtype=float)
        self.cdf = np.asarray(cdf, dtype=float)
        if np.any(np.diff(self.knots) < 0) or np.any(np.diff(self.cdf) < -1e-15):
            raise ValueError("knots and CDF values must be nondecreasing")
        self.mass = float(self.cdf[-1])

    def right(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x < self.knots[0], 0.0, np.interp(x, self.knots, self.cdf))

    def left(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= self.knots[0], 0.0, np.interp(x, self.knots, self.cdf))


def as_cdf(mu):
    if isinstance(mu, (AtomicCDF, PiecewiseLinearCDF)):
        return mu
    if isinstance(mu, DiscreteMeasure):
        if mu.mesh.dim != 1:
            raise ValueError("Wasserstein distance is only implemented in 1-D")
        return AtomicCDF(mu.mesh.vertices[:, 0], mu.weights)
    if isinstance(mu, tuple) and len(mu) == 2:
        return AtomicCDF(*mu)
    raise TypeError(f"cannot build a CDF from {type(mu).__name__}")


class MassMismatch(ValueError):
    def __init__(self, m1, m2):
        super().__init__(f"measures have different masses: {m1!r} vs {m2!r}")
        self.masses = (m1, m2)


def _abs_affine_integral(d0, d1, length):
    """Exact integral of |affine| over an interval with end values d0, d1."""
    same = d0 * d1 >= 0
    tot = np.abs(d0) + np.abs(d1)
    with np.errstate(invalid="ignore", divide="ignore"):
        crossing = np.where(tot > 0, (d0 * d0 + d1 * d1) / tot, 0.0)
    return length * np.where(same, 0.5 * tot, 0.5 * crossing)


def wasserstein1_1d(mu, nu, mass_tol: float = 1e-9) -> float:
    """``W1 = int |F_mu - F_nu| dx`` by an exact sweep over merged breakpoints.

    ``mu`` and ``nu`` may be 1-D DiscreteMeasures, ``(points, weights)``
    tuples, AtomicCDF or PiecewiseLinearCDF objects.
    """
    a, b = as_cdf(mu), as_cdf(nu)
    if abs(a.mass - b.mass) > mass_tol:
        raise MassMismatch(a.mass, b.mass)
    knots = np.unique(np.concatenate([a.knots, b.knots]))
    if knots.size < 2:
        return 0.0
    lo, hi = knots[:-1], knots[1:]
    d0 = a.right(lo) - b.right(lo)
    d1 = a.left(hi) - b.left(hi)
    return float(_abs_affine_integral(d0, d1, hi - lo).sum())


# -- moments ------------------------------------------------------------------


def second_moment(f: DiscreteMeasure) -> float:
    x = f.mesh.vertices
    return float(f.weights @ np.einsum("id,id->i", x, x))


def center_of_mass(f: DiscreteMeasure) -> np.ndarray:
    mass = f.weights.sum()
    if mass == 0:
        raise ValueError("center of mass of a zero measure")
    return (f.weights @ f.mesh.vertices) / mass


# -- convergence tables -----------------------------------------------------------


def observed_orders(dxs, errors) -> list:
    """``ln(e_m/e_{m+1}) / ln(dx_m/dx_{m+1})`` for consecutive rows; ``None`` when undefined."""
    out = []
    for (d0, e0), (d1, e1) in zip(zip(dxs, errors), zip(dxs[1:], errors[1:])):
        if not (e0 > 0 and e1 > 0 and d0 > 0 and d1 > 0 and d0 != d1):
            out.append(None)
        else:
            out.append(math.log(e0 / e1) / math.log(d0 / d1))
    return out


@dataclass
class ConvergenceRow:
    dx: float
    h: float
    error_linf: float | None = None
    error_w1: float | None = None
    h_w1: float | None = None


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)

    def add(self, row: ConvergenceRow) -> None:
        self.rows.append(row)
        self.rows.sort(key=lambda r: -r.dx)

    def errors(self, column: str) -> list:
        return [getattr(r, column) for r in self.rows]

    def orders(self, column: str) -> list:
        errs = self.errors(column)
        if any(e is None for e in errs):
            return [None] * max(len(errs) - 1, 0)
        return observed_orders([r.dx for r in self.rows], errs)

    def _records(self):
        cols = ["dx", "h", "error_linf", "order_linf", "h_w1", "error_w1", "order_w1"]
        ol = [None] + self.orders("error_linf")
        ow = [None] + self.orders("error_w1")
        recs = []
        for r, a, b in zip(self.rows, ol, ow):
            recs.append([r.dx, r.h, r.error_linf, a, r.h_w1, r.error_w1, b])
        return cols, recs

    def to_csv(self, path) -> None:
        cols, recs = self._records()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for rec in recs:
                w.writerow(["" if v is None else repr(float(v)) for v in rec])

    def to_text(self) -> str:
        cols, recs = self._records()
        cells = [cols] + [[("-" if v is None else f"{v:.6g}") for v in rec] for rec in recs]
        widths = [max(len(row[c]) for row in cells) for c in range(len(cols))]
        lines = ["  ".join(s.rjust(w) for s, w in zip(row, widths)) for row in cells]
        return "\n".join(lines) + "\n"
