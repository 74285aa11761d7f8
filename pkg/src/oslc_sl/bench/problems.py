"""Built-in benchmark problems and the closed-form one-dimensional solutions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..conservative import PiecewiseConstantDensity
from ..fields import ConfigError, DiffusionField, MollifierSpec, VelocityField, named_diffusion, named_drift
from ..metrics import PiecewiseLinearCDF


def _ind(x, a, b):
    return ((x >= a) & (x < b)).astype(float)


def test1_exact_f(t, x):
    """Density of the compression wave at time ``t`` in ``[0, 2]``."""
    x = np.asarray(x, dtype=float)
    if t <= 1:
        out = _ind(x, -1 + t, 0.0) + 2.0 * _ind(x, 0.0, t / 2) + _ind(x, t / 2, 1 + t / 2)
    else:
        out = 2.0 * _ind(x, (t - 1) / 2, t / 2) + ((x >= t / 2) & (x <= 1 + t / 2)).astype(float)
    return out if out.ndim else float(out)


def test1_exact_u(t, x):
    """Transport solution whose terminal value at ``t = 2`` is the CDF of ``f(2, .)``."""
    x = np.asarray(x, dtype=float)
    tail = 2.0 * (x >= 1 + t / 2)
    if t <= 1:
        out = (
            (x + 1 - t) * _ind(x, -1 + t, 0.0)
            + (2 * x + 1 - t) * _ind(x, 0.0, t / 2)
            + (x - t / 2 + 1) * _ind(x, t / 2, 1 + t / 2)
            + tail
        )
    else:
        out = (2 * x + 1 - t) * _ind(x, (t - 1) / 2, t / 2) + (x - t / 2 + 1) * _ind(x, t / 2, 1 + t / 2) + tail
    return out if out.ndim else float(out)


def test1_terminal(x):
    """``u_T = u(2, .)``: 0, then ``2x - 1`` on [1/2, 1), ``x`` on [1, 2), then 2."""
    return test1_exact_u(2.0, np.asarray(x, dtype=float).reshape(-1))


def test1_exact_cdf(t) -> PiecewiseLinearCDF:
    """CDF of ``f(t, .)`` as an exact piecewise-linear object."""
    if t <= 1:
        return PiecewiseLinearCDF([-1 + t, 0.0, t / 2, 1 + t / 2], [0.0, 1 - t, 1.0, 2.0])
    return PiecewiseLinearCDF([(t - 1) / 2, t / 2, 1 + t / 2], [0.0, 1.0, 2.0])


def _distance_to(cx, cy):
    def u_T(x):
        x = np.atleast_2d(x)
        return np.hypot(x[:, 0] - cx, x[:, 1] - cy)

    return u_T


@dataclass
class Problem:
    """Coefficients, data and default discretization of a benchmark."""

    name: str
    drift: VelocityField
    diffusion: DiffusionField
    T: float
    dx: float
    h: float
    physical_box: tuple
    terminal: object
    initial: object
    margin: float | None = None
    time_nodes: int = 1
    mollifier: MollifierSpec = field(default_factory=MollifierSpec)
    roi: tuple | None = None
    terminal_lipschitz: float = 1.0
    exact_u: object = None
    exact_cdf: object = None

    @property
    def dim(self) -> int:
        return self.drift.dim

    def required_margin(self, h: float) -> float:
        """Distance the data may travel in ``[0, T]`` plus the mollifier reach."""
        return (
            self.T * self.drift.C0
            + 5.0 * math.sqrt(self.T) * self.diffusion.C2
            + self.mollifier.support_radius * h
        )


def builtin_problem(name: str) -> Problem:
    """One of ``test1``, ``test2``, ``test3``.

    The stored drift is ``b``; particles move with ``-b``.
    """
    if name == "test1":
        return Problem(
            name="test1",
            drift=named_drift("test1"),
            diffusion=named_diffusion("test1"),
            T=2.0,
            dx=0.02,
            h=0.06,
            physical_box=(-2.0, 2.0),
            margin=3.0,
            terminal=test1_terminal,
            initial=PiecewiseConstantDensity.indicator((-1.0, 1.0)),
            roi=(-2.0, 2.0),
            terminal_lipschitz=2.0,
            exact_u=test1_exact_u,
            exact_cdf=test1_exact_cdf,
        )
    if name == "test2":
        return Problem(
            name="test2",
            drift=named_drift("test2"),
            diffusion=named_diffusion("test2"),
            T=1.5,
            dx=0.08,
            h=0.16,
            physical_box=(-2.0, 2.0, -2.0, 2.0),
            margin=None,
            terminal=_distance_to(1.0, 0.0),
            initial=PiecewiseConstantDensity.indicator((-1.5, -0.1, -0.25, 0.25)),
            roi=(-2.0, 2.0, -2.0, 2.0),
        )
    if name == "test3":
        return Problem(
            name="test3",
            drift=named_drift("test3"),
            diffusion=named_diffusion("test3"),
            T=0.8,
            dx=0.01,
            h=0.02,
            physical_box=(-2.0, 2.0, -2.0, 2.0),
            margin=2.0,
            time_nodes=8,
            terminal=_distance_to(0.8, 0.0),
            initial=PiecewiseConstantDensity.indicator((-1.0, 1.0, -0.5, 0.5)),
            roi=(-2.0, 2.0, -2.0, 2.0),
        )
    raise ConfigError(f"unknown problem {name!r}; expected test1, test2 or test3")
