"""Flat ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored; every key may appear once.
The resolved configuration (defaults filled in from the chosen test) is
echoed into the output directory so a run can be repeated from it.

Schema
------
test              test1 | test2 | test3 | custom
dx                mesh resolution: simplex diameter for built-in meshes;
                  for imported Triangle meshes it is the max triangle area
                  used when the mesh was generated (informational only)
h                 time step; when given, ``coupling`` defaults to ``fixed``
coupling          fixed | dx_over_h_to_zero (h = c dx^(2/3))
                  | dx2_over_h_bounded (h = c dx)
coupling_constant c above; default reproduces the test's default (dx, h)
T                 final time
mollifier         gaussian | bump
mollifier_radius  truncation radius in units of h (gaussian only)
mollifier_nodes   quadrature points per half-axis
time_nodes        midpoint nodes per step for time-dependent coefficients
sigma_scale       factor applied to the diffusion matrix
roi               error / snapshot window ``lo0, hi0[, lo1, hi1]``
margin            width added around the physical box, or ``auto``
seed              integer seed of every random draw
out               output directory
mesh_node         Triangle .node file (with mesh_ele) instead of a built-in mesh;
                  relative paths are taken from the config file's directory
mesh_ele          Triangle .ele file
ladder            comma-separated dx values for the ``ladder`` subcommand
snapshot_stride   write snapshots every this many steps (plus the last)
snapshot_region   roi | all
escape            clamp | raise, policy for endpoints leaving the mesh
parallel          true | false, run ladder rungs in separate processes
duality_samples   number of random bounded g for the duality report
oslc_pairs        sample pairs for the one-sided Lipschitz check

Custom problems (``test = custom``) also need ``drift``, ``diffusion``,
``box``, ``initial_box`` and ``terminal_point``; ``drift`` is a built-in
name, ``constant v0[, v1]`` or ``csv <path>``; ``diffusion`` is a built-in
name or ``constant s`` (meaning ``s * Id``).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..conservative import PiecewiseConstantDensity
from ..fields import (
    ConfigError,
    ConstantField,
    MollifierSpec,
    TabulatedField,
    constant_diffusion,
    named_diffusion,
    named_drift,
)
from .problems import Problem, _distance_to, builtin_problem

COUPLINGS = ("fixed", "dx_over_h_to_zero", "dx2_over_h_bounded")


def _floats(text):
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"expected numbers, got {text!r}") from None


def _float(text):
    vals = _floats(text)
    if len(vals) != 1:
        raise ConfigError(f"expected one number, got {text!r}")
    return vals[0]


def _int(text):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}") from None


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected true or false, got {text!r}")


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ConfigError(f"expected one of {', '.join(options)}, got {text!r}")
        return text

    return parse


def _margin(text):
    return None if text == "auto" else _float(text)


_PARSERS = {
    "test": _choice("test1", "test2", "test3", "custom"),
    "dx": _float,
    "h": _float,
    "coupling": _choice(*COUPLINGS),
    "coupling_constant": _float,
    "T": _float,
    "mollifier": _choice("gaussian", "bump"),
    "mollifier_radius": _float,
    "mollifier_nodes": _int,
    "time_nodes": _int,
    "sigma_scale": _float,
    "roi": _floats,
    "margin": _margin,
    "seed": _int,
    "out": str,
    "mesh_node": str,
    "mesh_ele": str,
    "ladder": _floats,
    "snapshot_stride": _int,
    "snapshot_region": _choice("roi", "all"),
    "escape": _choice("clamp", "raise"),
    "parallel": _bool,
    "duality_samples": _int,
    "oslc_pairs": _int,
    "drift": str,
    "diffusion": str,
    "box": _floats,
    "initial_box": _floats,
    "terminal_point": _floats,
}


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines into typed values."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"line {n}: empty value for {key!r}")
        try:
            out[key] = _PARSERS[key](value)
        except ConfigError as exc:
            raise ConfigError(f"line {n}: {key}: {exc}") from None
    return out


@dataclass
class ExperimentConfig:
    """Resolved experiment settings; see the module docstring for the schema."""

    test: str = "test1"
    dx: float | None = None
    h: float | None = None
    coupling: str | None = None
    coupling_constant: float | None = None
    T: float | None = None
    mollifier: str = "gaussian"
    mollifier_radius: float = 6.0
    mollifier_nodes: int | None = None
    time_nodes: int | None = None
    sigma_scale: float = 1.0
    roi: tuple | None = None
    margin: float | None = None
    seed: int = 0
    out: str = "oslc-out"
    mesh_node: str | None = None
    mesh_ele: str | None = None
    ladder: tuple | None = None
    snapshot_stride: int | None = None
    snapshot_region: str = "roi"
    escape: str = "clamp"
    parallel: bool = False
    duality_samples: int = 20
    oslc_pairs: int = 10000
    drift: str | None = None
    diffusion: str | None = None
    box: tuple | None = None
    initial_box: tuple | None = None
    terminal_point: tuple | None = None
    extra: dict = field(default_factory=dict, repr=False)

    # -- construction ------------------------------------------------------

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        return cls(**parse_config_text(text))

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        cfg = cls.from_text(text)
        # mesh files are relative to the config file
        base = Path(path).parent
        for key in ("mesh_node", "mesh_ele"):
            value = getattr(cfg, key)
            if value is not None and not Path(value).is_absolute():
                setattr(cfg, key, str(base / value))
        return cfg

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # -- resolution -------------------------------------------------------

    def problem(self) -> Problem:
        """The benchmark problem with config overrides applied."""
        if self.test == "custom":
            prob = self._custom_problem()
        else:
            prob = builtin_problem(self.test)
            if self.drift is not None:
                prob.drift = _drift_from_text(self.drift, prob.dim)
            if self.diffusion is not None:
                prob.diffusion = _diffusion_from_text(self.diffusion, prob.dim)
        if self.T is not None:
            prob.T = self.T
        if self.sigma_scale != 1.0:
            prob.diffusion = prob.diffusion.scaled(self.sigma_scale)
        if self.time_nodes is not None:
            prob.time_nodes = self.time_nodes
        prob.mollifier = MollifierSpec(self.mollifier, self.mollifier_radius, self.mollifier_nodes)
        if self.roi is not None:
            prob.roi = self.roi
        return prob

    def _custom_problem(self) -> Problem:
        missing = [k for k in ("drift", "diffusion", "box", "initial_box", "terminal_point", "T", "dx") if getattr(self, k) is None]
        if missing:
            raise ConfigError(f"custom problem needs {', '.join(missing)}")
        dim = len(self.box) // 2
        if dim not in (1, 2) or len(self.box) != 2 * dim:
            raise ConfigError("box must have 2 or 4 numbers")
        if len(self.initial_box) != 2 * dim or len(self.terminal_point) != dim:
            raise ConfigError("initial_box and terminal_point must match the box dimension")
        if dim == 1:
            x0 = self.terminal_point[0]

            def terminal(x):
                return np.abs(np.asarray(x, dtype=float).reshape(-1) - x0)

        else:
            terminal = _distance_to(*self.terminal_point)
        return Problem(
            name="custom",
            drift=_drift_from_text(self.drift, dim),
            diffusion=_diffusion_from_text(self.diffusion, dim),
            T=self.T,
            dx=self.dx,
            h=self.h if self.h is not None else self.dx,
            physical_box=tuple(self.box),
            terminal=terminal,
            initial=PiecewiseConstantDensity.indicator(tuple(self.initial_box)),
            roi=tuple(self.box),
        )

    def resolved(self, prob: Problem | None = None) -> "ExperimentConfig":
        """Copy with every default filled in from the problem."""
        prob = prob or self.problem()
        cfg = self.replace(
            dx=self.dx if self.dx is not None else prob.dx,
            T=prob.T,
            time_nodes=prob.time_nodes,
            roi=tuple(prob.roi) if prob.roi is not None else tuple(prob.physical_box),
            mollifier_nodes=prob.mollifier.nodes_for(prob.dim),
        )
        if cfg.coupling is None:
            cfg.coupling = "fixed" if cfg.h is not None else None
        return cfg

    def time_step(self, prob: Problem, dx: float, equation: str) -> tuple[float, str, float | None]:
        """``(h, coupling, c)`` for a run at resolution ``dx``.

        ``equation`` is ``transport`` or ``conservative``; it picks the
        default coupling when none is configured.
        """
        coupling = self.coupling
        if coupling is None and self.h is not None:
            coupling = "fixed"
        elif coupling is None:
            coupling = "dx_over_h_to_zero" if equation == "transport" else "dx2_over_h_bounded"
        if coupling == "fixed":
            if self.h is None:
                raise ConfigError("coupling 'fixed' needs h")
            return self.h, coupling, None
        if self.h is not None and self.coupling is not None:
            raise ConfigError("give either h or a coupling rule, not both")
        power = 2.0 / 3.0 if coupling == "dx_over_h_to_zero" else 1.0
        c = self.coupling_constant if self.coupling_constant is not None else prob.h / prob.dx**power
        if c <= 0:
            raise ConfigError("coupling_constant must be positive")
        return c * dx**power, coupling, c

    def margin_for(self, prob: Problem, h: float) -> float:
        """Configured margin, checked against the no-escape floor."""
        floor = prob.required_margin(h)
        margin = self.margin if self.margin is not None else prob.margin
        if margin is None:
            return floor
        if margin < floor:
            raise ConfigError(
                f"margin {margin:g} is below the floor T*C0 + 5 sqrt(T) C2 + radius*h = {floor:.6g}"
            )
        return margin

    def validate(self) -> None:
        if self.dx is not None and self.dx <= 0:
            raise ConfigError("dx must be positive")
        if self.h is not None and self.h <= 0:
            raise ConfigError("h must be positive")
        if self.T is not None and self.T <= 0:
            raise ConfigError("T must be positive")
        if (self.mesh_node is None) != (self.mesh_ele is None):
            raise ConfigError("mesh_node and mesh_ele must be given together")
        if self.ladder is not None and (len(self.ladder) < 2 or min(self.ladder) <= 0):
            raise ConfigError("ladder needs at least two positive dx values")
        if self.snapshot_stride is not None and self.snapshot_stride < 1:
            raise ConfigError("snapshot_stride must be >= 1")
        if self.duality_samples < 0 or self.oslc_pairs < 1:
            raise ConfigError("duality_samples must be >= 0 and oslc_pairs >= 1")
        if self.mollifier_radius <= 0:
            raise ConfigError("mollifier_radius must be positive")

    def to_text(self) -> str:
        """Echo in the input format; ``None`` entries are omitted."""
        lines = []
        for f in dataclasses.fields(self):
            if f.name == "extra":
                continue
            v = getattr(self, f.name)
            if v is None:
                if f.name == "margin":
                    lines.append("margin = auto")
                continue
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, tuple):
                v = ", ".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _drift_from_text(text: str, dim: int):
    parts = text.split(None, 1)
    kind = parts[0]
    if kind == "constant":
        vals = _floats(parts[1] if len(parts) > 1 else "")
        if len(vals) != dim:
            raise ConfigError(f"constant drift needs {dim} components")
        return ConstantField(vals)
    if kind == "csv":
        if len(parts) < 2:
            raise ConfigError("csv drift needs a path")
        field_ = TabulatedField.from_csv(parts[1])
        if field_.dim != dim:
            raise ConfigError(f"tabulated drift has dimension {field_.dim}, expected {dim}")
        return field_
    field_ = named_drift(kind)
    if field_.dim != dim:
        raise ConfigError(f"drift {kind!r} has dimension {field_.dim}, expected {dim}")
    return field_


def _diffusion_from_text(text: str, dim: int):
    parts = text.split(None, 1)
    if parts[0] == "constant":
        s = _float(parts[1] if len(parts) > 1 else "")
        return constant_diffusion(s * np.eye(dim))
    field_ = named_diffusion(parts[0])
    if field_.dim != dim:
        raise ConfigError(f"diffusion {parts[0]!r} has dimension {field_.dim}, expected {dim}")
    return field_


def physical_plus_margin(box, margin: float) -> tuple:
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    return tuple(np.column_stack([box[:, 0] - margin, box[:, 1] + margin]).ravel().tolist())


def steps_for(T: float, h: float) -> int:
    return max(1, math.ceil(T / h - 1e-9))
