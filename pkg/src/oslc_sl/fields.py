"""Drift and diffusion coefficients, mollification and time averaging.

The schemes never see the raw drift ``b``; they use its time average over
each step of the spatial convolution with a mollifier scaled by the step
size ``h``. Diffusion columns are time-averaged but not mollified.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate, special
from scipy.spatial import cKDTree

from .mesh import as_points

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid solver or experiment configuration."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k*h`` on ``[0, T]`` with ``h = T/N``."""

    T: float
    N: int

    def __post_init__(self):
        if not (isinstance(self.N, (int, np.integer)) and self.N >= 1):
            raise ConfigError(f"need at least one time step, got N={self.N}")
        if not self.T > 0:
            raise ConfigError(f"final time must be positive, got T={self.T}")

    @classmethod
    def from_step(cls, T: float, h: float) -> "TimeGrid":
        """Smallest N with T/N <= h."""
        if not h > 0:
            raise ConfigError(f"time step must be positive, got h={h}")
        return cls(float(T), max(1, int(math.ceil(T / h - 1e-9))))

    @property
    def h(self) -> float:
        return self.T / self.N

    def t(self, k) -> float:
        return k * self.h

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.h


# -- mollifiers -------------------------------------------------------------


def _bump(r2):
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


def _bump_mass(dim):
    if dim == 1:
        return 2.0 * integrate.quad(lambda z: math.exp(-1.0 / (1.0 - z * z)), 0.0, 1.0)[0]
    return 2.0 * math.pi * integrate.quad(lambda r: r * math.exp(-1.0 / (1.0 - r * r)), 0.0, 1.0)[0]


@dataclass(frozen=True)
class MollifierSpec:
    """Unit-mass kernel rho and its tensor-product midpoint rule.

    Parameters
    ----------
    profile : {"gaussian", "bump"}
        Standard normal density, or the compactly supported C-infinity
        bump on the unit ball.
    radius : float
        Truncation radius of the gaussian in units of ``h``. Ignored for
        the bump, whose support radius is 1.
    nodes : int, optional
        Half-count of quadrature points per axis; the rule uses
        ``2*nodes + 1`` points per axis. Defaults to 20 in 1-D, 10 in 2-D.
    """

    profile: str = "gaussian"
    radius: float = 6.0
    nodes: int | None = None

    def __post_init__(self):
        if self.profile not in ("gaussian", "bump"):
            raise ConfigError(f"unknown mollifier profile {self.profile!r}")
        if self.nodes is not None and self.nodes < 1:
            raise ConfigError(f"mollifier needs at least one quadrature node, got {self.nodes}")
        if not self.radius > 0:
            raise ConfigError(f"truncation radius must be positive, got {self.radius}")

    @property
    def support_radius(self) -> float:
        """Radius of the (truncated) kernel in units of ``h``."""
        return self.radius if self.profile == "gaussian" else 1.0

    def nodes_for(self, dim: int) -> int:
        return self.nodes if self.nodes is not None else (20 if dim == 1 else 10)

    def density(self, z) -> np.ndarray:
        z = np.atleast_2d(z)
        r2 = np.einsum("qi,qi->q", z, z)
        dim = z.shape[1]
        if self.profile == "gaussian":
            return np.exp(-0.5 * r2) / (2.0 * math.pi) ** (dim / 2.0)
        return _bump(r2) / _bump_mass(dim)

    def rule(self, dim: int):
        """Unit-scale quadrature ``(offsets, weights, defect)``.

        Offsets live in ``[-R, R]^dim`` and must be scaled by ``h``.
        Weights are renormalized to sum to one; ``defect`` is the
        deviation of the raw sum from one.
        """
        nodes = self.nodes_for(dim)
        R = self.support_radius
        m = 2 * nodes + 1
        width = 2.0 * R / m
        axis = -R + width * (np.arange(m) + 0.5)
        grids = np.meshgrid(*([axis] * dim), indexing="ij")
        z = np.column_stack([g.ravel() for g in grids])
        w = self.density(z) * width**dim
        keep = w > 0
        z, w = z[keep], w[keep]
        defect = abs(w.sum() - 1.0)
        return z, w / w.sum(), defect


# -- velocity fields --------------------------------------------------------


class VelocityField:
    """Drift ``b(t, x)`` with its declared bounds.

    Parameters
    ----------
    func : callable
        ``func(t, x)`` with ``x`` of shape (n, d), returning (n, d).
    dim : int
    C0 : float
        Declared bound on ``|b|``.
    C1 : float, optional
        Declared one-sided Lipschitz constant.
    time_dependent : bool
    """

    def __init__(self, func, dim, C0, C1=None, time_dependent=True, name=None):
        self.func = func
        self.dim = dim
        self.C0 = float(C0)
        self.C1 = None if C1 is None else float(C1)
        self.time_dependent = time_dependent
        self.name = name or getattr(func, "__name__", "drift")

    def __call__(self, t, x) -> np.ndarray:
        x = as_points(x, self.dim)
        return np.asarray(self.func(t, x), dtype=float).reshape(len(x), self.dim)

    def convolve(self, t, x, h, mollifier: MollifierSpec, chunk=20000) -> np.ndarray:
        """``(b(t, .) * rho_h)(x)`` by the mollifier's quadrature rule."""
        x = as_points(x, self.dim)
        z, w, _ = mollifier.rule(self.dim)
        out = np.empty_like(x)
        step = max(1, chunk // len(w))
        for s in range(0, len(x), step):
            xs = x[s : s + step]
            pts = (xs[:, None, :] - h * z[None, :, :]).reshape(-1, self.dim)
            vals = self(t, pts).reshape(len(xs), len(w), self.dim)
            out[s : s + step] = np.einsum("q,nqi->ni", w, vals)
        return out

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r}, dim={self.dim})"


class ConstantField(VelocityField):
    def __init__(self, value, name="constant"):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        self.value = value
        super().__init__(
            lambda t, x: np.broadcast_to(value, x.shape),
            len(value),
            C0=float(np.linalg.norm(value)),
            C1=0.0,
            time_dependent=False,
            name=name,
        )

    def convolve(self, t, x, h, mollifier, chunk=None):
        x = as_points(x, self.dim)
        return np.broadcast_to(self.value, x.shape).copy()


class JumpField(VelocityField):
    """Piecewise-constant drift across a (possibly moving) hyperplane.

    ``b(t, x) = left`` where ``normal . x < position(t)``, else ``right``.
    Gaussian mollification is evaluated in closed form with the normal
    CDF; other kernels fall back to quadrature.
    """

    def __init__(self, normal, position, left, right, C1=None, name="jump"):
        normal = np.atleast_1d(np.asarray(normal, dtype=float))
        normal = normal / np.linalg.norm(normal)
        self.normal = normal
        self.position = position if callable(position) else (lambda t, c=float(position): c)
        self.left = np.atleast_1d(np.asarray(left, dtype=float))
        self.right = np.atleast_1d(np.asarray(right, dtype=float))
        C0 = max(np.linalg.norm(self.left), np.linalg.norm(self.right))
        super().__init__(
            self._eval,
            len(normal),
            C0=C0,
            C1=C1,
            time_dependent=callable(position),
            name=name,
        )

    def _eval(self, t, x):
        below = x @ self.normal < self.position(t)
        return np.where(below[:, None], self.left, self.right)

    def convolve(self, t, x, h, mollifier, chunk=20000):
        if mollifier.profile != "gaussian":
            return super().convolve(t, x, h, mollifier, chunk)
        x = as_points(x, self.dim)
        # P(n.(x - h Y) < c) for Y standard normal
        p = special.ndtr((self.position(t) - x @ self.normal) / h)
        return self.right + p[:, None] * (self.left - self.right)


class TabulatedField(VelocityField):
    """Drift given by samples ``(t, x[, y]) -> b``, evaluated at the nearest sample."""

    def __init__(self, samples_tx, values, name="tabulated"):
        samples_tx = np.asarray(samples_tx, dtype=float)
        values = np.asarray(values, dtype=float)
        dim = values.shape[1]
        self._tree = cKDTree(samples_tx)
        self._values = values
        time_dependent = np.ptp(samples_tx[:, 0]) > 0
        super().__init__(
            self._eval,
            dim,
            C0=float(np.linalg.norm(values, axis=1).max()),
            time_dependent=bool(time_dependent),
            name=name,
        )

    def _eval(self, t, x):
        q = np.column_stack([np.full(len(x), float(t)), x])
        _, idx = self._tree.query(q)
        return self._values[idx]

    @classmethod
    def from_csv(cls, path) -> "TabulatedField":
        """Read rows ``t,x[,y],bx[,by]`` (header line optional)."""
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.reader(fh):
                if not rec or rec[0].lstrip().startswith("#"):
                    continue
                try:
                    rows.append([float(v) for v in rec])
                except ValueError:
                    if rows:
                        raise ConfigError(f"{path}: malformed row {rec}") from None
        data = np.array(rows)
        if data.ndim != 2 or data.shape[1] not in (3, 5):
            raise ConfigError(f"{path}: expected columns t,x,bx or t,x,y,bx,by")
        dim = (data.shape[1] - 1) // 2
        return cls(data[:, : 1 + dim], data[:, 1 + dim :], name=Path(path).stem)


# -- diffusion --------------------------------------------------------------


class DiffusionField:
    """Diffusion factor ``sigma(t, x)``, a d x r matrix per point.

    ``func(t, x)`` receives (n, d) points and returns (n, d, r).
    ``C2`` bounds the Frobenius norm of sigma.
    """

    def __init__(self, func, dim, r, C2, time_dependent=True, name=None):
        self.func = func
        self.dim = dim
        self.r = r
        self.C2 = float(C2)
        self.time_dependent = time_dependent
        self.name = name or getattr(func, "__name__", "sigma")

    def __call__(self, t, x) -> np.ndarray:
        x = as_points(x, self.dim)
        out = np.asarray(self.func(t, x), dtype=float)
        return np.broadcast_to(out, (len(x), self.dim, self.r)).copy()

    def column(self, t, x, ell) -> np.ndarray:
        return self(t, x)[:, :, ell]

    def scaled(self, factor: float) -> "DiffusionField":
        f = self.func
        return DiffusionField(
            lambda t, x: factor * np.asarray(f(t, x)),
            self.dim,
            self.r,
            abs(factor) * self.C2,
            self.time_dependent,
            f"{factor:g}*{self.name}",
        )


def constant_diffusion(matrix, name="constant") -> DiffusionField:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    d, r = matrix.shape
    return DiffusionField(
        lambda t, x: np.broadcast_to(matrix, (len(x), d, r)),
        d,
        r,
        C2=float(np.linalg.norm(matrix)),
        time_dependent=False,
        name=name,
    )


# -- time-averaged coefficients --------------------------------------------


def _time_nodes(grid: TimeGrid, k: int, M: int):
    if not 0 <= k < grid.N:
        raise ConfigError(f"step {k} outside 0..{grid.N - 1}")
    if M < 1:
        raise ConfigError(f"time rule needs at least one node, got {M}")
    return grid.t(k) + grid.h * (np.arange(M) + 0.5) / M


def mollified_drift(field: VelocityField, grid: TimeGrid, moll: MollifierSpec, k: int, x, time_nodes: int = 1):
    """Step-averaged mollified drift ``b^k_h(x)`` with an M-point midpoint rule in time."""
    nodes = _time_nodes(grid, k, time_nodes if field.time_dependent else 1)
    acc = sum(field.convolve(s, x, grid.h, moll) for s in nodes)
    return acc / len(nodes)


def averaged_sigma(field: DiffusionField, grid: TimeGrid, k: int, ell: int, x, time_nodes: int = 1):
    """Step average of column ``ell`` (zero-based) of sigma at ``x``."""
    if not 0 <= ell < field.r:
        raise ConfigError(f"column {ell} outside 0..{field.r - 1}")
    nodes = _time_nodes(grid, k, time_nodes if field.time_dependent else 1)
    return sum(field.column(s, x, ell) for s in nodes) / len(nodes)


class Coefficients:
    """Per-step coefficients of the schemes.

    Bundles the drift, diffusion, time grid, mollifier and time rule, and
    caches vertex tables (all steps at once for time-independent fields,
    the most recent step otherwise).
    """

    def __init__(
        self,
        drift: VelocityField,
        diffusion: DiffusionField,
        grid: TimeGrid,
        mollifier: MollifierSpec | None = None,
        time_nodes: int = 1,
    ):
        if drift.dim != diffusion.dim:
            raise ConfigError("drift and diffusion dimensions differ")
        if time_nodes < 1:
            raise ConfigError(f"time rule needs at least one node, got {time_nodes}")
        self.drift = drift
        self.diffusion = diffusion
        self.grid = grid
        self.mollifier = mollifier or MollifierSpec()
        self.time_nodes = time_nodes
        self._cache = {}

    @property
    def dim(self) -> int:
        return self.drift.dim

    @property
    def r(self) -> int:
        return self.diffusion.r

    @property
    def h(self) -> float:
        return self.grid.h

    def drift_at(self, k, x) -> np.ndarray:
        return mollified_drift(self.drift, self.grid, self.mollifier, k, x, self.time_nodes)

    def sigma_at(self, k, x) -> np.ndarray:
        """All averaged columns, shape (n, d, r)."""
        nodes = _time_nodes(self.grid, k, self.time_nodes if self.diffusion.time_dependent else 1)
        return sum(self.diffusion(s, x) for s in nodes) / len(nodes)

    def vertex_table(self, mesh, k, rows=None):
        """``(b^k_h, sigma^k_h)`` at mesh vertices (all, or the ids in ``rows``)."""
        key_b = (id(mesh), 0 if not self.drift.time_dependent else k)
        key_s = (id(mesh), 0 if not self.diffusion.time_dependent else k)
        b = self._cache.get(("b",) + key_b)
        s = self._cache.get(("s",) + key_s)
        if rows is None or b is not None and s is not None:
            if b is None:
                b = self.drift_at(k, mesh.vertices)
                self._store(("b",) + key_b, b, self.drift.time_dependent)
            if s is None:
                s = self.sigma_at(k, mesh.vertices)
                self._store(("s",) + key_s, s, self.diffusion.time_dependent)
            return (b, s) if rows is None else (b[rows], s[rows])
        pts = mesh.vertices[rows]
        return (
            b[rows] if b is not None else self.drift_at(k, pts),
            s[rows] if s is not None else self.sigma_at(k, pts),
        )

    def _store(self, key, value, transient):
        if transient:
            # keep only the latest step of time-dependent tables
            for old in [c for c in self._cache if c[0] == key[0] and c[1] == key[1] and c[2] != key[2]]:
                del self._cache[old]
        self._cache[key] = value


# -- one-sided Lipschitz check ---------------------------------------------


@dataclass(frozen=True)
class OSLCReport:
    estimate: float
    declared: float | None
    passed: bool
    samples: int
    skipped: int


def check_oslc(field: VelocityField, grid: TimeGrid, sample_box, pairs: int, seed: int, declared=None, refine: int = 60):
    """Empirical one-sided Lipschitz constant of ``field``.

    Seeded triples ``(t, x, y)`` are drawn with ``x`` uniform in the box
    and ``|x - y|`` log-uniform over many decades. Pairs showing a positive
    ratio are bisected along the segment, keeping the worse half, which
    exposes jumps of the wrong sign at any scale.

    Returns
    -------
    OSLCReport
        ``estimate`` is the largest sampled ``-(b(x)-b(y)).(x-y)/|x-y|^2``.
    """
    if pairs < 1:
        raise ConfigError(f"need at least one sample pair, got {pairs}")
    declared = field.C1 if declared is None else declared
    d = field.dim
    box = np.asarray(sample_box, dtype=float).reshape(d, 2)
    rng = np.random.Generator(np.random.Philox(seed))
    span = float(np.linalg.norm(box[:, 1] - box[:, 0]))
    t = rng.uniform(0.0, grid.T, pairs)
    x = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((pairs, d))
    direction = rng.normal(size=(pairs, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    sep = span * 10.0 ** rng.uniform(-9.0, 0.0, pairs)
    y = x + sep[:, None] * direction

    def ratio(tt, a, b):
        diff = a - b
        n2 = np.einsum("ni,ni->n", diff, diff)
        out = np.full(len(a), -np.inf)
        ok = n2 > 0
        ok_idx = np.flatnonzero(ok)
        if ok_idx.size:
            db = _field_many(field, tt[ok_idx], a[ok_idx]) - _field_many(field, tt[ok_idx], b[ok_idx])
            out[ok_idx] = -np.einsum("ni,ni->n", db, diff[ok_idx]) / n2[ok_idx]
        return out, ok

    q, ok = ratio(t, x, y)
    skipped = int((~ok).sum())
    best = q.max() if ok.any() else -np.inf
    active = np.flatnonzero(q > 0)
    a, b, ta = x[active], y[active], t[active]
    for _ in range(refine):
        if a.size == 0:
            break
        mid = 0.5 * (a + b)
        q1, _ = ratio(ta, a, mid)
        q2, _ = ratio(ta, mid, b)
        left = q1 >= q2
        b = np.where(left[:, None], mid, b)
        a = np.where(left[:, None], a, mid)
        qbest = np.maximum(q1, q2)
        best = max(best, qbest.max())
        sep_now = np.linalg.norm(a - b, axis=1)
        keep = (qbest > 0) & (sep_now > 1e-13 * (1.0 + np.linalg.norm(a, axis=1)))
        a, b, ta = a[keep], b[keep], ta[keep]
    estimate = float(best)
    passed = declared is not None and estimate <= declared + 1e-9
    return OSLCReport(estimate, declared, bool(passed), pairs, skipped)


def _field_many(field, times, x):
    """Evaluate a field at per-point times."""
    if not field.time_dependent:
        return field(0.0, x)
    out = np.empty_like(x)
    for tv in np.unique(times):
        sel = times == tv
        out[sel] = field(tv, x[sel])
    return out


# -- named fields -----------------------------------------------------------


def test1_drift() -> VelocityField:
    """``b = -1`` for ``x < 0`` and ``-1/2`` for ``x >= 0``."""
    return JumpField([1.0], 0.0, [-1.0], [-0.5], C1=0.0, name="test1")


def _test2_drift(t, x):
    x1, x2 = x[:, 0], x[:, 1]
    speed = np.clip(2.0 - np.maximum(np.abs(x1), np.abs(x2)), 0.0, None)
    return np.column_stack([-speed * x2, speed * x1])


def test2_drift() -> VelocityField:
    """Rotation ``b = (2 - max|x_i|)_+ (-x2, x1)``, vanishing outside ``[-2, 2]^2``."""
    # |b| = (2-m)|x| <= (2-m) sqrt(2) m <= sqrt(2); symmetric part of Db bounded by |x| <= 2 sqrt(2)
    return VelocityField(_test2_drift, 2, C0=math.sqrt(2.0), C1=2.0 * math.sqrt(2.0), time_dependent=False, name="test2")


def test3_drift() -> VelocityField:
    """``b = -(3/2, 0)`` for ``x1 < t`` and ``-(1/2, 0)`` for ``x1 >= t``."""
    return JumpField([1.0, 0.0], lambda t: t, [-1.5, 0.0], [-0.5, 0.0], C1=0.0, name="test3")


def test1_diffusion() -> DiffusionField:
    return constant_diffusion(np.zeros((1, 1)), name="test1")


def test2_diffusion() -> DiffusionField:
    return constant_diffusion(1e-3 * np.eye(2), name="test2")


def _test3_sigma(t, x):
    s = 0.1 * np.abs(np.cos(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1]))
    return s[:, None, None] * np.eye(2)[None]


def test3_diffusion() -> DiffusionField:
    return DiffusionField(_test3_sigma, 2, 2, C2=0.1 * math.sqrt(2.0), time_dependent=False, name="test3")


NAMED_DRIFTS = {"test1": test1_drift, "test2": test2_drift, "test3": test3_drift}
NAMED_DIFFUSIONS = {"test1": test1_diffusion, "test2": test2_diffusion, "test3": test3_diffusion}


def named_drift(name: str) -> VelocityField:
    try:
        return NAMED_DRIFTS[name]()
    except KeyError:
        raise ConfigError(f"unknown drift {name!r}") from None


def named_diffusion(name: str) -> DiffusionField:
    try:
        return NAMED_DIFFUSIONS[name]()
    except KeyError:
        raise ConfigError(f"unknown diffusion {name!r}") from None
