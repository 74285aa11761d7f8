"""Discrete characteristics, Markov transition rows and the Euler random walk."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .fields import Coefficients
from .mesh import Mesh, as_points

logger = logging.getLogger(__name__)

ESCAPE_POLICIES = ("raise", "clamp")


class EndpointEscaped(RuntimeError):
    """A characteristic endpoint left the mesh: the computational domain is too small."""

    def __init__(self, j, k, point):
        point = np.asarray(point, dtype=float).ravel()
        super().__init__(f"endpoint of vertex {j} at step {k} escaped the mesh at {point.tolist()}")
        self.j = j
        self.k = k
        self.point = point


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based Philox generator; ``stream`` selects an independent substream."""
    ss = np.random.SeedSequence(seed)
    if stream:
        ss = ss.spawn(stream + 1)[stream]
    return np.random.Generator(np.random.Philox(ss))


def endpoints(coeffs: Coefficients, k: int, x, b=None, sigma=None) -> np.ndarray:
    """Characteristic endpoints ``x - h b^k_h(x) +/- sqrt(r h) sigma^k_{h,l}(x)``.

    Returns an array of shape (n, 2r, d) ordered ``(l=0,+), (l=0,-), (l=1,+), ...``.
    Precomputed coefficients ``b`` (n, d) and ``sigma`` (n, d, r) may be passed.
    """
    x = as_points(x, coeffs.dim)
    h, r = coeffs.h, coeffs.r
    if b is None:
        b = coeffs.drift_at(k, x)
    if sigma is None:
        sigma = coeffs.sigma_at(k, x)
    centre = x - h * b
    kick = np.sqrt(r * h) * np.transpose(sigma, (0, 2, 1))  # (n, r, d)
    out = np.empty((len(x), 2 * r, coeffs.dim))
    out[:, 0::2] = centre[:, None, :] + kick
    out[:, 1::2] = centre[:, None, :] - kick
    return out


@dataclass
class StepOperator:
    """Transition rows of one step in fixed-width form.

    Row ``n`` belongs to source vertex ``rows[n]`` and puts weight
    ``weights[n, c]`` on vertex ``targets[n, c]``; each row has
    ``2r(d+1)`` slots and targets may repeat.
    """

    k: int
    rows: np.ndarray
    targets: np.ndarray
    weights: np.ndarray
    clamped: np.ndarray

    def apply(self, u_next) -> np.ndarray:
        """Backward step on the operator's rows: ``sum_i p_ji u(i)``."""
        return np.einsum("nc,nc...->n...", self.weights, np.asarray(u_next)[self.targets])

    def push(self, f, n_vertices: int) -> np.ndarray:
        """Forward step: scatter ``f(rows)`` along the rows."""
        mass = self.weights * np.asarray(f)[self.rows][:, None]
        return np.bincount(self.targets.ravel(), weights=mass.ravel(), minlength=n_vertices)


def step_operator(mesh: Mesh, coeffs: Coefficients, k: int, rows=None, escape: str = "raise") -> StepOperator:
    """Assemble the transition rows of step ``k`` for ``rows`` (default: all vertices).

    Raises
    ------
    EndpointEscaped
        If an endpoint is outside the mesh and ``escape == "raise"``.
        With ``escape == "clamp"`` the endpoint is projected on the hull
        and the row is flagged in ``clamped``.
    """
    if escape not in ESCAPE_POLICIES:
        raise ValueError(f"unknown escape policy {escape!r}")
    b, sigma = coeffs.vertex_table(mesh, k, rows)
    rows = np.arange(mesh.n_vertices) if rows is None else np.asarray(rows, dtype=np.int64)
    ends = endpoints(coeffs, k, mesh.vertices[rows], b, sigma)
    n, e, d = ends.shape
    flat = ends.reshape(-1, d)
    simplex, lam = mesh.locate_many(flat)
    out = simplex < 0
    clamped = np.zeros(n, dtype=bool)
    if out.any():
        bad = np.flatnonzero(out)
        if escape == "raise":
            first = bad[0]
            raise EndpointEscaped(int(rows[first // e]), k, flat[first])
        _, simplex[bad], lam[bad] = mesh.project_to_hull(flat[bad])
        clamped[np.unique(bad // e)] = True
        logger.debug("step %d: clamped %d endpoints to the hull", k, bad.size)
    # locate accepts coordinates down to -tol; clip so rows stay nonnegative
    lam = np.clip(lam, 0.0, None)
    lam /= lam.sum(axis=1, keepdims=True)
    targets = mesh.simplices[simplex].reshape(n, e * (d + 1))
    weights = (lam / e).reshape(n, e * (d + 1))
    return StepOperator(k, rows, targets, weights, clamped)


@dataclass
class TransitionRow:
    source: int
    step: int
    targets: np.ndarray
    weights: np.ndarray
    clamped: bool = False

    def as_dict(self) -> dict:
        return dict(zip(self.targets.tolist(), self.weights.tolist()))


def transition_row(mesh: Mesh, coeffs: Coefficients, k: int, j: int, escape: str = "raise") -> TransitionRow:
    """Sparse row ``p^k_{j.}`` with duplicate targets merged and zero weights dropped."""
    op = step_operator(mesh, coeffs, k, np.array([j]), escape)
    tgt, inv = np.unique(op.targets[0], return_inverse=True)
    w = np.bincount(inv, weights=op.weights[0])
    keep = w > 0
    return TransitionRow(j, k, tgt[keep], w[keep], bool(op.clamped[0]))


@dataclass
class ClampRecord:
    k: int
    vertex: int


class TransitionOperators:
    """Lazily built per-step operators shared by the two schemes.

    Parameters
    ----------
    retain : bool
        Keep every step's operator (needed when the forward and backward
        sweeps must see identical rows, e.g. duality checks). Otherwise
        only the most recent full-mesh step is kept.
    """

    def __init__(self, mesh: Mesh, coeffs: Coefficients, escape: str = "raise", retain: bool = False):
        if escape not in ESCAPE_POLICIES:
            raise ValueError(f"unknown escape policy {escape!r}")
        self.mesh = mesh
        self.coeffs = coeffs
        self.escape = escape
        self.retain = retain
        self._ops = {}
        self.clamped: list[ClampRecord] = []
        self._clamp_seen = set()

    def get(self, k: int, rows=None) -> StepOperator:
        cached = self._ops.get(k)
        if cached is not None and (rows is None or cached.rows.size == self.mesh.n_vertices):
            return cached if rows is None else _slice(cached, rows)
        op = step_operator(self.mesh, self.coeffs, k, rows, self.escape)
        self._note_clamps(op)
        if rows is None:
            if not self.retain:
                self._ops.clear()
            self._ops[k] = op
        return op

    def _note_clamps(self, op):
        for j in op.rows[op.clamped].tolist():
            if (op.k, j) not in self._clamp_seen:
                self._clamp_seen.add((op.k, j))
                self.clamped.append(ClampRecord(op.k, j))


def _slice(op: StepOperator, rows) -> StepOperator:
    rows = np.asarray(rows, dtype=np.int64)
    return StepOperator(op.k, rows, op.targets[rows], op.weights[rows], op.clamped[rows])


def dump_rows_csv(op: StepOperator, path) -> None:
    """Write ``k,j,i,p`` rows (duplicates merged) for one step."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "j", "i", "p"])
        for n, j in enumerate(op.rows.tolist()):
            tgt, inv = np.unique(op.targets[n], return_inverse=True)
            p = np.bincount(inv, weights=op.weights[n])
            for i, pi in zip(tgt.tolist(), p.tolist()):
                if pi > 0:
                    w.writerow([op.k, j, i, repr(pi)])


def discrete_generator(coeffs: Coefficients, psi, k: int, x) -> np.ndarray:
    """``(S^h psi(x) - psi(x)) / h`` with exact evaluation of ``psi`` at the endpoints."""
    x = as_points(x, coeffs.dim)
    ends = endpoints(coeffs, k, x)
    n, e, d = ends.shape
    vals = np.asarray(psi(ends.reshape(-1, d)), dtype=float).reshape(n, e)
    return (vals.mean(axis=1) - np.asarray(psi(x), dtype=float).reshape(n)) / coeffs.h


def sample_z(rng: np.random.Generator, n: int, r: int):
    """Active coordinate and sign of the exclusive +/-1 walk variable.

    Exactly one coordinate of Z is nonzero; it is uniform on ``0..r-1``
    and its sign is a fair coin, so each ``Z_l = +/-1`` has probability
    ``1/(2r)``.
    """
    active = rng.integers(0, r, size=n)
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return active, sign


def walk(coeffs: Coefficients, x, from_step: int, to_step: int, rng: np.random.Generator) -> np.ndarray:
    """Sample the Euler chain from step ``from_step`` to ``to_step`` for every start point.

    Coefficients are evaluated at the walker positions (no mesh involved),
    so walkers may leave any box.
    """
    x = as_points(x, coeffs.dim).copy()
    if not 0 <= from_step <= to_step <= coeffs.grid.N:
        raise ValueError(f"need 0 <= {from_step} <= {to_step} <= {coeffs.grid.N}")
    h, r = coeffs.h, coeffs.r
    rows = np.arange(len(x))
    for m in range(from_step, to_step):
        b = coeffs.drift_at(m, x)
        sigma = coeffs.sigma_at(m, x)
        active, sign = sample_z(rng, len(x), r)
        x = x - h * b + np.sqrt(r * h) * sign[:, None] * sigma[rows, :, active]
    return x
