"""Simplicial meshes in one and two dimensions.

Provides barycentric coordinates, point location through a uniform-bin
index, the piecewise-affine interpolation operator, structured mesh
builders and an importer for Triangle ``.node``/``.ele`` files.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

# simplex volume must exceed this fraction of diam**d
VOLUME_FLOOR = 1e-12


class MeshError(ValueError):
    """Invalid mesh data (degenerate simplices, bad indices, bad resolution)."""


class DegenerateSimplexError(MeshError):
    def __init__(self, simplex, volume):
        super().__init__(f"simplex {simplex} is degenerate (volume {volume:.3e})")
        self.simplex = simplex
        self.volume = volume


class OutsideHullError(ValueError):
    """A query point does not lie in any simplex of the mesh."""

    def __init__(self, point):
        point = np.asarray(point, dtype=float).ravel()
        super().__init__(f"point {point.tolist()} is outside the mesh hull")
        self.point = point


class TriangleParseError(MeshError):
    def __init__(self, filename, line, message):
        super().__init__(f"{filename}:{line}: {message}")
        self.filename = filename
        self.line = line


@dataclass(frozen=True)
class BarycentricEval:
    simplex: int
    coords: np.ndarray


def barycentric(corners, point) -> np.ndarray:
    """Barycentric coordinates of ``point`` with respect to a simplex.

    Parameters
    ----------
    corners : array_like, shape (d+1, d)
        Simplex vertices.
    point : array_like, shape (d,)

    Returns
    -------
    ndarray, shape (d+1,)
        Coordinates summing to one. Negative entries mean the point lies
        outside the simplex.
    """
    corners = np.asarray(corners, dtype=float)
    if corners.ndim == 1:
        corners = corners[:, None]
    d = corners.shape[1]
    point = np.asarray(point, dtype=float).reshape(d)
    edges = (corners[1:] - corners[0]).T
    vol = abs(np.linalg.det(edges)) / math.factorial(d)
    diam = max(
        np.linalg.norm(corners[a] - corners[b])
        for a in range(d + 1)
        for b in range(a + 1, d + 1)
    )
    if not vol > VOLUME_FLOOR * diam**d:
        raise DegenerateSimplexError(None, vol)
    rest = np.linalg.solve(edges, point - corners[0])
    return np.concatenate([[1.0 - rest.sum()], rest])


def as_points(x, dim: int) -> np.ndarray:
    """Coerce ``x`` to an ``(n, dim)`` float array."""
    arr = np.asarray(x, dtype=float)
    if dim == 1 and arr.ndim <= 1:
        return arr.reshape(-1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, dim)
    if arr.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {arr.shape}")
    return arr.reshape(-1, dim)


class _BinIndex:
    """Uniform grid of bins over the mesh bounding box.

    Each bin lists, in ascending order, the simplices whose (padded)
    bounding box overlaps it.
    """

    def __init__(self, lo, hi, mins, maxs):
        n_simplex, d = mins.shape
        extent = np.maximum(hi - lo, 1e-300)
        cell = (np.prod(extent) / max(n_simplex, 1)) ** (1.0 / d)
        shape = np.maximum(np.ceil(extent / cell).astype(np.int64), 1)
        self.lo = lo
        self.hi = hi
        self.shape = shape
        self.width = extent / shape

        i0 = self._cell(mins)
        i1 = self._cell(maxs)
        span = i1 - i0 + 1
        counts = np.prod(span, axis=1)
        owner = np.repeat(np.arange(n_simplex), counts)
        offset = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        flat = np.zeros(owner.size, dtype=np.int64)
        stride = 1
        for axis in range(d - 1, -1, -1):
            w = span[owner, axis]
            flat += (i0[owner, axis] + offset % w) * stride
            offset //= w
            stride *= shape[axis]
        order = np.argsort(flat, kind="stable")
        self.items = owner[order].astype(np.int64)
        n_bins = int(np.prod(shape))
        self.counts = np.bincount(flat, minlength=n_bins)
        self.starts = np.concatenate([[0], np.cumsum(self.counts)[:-1]])
        self.max_count = int(self.counts.max()) if n_bins else 0

    def _cell(self, pts):
        idx = np.floor((pts - self.lo) / self.width).astype(np.int64)
        return np.clip(idx, 0, self.shape - 1)

    def bins_of(self, pts):
        """Flat bin id per point, -1 for points outside the bounding box."""
        inside = np.all((pts >= self.lo) & (pts <= self.hi), axis=1)
        idx = self._cell(pts)
        flat = np.zeros(len(pts), dtype=np.int64)
        for axis in range(pts.shape[1]):
            flat = flat * self.shape[axis] + idx[:, axis]
        flat[~inside] = -1
        return flat


class Mesh:
    """Conforming simplicial mesh of dimension 1 or 2.

    Parameters
    ----------
    vertices : array_like, shape (V, d)
    simplices : array_like of int, shape (S, d+1)
        Zero-based vertex ids.

    Attributes
    ----------
    dim, vertices, simplices
    dx : float
        Largest simplex diameter.
    volumes : ndarray
        d-volume of each simplex.
    tol : float
        Point-location tolerance on barycentric coordinates.
    """

    def __init__(self, vertices, simplices):
        vertices = np.asarray(vertices, dtype=float)
        if vertices.ndim == 1:
            vertices = vertices[:, None]
        simplices = np.asarray(simplices, dtype=np.int64)
        d = vertices.shape[1]
        if d not in (1, 2):
            raise MeshError(f"only 1-D and 2-D meshes are supported, got d={d}")
        if simplices.ndim != 2 or simplices.shape[1] != d + 1:
            raise MeshError(f"simplices must have shape (S, {d + 1})")
        if len(simplices) == 0:
            raise MeshError("mesh has no simplices")
        if simplices.min() < 0 or simplices.max() >= len(vertices):
            raise MeshError("simplex references a vertex out of range")
        if not np.all(np.isfinite(vertices)):
            raise MeshError("non-finite vertex coordinates")

        self.dim = d
        self.vertices = vertices
        self.simplices = simplices
        self.vertices.setflags(write=False)
        self.simplices.setflags(write=False)

        corners = vertices[simplices]
        self._origin = corners[:, 0, :]
        edges = np.transpose(corners[:, 1:, :] - corners[:, :1, :], (0, 2, 1))
        det = np.linalg.det(edges)
        self.volumes = np.abs(det) / math.factorial(d)
        diam = np.zeros(len(simplices))
        for a in range(d + 1):
            for b in range(a + 1, d + 1):
                diam = np.maximum(diam, np.linalg.norm(corners[:, a] - corners[:, b], axis=1))
        self.diameters = diam
        bad = np.flatnonzero(~(self.volumes > VOLUME_FLOOR * diam**d))
        if bad.size:
            raise DegenerateSimplexError(int(bad[0]), float(self.volumes[bad[0]]))
        self._inv = np.linalg.inv(edges)
        self.dx = float(diam.max())
        self.tol = 1e-10 * (1.0 + self.dx)

        self.bbox = (vertices.min(axis=0), vertices.max(axis=0))
        pad = self.tol * (1.0 + np.abs(corners).max())
        self._index = _BinIndex(
            self.bbox[0] - pad,
            self.bbox[1] + pad,
            corners.min(axis=1) - pad,
            corners.max(axis=1) + pad,
        )
        self._boundary = None
        self._hull = None
        logger.debug("mesh: %d vertices, %d simplices, dx=%.4g", self.n_vertices, self.n_simplices, self.dx)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_simplices(self) -> int:
        return len(self.simplices)

    def __repr__(self):
        return f"Mesh(dim={self.dim}, vertices={self.n_vertices}, simplices={self.n_simplices}, dx={self.dx:.4g})"

    # -- barycentric coordinates -------------------------------------------

    def barycentric_coords(self, simplex: int, point) -> np.ndarray:
        if not 0 <= simplex < self.n_simplices:
            raise MeshError(f"no simplex {simplex}")
        p = as_points(point, self.dim)[0]
        return self.barycentric_many(np.array([simplex]), p[None, :])[0]

    def barycentric_many(self, simplex_ids, points) -> np.ndarray:
        """Coordinates of ``points[n]`` in ``simplex_ids[n]``; shape (n, d+1)."""
        rel = points - self._origin[simplex_ids]
        rest = np.einsum("nij,nj->ni", self._inv[simplex_ids], rel)
        return np.concatenate([1.0 - rest.sum(axis=1, keepdims=True), rest], axis=1)

    # -- point location ----------------------------------------------------

    def locate_many(self, points):
        """Locate many points at once.

        Returns
        -------
        simplex : ndarray of int
            Lowest-id simplex containing each point up to ``tol``, or -1.
        coords : ndarray, shape (n, d+1)
            Barycentric coordinates in that simplex (NaN where not found).
        """
        pts = as_points(points, self.dim)
        n = len(pts)
        found = np.full(n, -1, dtype=np.int64)
        coords = np.full((n, self.dim + 1), np.nan)
        idx = self._index
        bins = idx.bins_of(pts)
        pending = np.flatnonzero(bins >= 0)
        for c in range(idx.max_count):
            if pending.size == 0:
                break
            b = bins[pending]
            has = idx.counts[b] > c
            pending = pending[has]
            b = b[has]
            cand = idx.items[idx.starts[b] + c]
            lam = self.barycentric_many(cand, pts[pending])
            ok = lam.min(axis=1) >= -self.tol
            hit = pending[ok]
            found[hit] = cand[ok]
            coords[hit] = lam[ok]
            pending = pending[~ok]
        return found, coords

    def locate(self, point):
        """Simplex containing ``point`` (lowest id on ties) or ``None`` outside the hull."""
        s, _ = self.locate_many(as_points(point, self.dim)[:1])
        return None if s[0] < 0 else int(s[0])

    def locate_with_coords(self, point):
        s, lam = self.locate_many(as_points(point, self.dim)[:1])
        if s[0] < 0:
            return None
        return BarycentricEval(int(s[0]), lam[0])

    def contains(self, points) -> np.ndarray:
        return self.locate_many(points)[0] >= 0

    # -- interpolation -----------------------------------------------------

    def interpolate(self, values, points) -> np.ndarray:
        """Piecewise-affine interpolant of vertex ``values`` at ``points``.

        ``values`` may carry trailing dimensions (shape (V, ...)).

        Raises
        ------
        OutsideHullError
            If any point is outside the mesh.
        """
        values = np.asarray(values, dtype=float)
        pts = as_points(points, self.dim)
        s, lam = self.locate_many(pts)
        miss = np.flatnonzero(s < 0)
        if miss.size:
            raise OutsideHullError(pts[miss[0]])
        verts = self.simplices[s]
        return np.einsum("nk,nk...->n...", lam, values[verts])

    # -- hull --------------------------------------------------------------

    def boundary_facets(self):
        """Facets owned by exactly one simplex.

        Returns ``(facets, owners)`` with facets of shape (F, d) in vertex ids.
        """
        if self._boundary is None:
            d = self.dim
            faces = []
            for drop in range(d + 1):
                keep = [m for m in range(d + 1) if m != drop]
                faces.append(self.simplices[:, keep])
            faces = np.sort(np.concatenate(faces), axis=1)
            owners = np.tile(np.arange(self.n_simplices), d + 1)
            key = faces[:, 0] if d == 1 else faces[:, 0] * self.n_vertices + faces[:, 1]
            _, inv, counts = np.unique(key, return_inverse=True, return_counts=True)
            single = counts[inv] == 1
            self._boundary = (faces[single], owners[single])
        return self._boundary

    def _hull_tree(self):
        if self._hull is None:
            facets, owners = self.boundary_facets()
            a = self.vertices[facets[:, 0]]
            b = self.vertices[facets[:, -1]]
            half = 0.5 * float(np.max(np.linalg.norm(b - a, axis=1)))
            self._hull = (cKDTree(0.5 * (a + b)), a, b, half)
        return self._hull

    def project_to_hull(self, points):
        """Nearest point of the mesh boundary for each point, with its owning simplex.

        Candidate facets are those whose midpoint lies within the nearest
        midpoint distance plus half the longest facet, which always
        contains the true nearest facet.

        Returns ``(projected, simplex, coords)``; coords are clipped to be
        nonnegative and renormalized.
        """
        pts = as_points(points, self.dim)
        _, owners = self.boundary_facets()
        tree, a, b, half = self._hull_tree()
        near, _ = tree.query(pts)
        cand = tree.query_ball_point(pts, near + half + 1e-12)
        counts = np.fromiter((len(c) for c in cand), dtype=np.int64, count=len(pts))
        fac = np.fromiter((f for c in cand for f in c), dtype=np.int64, count=int(counts.sum()))
        src = np.repeat(np.arange(len(pts)), counts)
        ab = b[fac] - a[fac]
        ab2 = np.einsum("fi,fi->f", ab, ab)
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.where(ab2 > 0, np.einsum("fi,fi->f", pts[src] - a[fac], ab) / ab2, 0.0)
        q = a[fac] + np.clip(t, 0.0, 1.0)[:, None] * ab
        dist = np.einsum("fi,fi->f", q - pts[src], q - pts[src])
        # lowest distance per point, ties to the lowest facet id
        order = np.lexsort((fac, dist, src))
        first = order[np.concatenate([[0], np.cumsum(counts)[:-1]])]
        proj = q[first]
        simplex = owners[fac[first]]
        lam = np.clip(self.barycentric_many(simplex, proj), 0.0, None)
        lam /= lam.sum(axis=1, keepdims=True)
        return proj, simplex, lam

    # -- derived quantities ------------------------------------------------

    def edges(self) -> np.ndarray:
        """Unique vertex pairs joined by a simplex edge, shape (E, 2)."""
        d = self.dim
        pairs = [self.simplices[:, [a, b]] for a in range(d + 1) for b in range(a + 1, d + 1)]
        return np.unique(np.sort(np.concatenate(pairs), axis=1), axis=0)

    def lumped_areas(self) -> np.ndarray:
        """Per-vertex share of the mesh volume (each simplex split evenly)."""
        share = np.repeat(self.volumes / (self.dim + 1), self.dim + 1)
        return np.bincount(self.simplices.ravel(), weights=share, minlength=self.n_vertices)

    def barycenters(self) -> np.ndarray:
        return self.vertices[self.simplices].mean(axis=1)

    def vertices_in_box(self, box) -> np.ndarray:
        """Boolean mask of vertices inside an axis-aligned box ``(lo0, hi0[, lo1, hi1])``."""
        box = np.asarray(box, dtype=float).reshape(self.dim, 2)
        v = self.vertices
        return np.all((v >= box[:, 0]) & (v <= box[:, 1]), axis=1)

    def to_csv(self, directory) -> None:
        """Write ``vertices.csv`` and ``simplices.csv`` into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        axes = ["x", "y"][: self.dim]
        with open(directory / "vertices.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", *axes])
            for i, row in enumerate(self.vertices):
                w.writerow([i, *(repr(float(c)) for c in row)])
        with open(directory / "simplices.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", *(f"v{m}" for m in range(self.dim + 1))])
            for s, row in enumerate(self.simplices):
                w.writerow([s, *row.tolist()])


@dataclass
class GridFunction:
    """Real values attached to the vertices of a mesh."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_vertices,):
            raise ValueError(
                f"expected {self.mesh.n_vertices} vertex values, got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function values must be finite")

    @classmethod
    def sample(cls, mesh: Mesh, func) -> "GridFunction":
        """Pointwise samples ``func(x_i)`` with ``func`` vectorized over (V, d) arrays."""
        return cls(mesh, np.asarray(func(mesh.vertices), dtype=float).reshape(mesh.n_vertices))

    def __call__(self, points):
        return self.mesh.interpolate(self.values, points)


def interpolate(f: GridFunction, point):
    """I[f](x) for one point (returns a float) or many points (returns an array)."""
    out = f.mesh.interpolate(f.values, point)
    if np.ndim(point) == 0 or (f.mesh.dim == 2 and np.ndim(point) == 1):
        return float(out[0])
    return out


# -- builders ---------------------------------------------------------------


def build_interval_mesh(a: float, b: float, n: int) -> Mesh:
    """Uniform mesh of ``[a, b]`` with ``n`` segments."""
    if not n >= 1:
        raise MeshError(f"need at least one segment, got n={n}")
    if not b > a:
        raise MeshError(f"empty interval [{a}, {b}]")
    x = np.linspace(a, b, n + 1)
    segs = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return Mesh(x[:, None], segs)


def interval_mesh_for_dx(a: float, b: float, dx: float) -> Mesh:
    if not dx > 0:
        raise MeshError(f"resolution must be positive, got {dx}")
    return build_interval_mesh(a, b, int(math.ceil((b - a) / dx - 1e-9)))


def _grid_triangles(nx, ny, x, y):
    X, Y = np.meshgrid(x, y, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    v00 = (j * (nx + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    tris = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return verts, tris


def build_box_mesh(box, target_area: float) -> Mesh:
    """Structured right-triangle mesh of a rectangle.

    Parameters
    ----------
    box : sequence of 4 floats
        ``(x0, x1, y0, y1)``.
    target_area : float
        Upper bound on every triangle's area.
    """
    x0, x1, y0, y1 = map(float, box)
    if not target_area > 0:
        raise MeshError(f"target area must be positive, got {target_area}")
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"empty box {box}")
    s = math.sqrt(2.0 * target_area)
    nx = max(1, int(math.ceil((x1 - x0) / s - 1e-9)))
    ny = max(1, int(math.ceil((y1 - y0) / s - 1e-9)))
    verts, tris = _grid_triangles(nx, ny, np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1))
    return Mesh(verts, tris)


def box_mesh_for_dx(box, dx: float) -> Mesh:
    """Box mesh whose triangle diameters do not exceed ``dx``."""
    if not dx > 0:
        raise MeshError(f"resolution must be positive, got {dx}")
    # right isosceles triangles with legs s have diameter s*sqrt(2) and area s**2/2
    return build_box_mesh(box, dx * dx / 4.0)


# -- Triangle import --------------------------------------------------------


def _records(text, filename):
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _ints(tokens, lineno, filename, what):
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise TriangleParseError(filename, lineno, f"malformed {what}: {' '.join(tokens)!r}") from None


def import_triangle_mesh(node_text, ele_text) -> Mesh:
    """Build a mesh from Triangle ``.node`` and ``.ele`` file contents.

    Vertex order and connectivity are preserved. Zero- and one-based
    numbering are both accepted; the convention is taken from the first
    node id.

    Raises
    ------
    TriangleParseError
        With the offending file and line number.
    """
    nodes = _records(node_text, ".node")
    try:
        lineno, header = next(nodes)
    except StopIteration:
        raise TriangleParseError(".node", 0, "missing header") from None
    if len(header) < 2:
        raise TriangleParseError(".node", lineno, "header needs '<#vertices> <dim> [<#attrs> <#markers>]'")
    head = _ints(header, lineno, ".node", "header")
    n_nodes, dim = head[0], head[1]
    n_attr = head[2] if len(head) > 2 else 0
    n_mark = head[3] if len(head) > 3 else 0
    if dim != 2:
        raise TriangleParseError(".node", lineno, f"dimension must be 2, got {dim}")
    if n_nodes < 3 or n_attr < 0 or n_mark not in (0, 1):
        raise TriangleParseError(".node", lineno, "inconsistent header counts")

    ids = []
    coords = []
    for lineno, tok in nodes:
        if len(tok) != 1 + dim + n_attr + n_mark:
            raise TriangleParseError(
                ".node", lineno, f"expected {1 + dim + n_attr + n_mark} fields, got {len(tok)}"
            )
        ids.append(_ints(tok[:1], lineno, ".node", "node id")[0])
        try:
            coords.append([float(t) for t in tok[1 : 1 + dim]])
        except ValueError:
            raise TriangleParseError(".node", lineno, "malformed coordinates") from None
        last_node_line = lineno
    if len(ids) != n_nodes:
        raise TriangleParseError(".node", lineno, f"header declares {n_nodes} nodes, found {len(ids)}")
    base = ids[0]
    if base not in (0, 1) or ids != list(range(base, base + n_nodes)):
        raise TriangleParseError(".node", last_node_line, "node ids must be consecutive from 0 or 1")

    eles = _records(ele_text, ".ele")
    try:
        lineno, header = next(eles)
    except StopIteration:
        raise TriangleParseError(".ele", 0, "missing header") from None
    head = _ints(header, lineno, ".ele", "header")
    if len(head) < 2:
        raise TriangleParseError(".ele", lineno, "header needs '<#triangles> <nodes per triangle> [<#attrs>]'")
    n_tri, per_tri = head[0], head[1]
    n_tattr = head[2] if len(head) > 2 else 0
    if n_tri < 1 or per_tri not in (3, 6) or n_tattr < 0:
        raise TriangleParseError(".ele", lineno, "inconsistent header counts")
    tris = []
    for lineno, tok in eles:
        if len(tok) != 1 + per_tri + n_tattr:
            raise TriangleParseError(".ele", lineno, f"expected {1 + per_tri + n_tattr} fields, got {len(tok)}")
        row = _ints(tok[1:4], lineno, ".ele", "triangle")
        for v in row:
            if not base <= v < base + n_nodes:
                raise TriangleParseError(".ele", lineno, f"node {v} out of range")
        tris.append([v - base for v in row])
    if len(tris) != n_tri:
        raise TriangleParseError(".ele", lineno, f"header declares {n_tri} triangles, found {len(tris)}")
    return Mesh(np.array(coords), np.array(tris, dtype=np.int64))


def read_triangle_files(node_path, ele_path) -> Mesh:
    return import_triangle_mesh(Path(node_path).read_bytes(), Path(ele_path).read_bytes())


def write_triangle_files(mesh: Mesh, stem) -> None:
    """Write ``stem.node`` and ``stem.ele`` in Triangle's one-based format."""
    if mesh.dim != 2:
        raise MeshError("Triangle files hold 2-D meshes only")
    stem = Path(stem)
    with open(stem.with_suffix(".node"), "w") as fh:
        fh.write(f"{mesh.n_vertices}  2  0  0\n")
        for i, (x, y) in enumerate(mesh.vertices, start=1):
            fh.write(f"{i:5d}  {float(x)!r}  {float(y)!r}\n")
    with open(stem.with_suffix(".ele"), "w") as fh:
        fh.write(f"{mesh.n_simplices}  3  0\n")
        for t, (a, b, c) in enumerate(mesh.simplices + 1, start=1):
            fh.write(f"{t:5d}  {a:5d}  {b:5d}  {c:5d}\n")
