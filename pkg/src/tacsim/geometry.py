"""Meshes, mesh IO, indenter shells and signed distance grids.

Lengths are SI meters throughout. The gel pad is placed with its sensing
face on the plane ``z = 0`` and its fixed base at ``z = -thickness``.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .primitives import closest_point_triangle

DEFAULT_PAD_EXTENT = (0.032, 0.024, 0.005)


class GeometryError(ValueError):
    """Invalid mesh input or construction argument."""


def _tet_volumes(vertices, tets):
    v = vertices[tets]
    ds = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]], axis=2)
    return np.linalg.det(ds) / 6.0, ds


@dataclass(frozen=True, eq=False)
class TetMesh:
    vertices: np.ndarray
    tets: np.ndarray
    dirichlet: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    rest_volumes: np.ndarray = None
    inv_rest_shape: np.ndarray = None

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 3)
        tets = np.ascontiguousarray(self.tets, dtype=np.int64).reshape(-1, 4)
        if tets.size and (tets.min() < 0 or tets.max() >= len(vertices)):
            raise GeometryError("tet index out of range")
        vols, ds = _tet_volumes(vertices, tets)
        flip = vols < 0
        if flip.any():
            # swapping two vertices reverses orientation
            tets = tets.copy()
            tets[flip, 2], tets[flip, 3] = tets[flip, 3].copy(), tets[flip, 2].copy()
            vols, ds = _tet_volumes(vertices, tets)
        if np.any(vols <= 0):
            raise GeometryError(f"degenerate tet {int(np.argmin(vols))}")
        dirichlet = np.unique(np.asarray(self.dirichlet, dtype=np.int64))
        if dirichlet.size and (dirichlet[0] < 0 or dirichlet[-1] >= len(vertices)):
            raise GeometryError("dirichlet index out of range")
        for arr in (vertices, tets, dirichlet, vols):
            arr.setflags(write=False)
        inv = np.linalg.inv(ds)
        inv.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "tets", tets)
        object.__setattr__(self, "dirichlet", dirichlet)
        object.__setattr__(self, "rest_volumes", vols)
        object.__setattr__(self, "inv_rest_shape", inv)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def lumped_masses(self, rho: float) -> np.ndarray:
        """Per-node mass: a quarter of every incident tet's rest mass."""
        m = np.zeros(self.n_vertices)
        np.add.at(m, self.tets.ravel(), np.repeat(self.rest_volumes * rho / 4.0, 4))
        return m

    def free_mask(self) -> np.ndarray:
        mask = np.ones(self.n_vertices, dtype=bool)
        mask[self.dirichlet] = False
        return mask


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Triangle surface. ``triangles`` index into ``vertices``.

    For a gel surface ``vertices`` is the full tet-mesh vertex array and
    ``nodes`` lists the vertices that actually lie on the boundary.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray = None
    nodes: np.ndarray = None

    def __post_init__(self):
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "triangles", tris)
        if self.edges is None:
            object.__setattr__(self, "edges", unique_edges(tris))
        if self.nodes is None:
            object.__setattr__(self, "nodes", np.unique(tris))

    def open_edges(self) -> np.ndarray:
        """Edges not shared by exactly two triangles."""
        e = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq[counts != 2]

    def is_closed(self) -> bool:
        return len(self.open_edges()) == 0

    def transformed(self, rotation, translation) -> "SurfaceMesh":
        x = self.vertices @ np.asarray(rotation).T + np.asarray(translation)
        return SurfaceMesh(x, self.triangles, self.edges, self.nodes)


def unique_edges(triangles: np.ndarray) -> np.ndarray:
    e = np.sort(np.asarray(triangles)[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    if len(e) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(e, axis=0)


# ---------------------------------------------------------------------------
# gel pad

# corner index = i + 2 j + 4 k for the unit-cell corner (i, j, k)
_KUHN_TETS = []
for _perm in itertools.permutations((1, 2, 4)):
    _KUHN_TETS.append((0, _perm[0], _perm[0] + _perm[1], 7))


def build_gel_pad(extent=DEFAULT_PAD_EXTENT, resolution=(16, 12, 2)) -> TetMesh:
    """Structured box of ``resolution`` cells, 6 tets per cell.

    Cells in the upper x / y halves use the mirrored split so the mesh is
    symmetric under reflection through the pad's center planes. The bottom
    layer of vertices is fixed.
    """
    extent = tuple(float(e) for e in extent)
    resolution = tuple(int(r) for r in resolution)
    if len(extent) != 3 or len(resolution) != 3:
        raise GeometryError("extent and resolution need three components")
    if min(extent) <= 0:
        raise GeometryError(f"extent must be positive, got {extent}")
    if min(resolution) < 1:
        raise GeometryError(f"resolution must be >= 1, got {resolution}")
    nx, ny, nz = resolution
    lx, ly, lz = extent
    xs = np.linspace(-lx / 2, lx / 2, nx + 1)
    ys = np.linspace(-ly / 2, ly / 2, ny + 1)
    zs = np.linspace(-lz, 0.0, nz + 1)
    gz, gy, gx = np.meshgrid(zs, ys, xs, indexing="ij")
    vertices = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    def vid(i, j, k):
        return (k * (ny + 1) + j) * (nx + 1) + i

    tets = []
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                flip = (1 if 2 * i + 1 > nx else 0) | (2 if 2 * j + 1 > ny else 0)
                corners = []
                for c in range(8):
                    cc = c ^ flip
                    corners.append(vid(i + (cc & 1), j + ((cc >> 1) & 1), k + ((cc >> 2) & 1)))
                for t in _KUHN_TETS:
                    tets.append([corners[t[0]], corners[t[1]], corners[t[2]], corners[t[3]]])
    dirichlet = np.arange((ny + 1) * (nx + 1))
    return TetMesh(vertices, np.array(tets, dtype=np.int64), dirichlet)


# faces opposite each tet vertex, ordered outward for positively oriented tets
_TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])


def extract_surface(mesh: TetMesh) -> SurfaceMesh:
    """Boundary faces (faces owned by exactly one tet), oriented outward."""
    faces = mesh.tets[:, _TET_FACES].reshape(-1, 3)
    key = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    boundary = faces[counts[inverse.ravel()] == 1]
    return SurfaceMesh(mesh.vertices, boundary)


def top_face_nodes(mesh: TetMesh, tol: float = 1e-12) -> np.ndarray:
    z = mesh.vertices[:, 2]
    return np.flatnonzero(np.abs(z - z.max()) <= tol * max(1.0, abs(z.max())) + 1e-12)


# ---------------------------------------------------------------------------
# rigid indenter shells (local frame: flat pressing face at z = 0, body above)


def _prism(outline: np.ndarray, height: float) -> SurfaceMesh:
    """Extrude a convex-fan-able or strip outline into a closed prism.

    ``outline`` is a counter-clockwise polygon (as seen from +z).
    """
    n = len(outline)
    bottom = np.column_stack([outline, np.zeros(n)])
    top = np.column_stack([outline, np.full(n, height)])
    cb = np.array([[*outline.mean(axis=0), 0.0]])
    ct = np.array([[*outline.mean(axis=0), height]])
    verts = np.vstack([bottom, top, cb, ct])
    ib, it = 2 * n, 2 * n + 1
    tris = []
    for i in range(n):
        j = (i + 1) % n
        tris.append([ib, j, i])  # bottom faces -z
        tris.append([it, n + i, n + j])
        tris.append([i, j, n + j])
        tris.append([i, n + j, n + i])
    return SurfaceMesh(verts, np.array(tris))


def _strip_prism(inner: np.ndarray, outer: np.ndarray, height: float) -> SurfaceMesh:
    """Closed prism over the region between two polylines sharing endpoints.

    ``outer`` runs counter-clockwise from tip A to tip B, ``inner`` runs from
    tip A to tip B as well; both include the tips.
    """
    m = len(outer)
    assert len(inner) == m
    ring = np.vstack([outer, inner[-2:0:-1]])  # closed ccw boundary
    n = len(ring)
    verts2d = ring
    bottom = np.column_stack([verts2d, np.zeros(n)])
    top = np.column_stack([verts2d, np.full(n, height)])
    verts = np.vstack([bottom, top])
    # map inner interior index k (1..m-2) to ring index
    def inner_id(k):
        if k == 0:
            return 0
        if k == m - 1:
            return m - 1
        return m + (m - 2 - k)

    tris = []
    for k in range(m - 1):
        o0, o1 = k, k + 1
        i0, i1 = inner_id(k), inner_id(k + 1)
        cand = [[o0, o1, i1], [o0, i1, i0]]
        for t in cand:
            if len(set(t)) == 3:
                tris.append(t[::-1])  # bottom cap faces -z
                tris.append([v + n for v in t])
    for i in range(n):
        j = (i + 1) % n
        tris.append([i, j, n + j])
        tris.append([i, n + j, n + i])
    return SurfaceMesh(verts, np.array(tris))


def make_indenter(shape: str, size: float = 0.008, height: float = 0.006, segments: int = 24) -> SurfaceMesh:
    """Closed rigid shell for ``cube | cylinder | moon | triangle``.

    The pressing face lies in the local plane ``z = 0`` centered on the
    origin; the body extends toward ``+z``.
    """
    s = float(size)
    if shape == "cube":
        h = s / 2
        outline = np.array([[-h, -h], [h, -h], [h, h], [-h, h]])
        return _prism(outline, height)
    if shape == "cylinder":
        ang = np.linspace(0, 2 * np.pi, segments, endpoint=False)
        outline = 0.5 * s * np.column_stack([np.cos(ang), np.sin(ang)])
        return _prism(outline, height)
    if shape == "triangle":
        ang = np.pi / 2 + np.array([0, 2 * np.pi / 3, 4 * np.pi / 3])
        r = s / np.sqrt(3)
        outline = r * np.column_stack([np.cos(ang), np.sin(ang)])
        return _prism(outline, height)
    if shape == "moon":
        # crescent: disk of radius R minus a disk of radius 0.9 R offset along +x
        r_out = 0.5 * s
        r_in = 0.9 * r_out
        off = 0.9 * r_out
        xt = (r_out**2 - r_in**2 + off**2) / (2 * off)
        yt = np.sqrt(r_out**2 - xt**2)
        a0 = np.arctan2(yt, xt)
        b0 = np.arctan2(yt, xt - off)
        ta = np.linspace(a0, 2 * np.pi - a0, segments)
        tb = np.linspace(b0, 2 * np.pi - b0, segments)
        outer = r_out * np.column_stack([np.cos(ta), np.sin(ta)])
        inner = np.column_stack([off + r_in * np.cos(tb), r_in * np.sin(tb)])
        inner[0], inner[-1] = outer[0], outer[-1]
        shift = np.array([np.vstack([outer, inner]).mean(axis=0)[0], 0.0])
        return _strip_prism(inner - shift, outer - shift, height)
    raise GeometryError(f"unknown indenter shape {shape!r}")


def make_icosphere(radius: float = 1.0, subdivisions: int = 2) -> SurfaceMesh:
    t = (1.0 + 5**0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return SurfaceMesh(np.array(verts) * radius, np.array(faces))


# ---------------------------------------------------------------------------
# file formats


def save_tet(path, mesh: TetMesh) -> None:
    lines = [f"tet {mesh.n_vertices} {len(mesh.tets)}"]
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [" ".join(str(int(i)) for i in t) for t in mesh.tets]
    if len(mesh.dirichlet):
        lines.append("fixed " + " ".join(str(int(i)) for i in mesh.dirichlet))
    Path(path).write_text("\n".join(lines) + "\n")


def load_tet(path, scale: float = 1.0) -> TetMesh:
    """Read the ASCII ``tet`` format. An optional trailing ``fixed`` line
    lists Dirichlet vertices; without it the lowest-z layer is fixed."""
    tokens = Path(path).read_text().split("\n")
    header = tokens[0].split()
    if len(header) != 3 or header[0] != "tet":
        raise GeometryError(f"{path}: bad header {tokens[0]!r}")
    nv, nt = int(header[1]), int(header[2])
    body = [ln for ln in tokens[1:] if ln.strip()]
    if len(body) < nv + nt:
        raise GeometryError(f"{path}: expected {nv} vertices and {nt} tets")
    verts = np.array([[float(v) for v in ln.split()] for ln in body[:nv]]) * scale
    tets = np.array([[int(v) for v in ln.split()] for ln in body[nv : nv + nt]])
    fixed = None
    for ln in body[nv + nt :]:
        if ln.startswith("fixed"):
            fixed = np.array([int(v) for v in ln.split()[1:]], dtype=np.int64)
    if fixed is None:
        z = verts[:, 2]
        fixed = np.flatnonzero(np.abs(z - z.min()) < 1e-9 * max(1.0, np.ptp(z)))
    return TetMesh(verts, tets, fixed)


def load_obj(path, scale: float = 1.0) -> SurfaceMesh:
    verts, tris = [], []
    for ln in Path(path).read_text().splitlines():
        parts = ln.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(v) for v in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            for k in range(1, len(idx) - 1):
                tris.append([idx[0], idx[k], idx[k + 1]])
    return SurfaceMesh(np.array(verts) * scale, np.array(tris))


def save_obj(path, shell: SurfaceMesh) -> None:
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in shell.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in shell.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# signed distance grid


@dataclass(frozen=True, eq=False)
class SdfGrid:
    origin: np.ndarray
    spacing: float
    dims: tuple
    values: np.ndarray  # shape dims, indexed [i, j, k] with x fastest on disk

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if min(dims) < 2:
            raise GeometryError("SDF grid needs at least 2 samples per axis")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).reshape(dims))

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.spacing * (np.array(self.dims) - 1)

    def node(self, i, j, k) -> np.ndarray:
        return self.origin + self.spacing * np.array([i, j, k], dtype=float)


@dataclass(frozen=True)
class SdfSample:
    d: np.ndarray
    n: np.ndarray
    clamped: np.ndarray
    degenerate: np.ndarray

    @property
    def flagged(self) -> np.ndarray:
        return self.clamped | self.degenerate


def winding_number(shell: SurfaceMesh, points: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Generalized winding number (solid-angle sum / 4 pi) of a closed shell."""
    tri = shell.vertices[shell.triangles]
    out = np.zeros(len(points))
    for s in range(0, len(points), chunk):
        p = points[s : s + chunk, None, :]
        a = tri[None, :, 0] - p
        b = tri[None, :, 1] - p
        c = tri[None, :, 2] - p
        la, lb, lc = (np.linalg.norm(v, axis=2) for v in (a, b, c))
        det = np.einsum("pti,pti->pt", a, np.cross(b, c))
        den = (
            la * lb * lc
            + np.einsum("pti,pti->pt", a, b) * lc
            + np.einsum("pti,pti->pt", b, c) * la
            + np.einsum("pti,pti->pt", c, a) * lb
        )
        out[s : s + chunk] = 2.0 * np.arctan2(det, den).sum(axis=1) / (4 * np.pi)
    return out


def unsigned_distance(shell: SurfaceMesh, points: np.ndarray, chunk: int = 2048) -> np.ndarray:
    tri = shell.vertices[shell.triangles]
    nt = len(tri)
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        p = points[s : s + chunk]
        m = len(p)
        pp = np.repeat(p, nt, axis=0)
        a = np.tile(tri[:, 0], (m, 1))
        b = np.tile(tri[:, 1], (m, 1))
        c = np.tile(tri[:, 2], (m, 1))
        q, _, _ = closest_point_triangle(pp, a, b, c)
        out[s : s + chunk] = np.linalg.norm(pp - q, axis=1).reshape(m, nt).min(axis=1)
    return out


def build_sdf_grid(shell: SurfaceMesh, dims=(32, 32, 32), padding: float = 0.002) -> SdfGrid:
    """Dense signed distance samples of a closed shell (negative inside)."""
    dims = tuple(int(d) for d in dims)
    if min(dims) < 8:
        raise GeometryError("SDF grid dims must be >= 8 per axis")
    bad = shell.open_edges()
    if len(bad):
        a, b = bad[0]
        raise GeometryError(f"shell is not watertight: open edge ({a}, {b})")
    lo = shell.vertices.min(axis=0) - padding
    hi = shell.vertices.max(axis=0) + padding
    spacing = float(np.max((hi - lo) / (np.array(dims) - 1)))
    center = 0.5 * (lo + hi)
    origin = center - 0.5 * spacing * (np.array(dims) - 1)
    axes = [origin[i] + spacing * np.arange(dims[i]) for i in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    dist = unsigned_distance(shell, pts)
    inside = winding_number(shell, pts) > 0.5
    values = np.where(inside, -dist, dist).reshape(dims)
    return SdfGrid(origin, spacing, dims, values)


def _trilinear(grid: SdfGrid, pts: np.ndarray) -> np.ndarray:
    g = (pts - grid.origin) / grid.spacing
    dims = np.array(grid.dims)
    i0 = np.clip(np.floor(g).astype(np.int64), 0, dims - 2)
    f = g - i0
    v = grid.values
    out = np.zeros(len(pts))
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1 - f[:, 2]
                out += wx * wy * wz * v[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
    return out


def sdf_query(grid: SdfGrid, points) -> SdfSample:
    """Trilinear distance and normalized central-difference normal.

    Points outside the grid box are clamped onto it and flagged. A zero
    gradient yields a flagged sample with ``n = 0``; callers skip those.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    lo, hi = grid.origin, grid.upper
    clamped_pts = np.clip(pts, lo, hi)
    clamped = np.any(clamped_pts != pts, axis=1)
    d = _trilinear(grid, clamped_pts)
    eps = 0.5 * grid.spacing
    grad = np.zeros_like(clamped_pts)
    for ax in range(3):
        e = np.zeros(3)
        e[ax] = eps
        plus = np.clip(clamped_pts + e, lo, hi)
        minus = np.clip(clamped_pts - e, lo, hi)
        span = plus[:, ax] - minus[:, ax]
        with np.errstate(divide="ignore", invalid="ignore"):
            grad[:, ax] = np.where(span > 0, (_trilinear(grid, plus) - _trilinear(grid, minus)) / span, 0.0)
    norm = np.linalg.norm(grad, axis=1)
    degenerate = norm < 1e-12
    n = np.where(degenerate[:, None], 0.0, grad / np.where(degenerate, 1.0, norm)[:, None])
    return SdfSample(d, n, clamped, degenerate)


def sdf_gradient(grid: SdfGrid, points) -> np.ndarray:
    """Unnormalized central-difference gradient (for eikonal checks)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    eps = 0.5 * grid.spacing
    grad = np.zeros_like(pts)
    for ax in range(3):
        e = np.zeros(3)
        e[ax] = eps
        grad[:, ax] = (_trilinear(grid, pts + e) - _trilinear(grid, pts - e)) / (2 * eps)
    return grad


def save_sdf(path, grid: SdfGrid) -> None:
    """Binary cache: ``SDF1``, dims (3 x int32), origin (3 x f64), spacing
    (f64), then float32 values with x varying fastest."""
    with open(path, "wb") as fh:
        fh.write(b"SDF1")
        fh.write(struct.pack("<3i", *grid.dims))
        fh.write(struct.pack("<3d", *grid.origin))
        fh.write(struct.pack("<d", grid.spacing))
        fh.write(np.asarray(grid.values, dtype="<f4").transpose(2, 1, 0).tobytes())


def load_sdf(path) -> SdfGrid:
    raw = Path(path).read_bytes()
    if raw[:4] != b"SDF1":
        raise GeometryError(f"{path}: not an SDF1 file")
    dims = struct.unpack_from("<3i", raw, 4)
    origin = struct.unpack_from("<3d", raw, 16)
    (spacing,) = struct.unpack_from("<d", raw, 40)
    vals = np.frombuffer(raw, dtype="<f4", offset=48, count=int(np.prod(dims)))
    vals = vals.reshape(dims[2], dims[1], dims[0]).transpose(2, 1, 0).astype(float)
    return SdfGrid(np.array(origin), spacing, dims, vals)
