"""Marker lattice on the sensing face and the 7x9x2 displacement observation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .geometry import GeometryError, TetMesh, top_face_nodes

ROWS, COLS = 7, 9


@dataclass(frozen=True)
class MarkerMapping:
    """Per-marker node neighbours and weights.

    Rows run along the pad's short (y) axis, columns along the long (x) axis.
    ``sensor_frame`` holds the two tangent axes followed by the outward normal,
    one per row, so ``sensor_frame @ d`` gives (u_x, u_y, u_n).
    """

    marker_rest: np.ndarray  # (7, 9, 3)
    neighbors: np.ndarray  # (63, k) node ids
    weights: np.ndarray  # (63, k)
    sensor_frame: np.ndarray = field(default_factory=lambda: np.eye(3))

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]


@dataclass
class MarkerField:
    u: np.ndarray  # (7, 9, 2)
    frame_id: int = 0
    timestamp: float = 0.0
    normal: np.ndarray | None = None  # (7, 9), diagnostics only

    def __post_init__(self):
        self.u = np.asarray(self.u, float)
        if self.u.shape != (ROWS, COLS, 2):
            raise ValueError(f"marker field must be {ROWS}x{COLS}x2, got {self.u.shape}")
        if not np.all(np.isfinite(self.u)):
            raise ValueError("marker field has non-finite entries")

    @classmethod
    def zeros(cls, frame_id=0, timestamp=0.0) -> "MarkerField":
        return cls(np.zeros((ROWS, COLS, 2)), frame_id, timestamp)

    def max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.u, axis=-1)))


def marker_lattice(lo, hi, z: float) -> np.ndarray:
    """Uniform 7x9 lattice inset one cell from the face rectangle [lo, hi]."""
    xs = lo[0] + (np.arange(COLS) + 1) * (hi[0] - lo[0]) / (COLS + 1)
    ys = lo[1] + (np.arange(ROWS) + 1) * (hi[1] - lo[1]) / (ROWS + 1)
    gx, gy = np.meshgrid(xs, ys)  # (7, 9)
    return np.stack([gx, gy, np.full_like(gx, z)], axis=-1)


def knn_weights(points: np.ndarray, nodes: np.ndarray, k: int, eps: float = 1e-12, rtol: float = 1e-9):
    """Inverse-distance weights over the ``k`` nearest nodes.

    Nodes tied with the k-th nearest are all kept so the mapping inherits
    the mesh's mirror symmetry; rows are padded with zero-weight entries
    to a common width. A point that coincides with a node gets weight 1
    on it.
    """
    points = np.atleast_2d(points)
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(nodes) < k:
        raise GeometryError(f"need at least {k} surface nodes, have {len(nodes)}")
    d = np.linalg.norm(points[:, None, :] - nodes[None, :, :], axis=-1)
    order = np.argsort(d, axis=1, kind="stable")
    ds = np.take_along_axis(d, order, axis=1)
    keep = ds <= ds[:, k - 1 : k] * (1 + rtol) + eps
    width = int(keep.sum(axis=1).max())
    order, ds, keep = order[:, :width], ds[:, :width], keep[:, :width]
    hit = ds[:, 0] <= eps
    w = np.where(keep, 1.0 / np.maximum(ds, eps), 0.0)
    w[hit] = 0.0
    w[hit, 0] = 1.0
    w /= w.sum(axis=1, keepdims=True)
    return order, w


def init_marker_mapping(mesh: TetMesh, rest=None, k: int = 4) -> MarkerMapping:
    """Map the 7x9 lattice on the pad's top face to its k nearest top nodes."""
    rest = np.asarray(mesh.vertices if rest is None else rest, float)
    top = top_face_nodes(mesh)
    pts = rest[top]
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    markers = marker_lattice(lo, hi, float(hi[2]))
    local, w = knn_weights(markers.reshape(-1, 3), pts, k)
    return MarkerMapping(markers, top[local], w)


def marker_displacements(mapping: MarkerMapping, x, rest, frame_id: int = 0, timestamp: float = 0.0) -> MarkerField:
    disp = np.asarray(x, float) - np.asarray(rest, float)
    d3 = np.einsum("mk,mki->mi", mapping.weights, disp[mapping.neighbors])
    local = d3 @ mapping.sensor_frame.T
    u = local[:, :2].reshape(ROWS, COLS, 2)
    return MarkerField(u, frame_id, timestamp, local[:, 2].reshape(ROWS, COLS))


def _stack(fields) -> np.ndarray:
    arr = [f.u if isinstance(f, MarkerField) else np.asarray(f, float) for f in fields]
    return np.stack(arr) if arr else np.zeros((0, ROWS, COLS, 2))


def frame_errors(a, b) -> np.ndarray:
    """Squared Frobenius distance per frame."""
    A, B = _stack(a), _stack(b)
    if A.shape != B.shape:
        raise ValueError(f"field sequences differ in shape: {A.shape} vs {B.shape}")
    return np.sum((A - B) ** 2, axis=(1, 2, 3))


def field_mse(a, b) -> float:
    """Mean over frames (and sequences) of the per-frame squared distance.

    ``a`` and ``b`` are either frame sequences or lists of sequences; all
    sequences must share the same frame count.
    """
    if len(a) and isinstance(a[0], (list, tuple)):
        if len(a) != len(b):
            raise ValueError("different number of sequences")
        errs = [frame_errors(sa, sb) for sa, sb in zip(a, b)]
        if len({len(e) for e in errs}) > 1:
            raise ValueError("sequences differ in frame count")
        return float(np.mean(np.concatenate(errs))) if errs else 0.0
    errs = frame_errors(a, b)
    if errs.size == 0:
        raise ValueError("empty field sequences")
    return float(np.mean(errs))


def closest_frame_match(sim, real):
    """For each real frame, the sim frame with least squared error (earliest on ties)."""
    S, R = _stack(sim), _stack(real)
    if len(S) == 0 or len(R) == 0:
        raise ValueError("both sequences must be nonempty")
    if S.shape[1:] != R.shape[1:]:
        raise ValueError("grid shapes differ")
    cost = np.sum((R[:, None] - S[None, :]) ** 2, axis=(2, 3, 4))
    pairing = np.argmin(cost, axis=1)
    return pairing, float(np.mean(cost[np.arange(len(R)), pairing]))


# ---------------------------------------------------------------------------
# CSV

CSV_HEADER = ["frame", "row", "col", "ux", "uy"]


def fields_to_csv(fields, model: str | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow((["model"] if model else []) + CSV_HEADER)
    for f in fields:
        for r in range(ROWS):
            for c in range(COLS):
                row = [f.frame_id, r, c, f"{f.u[r, c, 0]:.9g}", f"{f.u[r, c, 1]:.9g}"]
                w.writerow(([model] if model else []) + row)
    return buf.getvalue()


def write_fields_csv(path, fields, model: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(fields_to_csv(fields, model))


def read_fields_csv(path) -> list[MarkerField]:
    frames: dict[int, np.ndarray] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            fid = int(rec["frame"])
            u = frames.setdefault(fid, np.zeros((ROWS, COLS, 2)))
            u[int(rec["row"]), int(rec["col"])] = float(rec["ux"]), float(rec["uy"])
    return [MarkerField(u, fid) for fid, u in sorted(frames.items())]
