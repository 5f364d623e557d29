"""Triangle meshes: OFF parsing, writing and area-uniform point sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, InvalidMesh, ParseError


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise InvalidMesh("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def face_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    @property
    def area(self) -> float:
        return float(self.face_areas.sum())

    def cleaned(self) -> "TriangleMesh":
        """Drop zero-area faces (including ones with repeated vertices)."""
        keep = self.face_areas > 0
        return TriangleMesh(self.vertices, self.faces[keep])


def _content_lines(text):
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield no, line


def parse_off(text: str) -> TriangleMesh:
    lines = _content_lines(text)
    try:
        no, header = next(lines)
    except StopIteration:
        raise ParseError("empty file, expected OFF header", 1) from None
    if not header.startswith("OFF"):
        raise ParseError(f"expected OFF header, got {header[:20]!r}", no)
    rest = header[3:].split()
    if not rest:
        try:
            no, counts_line = next(lines)
        except StopIteration:
            raise ParseError("missing counts line", no + 1) from None
        rest = counts_line.split()
    try:
        counts = [int(t) for t in rest]
    except ValueError:
        raise ParseError(f"malformed counts line {' '.join(rest)!r}", no) from None
    if len(counts) != 3 or min(counts) < 0:
        raise ParseError("counts line must hold three nonnegative integers 'V F E'", no)
    nv, nf, _ = counts

    verts = np.empty((nv, 3))
    for i in range(nv):
        try:
            no, line = next(lines)
        except StopIteration:
            raise ParseError(f"expected {nv} vertices, file ended after {i}", no + 1) from None
        toks = line.split()
        if len(toks) < 3:
            raise ParseError(f"vertex line needs 3 coordinates, got {len(toks)}", no)
        try:
            xyz = [float(t) for t in toks[:3]]
        except ValueError:
            raise ParseError(f"bad vertex coordinate in {line!r}", no) from None
        if not all(math.isfinite(c) for c in xyz):
            raise ParseError("non-finite vertex coordinate", no)
        verts[i] = xyz

    tris = []
    for i in range(nf):
        try:
            no, line = next(lines)
        except StopIteration:
            raise ParseError(f"expected {nf} faces, file ended after {i}", no + 1) from None
        try:
            toks = [int(t) for t in line.split()]
        except ValueError:
            raise ParseError(f"bad face line {line!r}", no) from None
        if not toks or toks[0] < 3 or len(toks) < toks[0] + 1:
            raise ParseError(f"face line inconsistent with its vertex count: {line!r}", no)
        idx = toks[1:toks[0] + 1]
        if min(idx) < 0 or max(idx) >= nv:
            raise ParseError(f"face index out of range [0, {nv})", no)
        # fan triangulation around the first vertex
        tris.extend((idx[0], idx[j], idx[j + 1]) for j in range(1, len(idx) - 1))
    extra = next(lines, None)
    if extra is not None:
        raise ParseError("more lines than the counts line declares", extra[0])
    return TriangleMesh(verts, np.array(tris, dtype=np.int64).reshape(-1, 3))


def load_off_mesh(path) -> TriangleMesh:
    """Read an OFF file; polygons are fan-triangulated, ``#`` comments skipped."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InvalidArgument(f"cannot read {path}: {exc.strerror}") from exc
    return parse_off(text)


def format_off(mesh: TriangleMesh) -> str:
    out = ["OFF", f"{len(mesh.vertices)} {len(mesh.faces)} 0"]
    out += [" ".join(f"{c:.17g}" for c in v) for v in mesh.vertices]
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
    return "\n".join(out) + "\n"


def write_off(mesh: TriangleMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_off(mesh))


def normalize_mesh(mesh: TriangleMesh) -> TriangleMesh:
    """Centre at the area centroid and scale so the farthest vertex has radius 1."""
    mesh = mesh.cleaned()
    if len(mesh.faces) == 0:
        raise InvalidMesh("all faces are degenerate")
    areas = mesh.face_areas
    centroids = mesh.vertices[mesh.faces].mean(axis=1)
    centre = areas @ centroids / areas.sum()
    used = np.unique(mesh.faces)
    v = mesh.vertices - centre
    radius = np.max(np.linalg.norm(v[used], axis=1))
    return TriangleMesh(v / radius, mesh.faces)


def sample_mesh_points(mesh: TriangleMesh, n: int, seed, spec=None):
    """``n`` area-uniform surface points of the normalised mesh.

    A face is drawn with probability proportional to its area, then a point
    uniformly inside it via ``(1 - sqrt(u)) a + sqrt(u) (1 - v) b + sqrt(u) v c``.
    """
    from .manifold import ManifoldSpec, PointSet

    if int(n) != n or n < 1:
        raise InvalidArgument(f"n must be a positive integer, got {n!r}")
    norm = normalize_mesh(mesh)
    areas = norm.face_areas
    rng = np.random.default_rng(seed)
    face = rng.choice(len(areas), size=int(n), p=areas / areas.sum())
    u, v = rng.random(int(n)), rng.random(int(n))
    su = np.sqrt(u)
    a, b, c = (norm.vertices[norm.faces[face, i]] for i in range(3))
    pts = (1 - su)[:, None] * a + (su * (1 - v))[:, None] * b + (su * v)[:, None] * c
    spec = spec or ManifoldSpec.mesh_cloud(mesh)
    return PointSet(pts, spec, seed, None)


def sample_face_indices(mesh: TriangleMesh, n: int, seed) -> np.ndarray:
    """Faces chosen by ``sample_mesh_points`` for the same seed (cleaned indexing)."""
    areas = normalize_mesh(mesh).face_areas
    rng = np.random.default_rng(seed)
    return rng.choice(len(areas), size=int(n), p=areas / areas.sum())
