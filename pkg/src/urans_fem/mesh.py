"""Triangular meshes: GMSH v2.2 ingestion, structured generators, wall distance.

Meshes are immutable after construction. Derived connectivity (unique edges,
triangle-to-edge maps, P2 node coordinates) is computed lazily and cached.
"""
from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, TextIO

import numpy as np

NOSLIP_TAG = 1

# Offset-circles domain: unit disk minus a disk of radius 0.1 centred at (1/2, 0).
OUTER_RADIUS = 1.0
INNER_RADIUS = 0.1
INNER_CENTER = (0.5, 0.0)
OUTER_TAG = 1
INNER_TAG = 2


class MeshFormatError(ValueError):
    """Malformed or unsupported GMSH input; ``lineno`` is 1-based."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation with tagged boundary segments.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise
    boundary_edges : (nb, 2) int array of vertex indices
    boundary_tags : (nb,) int array, physical tag per boundary edge
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    name: str = field(default="mesh", compare=False)

    def __post_init__(self):
        for arr in (self.vertices, self.triangles, self.boundary_edges, self.boundary_tags):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def domain_area(self) -> float:
        return float(math.fsum(self.signed_areas))

    @cached_property
    def diameters(self) -> np.ndarray:
        """Longest edge length per triangle."""
        p = self.vertices[self.triangles]
        lengths = np.stack(
            [np.linalg.norm(p[:, (i + 2) % 3] - p[:, (i + 1) % 3], axis=1) for i in range(3)],
            axis=1,
        )
        return lengths.max(axis=1)

    @property
    def h_max(self) -> float:
        return float(self.diameters.max())

    @property
    def h_min(self) -> float:
        return float(self.diameters.min())

    @property
    def size_ratio(self) -> float:
        """min/max element diameter; quasi-uniformity metadata only."""
        return self.h_min / self.h_max

    @cached_property
    def _edge_data(self):
        # local edge i is opposite local vertex i
        t = self.triangles
        pairs = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1).reshape(-1, 2)
        pairs = np.sort(pairs, axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        return edges, inverse.reshape(-1, 3)

    @property
    def edges(self) -> np.ndarray:
        """Unique edges as sorted vertex pairs."""
        return self._edge_data[0]

    @property
    def triangle_edges(self) -> np.ndarray:
        """(nt, 3) edge index of the edge opposite each local vertex."""
        return self._edge_data[1]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    @cached_property
    def p2_nodes(self) -> np.ndarray:
        """Quadratic Lagrange nodes: vertices followed by edge midpoints."""
        return np.vstack([self.vertices, self.edge_midpoints])

    def edge_index(self, pairs: np.ndarray) -> np.ndarray:
        """Edge indices for vertex pairs; raises KeyError for non-edges."""
        pairs = np.sort(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=1)
        nv = self.n_vertices
        keys = self.edges[:, 0] * nv + self.edges[:, 1]
        query = pairs[:, 0] * nv + pairs[:, 1]
        pos = np.searchsorted(keys, query)
        pos = np.minimum(pos, len(keys) - 1)
        bad = keys[pos] != query
        if np.any(bad):
            raise KeyError(f"not mesh edges: {pairs[bad][:5].tolist()}")
        return pos

    def tagged_edges(self, tags: Iterable[int]) -> np.ndarray:
        mask = np.isin(self.boundary_tags, list(tags))
        return self.boundary_edges[mask]

    def tagged_p2_nodes(self, tags: Iterable[int]) -> np.ndarray:
        """P2 node indices lying on boundary edges carrying any of ``tags``."""
        segs = self.tagged_edges(tags)
        if len(segs) == 0:
            return np.zeros(0, dtype=np.int64)
        mids = self.n_vertices + self.edge_index(segs)
        return np.unique(np.concatenate([segs.ravel(), mids]))

    def check(self) -> None:
        """Validate the structural invariants; raises ValueError."""
        if np.any(self.signed_areas <= 0):
            raise ValueError("triangle with nonpositive signed area")
        counts = np.bincount(self.triangle_edges.ravel(), minlength=self.n_edges)
        topo_boundary = self.edges[counts == 1]
        given = np.sort(self.boundary_edges, axis=1)
        if len(given):
            idx = self.edge_index(given)
            if np.any(counts[idx] != 1):
                raise ValueError("boundary edge shared by more than one triangle")
        if len(topo_boundary) != len(np.unique(given, axis=0)):
            raise ValueError("boundary edges do not cover the mesh boundary")
        degree = np.bincount(given.ravel(), minlength=self.n_vertices)
        if np.any(degree[np.unique(given)] != 2):
            raise ValueError("boundary edges do not form closed loops")


def _orient(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    triangles = triangles.copy()
    flip = area < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    return triangles


def make_mesh(vertices, triangles, boundary_edges, boundary_tags, name="mesh") -> Mesh:
    """Build a Mesh, reorienting triangles counterclockwise."""
    vertices = np.ascontiguousarray(vertices, dtype=float)[:, :2].copy()
    triangles = _orient(vertices, np.asarray(triangles, dtype=np.int64).reshape(-1, 3))
    boundary_edges = np.asarray(boundary_edges, dtype=np.int64).reshape(-1, 2).copy()
    boundary_tags = np.asarray(boundary_tags, dtype=np.int64).reshape(-1).copy()
    mesh = Mesh(vertices, triangles, boundary_edges, boundary_tags, name=name)
    if np.any(mesh.signed_areas <= 0):
        raise ValueError("degenerate triangle (zero area)")
    return mesh


# ---------------------------------------------------------------- GMSH v2.2

_LINE, _TRIANGLE, _POINT = 1, 2, 15


def parse_gmsh(source: str | os.PathLike | TextIO, name: str | None = None) -> Mesh:
    """Read a GMSH ASCII 2.2 mesh with 2-node lines and 3-node triangles.

    Point elements (type 15) are skipped. Boundary lines must carry a physical
    tag; it is the first element tag. Errors raise :class:`MeshFormatError`
    carrying the offending line number.
    """
    if isinstance(source, (str, os.PathLike)) and not (
        isinstance(source, str) and "\n" in source
    ):
        path = Path(source)
        name = name or path.stem
        with open(path) as fh:
            text = fh.read()
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
    lines = text.splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines):
            raw = lines[pos].strip()
            pos += 1
            if raw:
                return raw
        raise MeshFormatError("unexpected end of file", pos)

    node_ids: dict[int, int] = {}
    coords: list[tuple[float, float]] = []
    tris: list[tuple[int, int, int]] = []
    segs: list[tuple[int, int]] = []
    seg_tags: list[int] = []
    seen_format = False

    while True:
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            break
        header = lines[pos].strip()
        pos += 1
        lineno = pos
        if not header.startswith("$") or header.startswith("$End"):
            raise MeshFormatError(f"malformed section header {header!r}", lineno)
        section = header[1:]
        if section == "MeshFormat":
            parts = next_line().split()
            if not parts:
                raise MeshFormatError("empty $MeshFormat", pos)
            if parts[0] not in ("2.2", "2.2.0"):
                raise MeshFormatError(f"unsupported format version {parts[0]}", pos)
            if len(parts) > 1 and parts[1] != "0":
                raise MeshFormatError("binary GMSH files are not supported", pos)
            seen_format = True
        elif not seen_format:
            raise MeshFormatError(f"section ${section} before $MeshFormat", lineno)
        elif section == "Nodes":
            count = _int(next_line(), pos)
            for _ in range(count):
                parts = next_line().split()
                if len(parts) < 3:
                    raise MeshFormatError("node record needs id x y [z]", pos)
                try:
                    nid = int(parts[0])
                    xy = (float(parts[1]), float(parts[2]))
                except ValueError as exc:
                    raise MeshFormatError(f"bad node record: {exc}", pos) from None
                node_ids[nid] = len(coords)
                coords.append(xy)
        elif section == "Elements":
            count = _int(next_line(), pos)
            for _ in range(count):
                parts = next_line().split()
                try:
                    vals = [int(s) for s in parts]
                except ValueError:
                    raise MeshFormatError("non-integer element record", pos) from None
                if len(vals) < 3:
                    raise MeshFormatError("truncated element record", pos)
                etype, ntags = vals[1], vals[2]
                tags, nodes = vals[3 : 3 + ntags], vals[3 + ntags :]
                if etype == _POINT:
                    continue
                expected = {_LINE: 2, _TRIANGLE: 3}.get(etype)
                if expected is None:
                    raise MeshFormatError(f"unsupported element type {etype}", pos)
                if len(nodes) != expected:
                    raise MeshFormatError(
                        f"element type {etype} needs {expected} nodes, got {len(nodes)}", pos
                    )
                try:
                    local = [node_ids[n] for n in nodes]
                except KeyError as exc:
                    raise MeshFormatError(f"element references unknown node {exc.args[0]}", pos) from None
                if etype == _TRIANGLE:
                    tris.append(tuple(local))
                else:
                    if not tags:
                        raise MeshFormatError("boundary line without physical tag", pos)
                    segs.append(tuple(local))
                    seg_tags.append(tags[0])
        else:
            # skip unknown sections such as $PhysicalNames
            while True:
                raw = next_line()
                if raw == f"$End{section}":
                    break
            continue
        end = next_line()
        if end != f"$End{section}":
            raise MeshFormatError(f"expected $End{section}, found {end!r}", pos)

    if not seen_format:
        raise MeshFormatError("missing $MeshFormat section", 1)
    if not tris:
        raise MeshFormatError("mesh contains no triangles", len(lines))
    vertices = np.array(coords, dtype=float)
    triangles = np.array(tris, dtype=np.int64)
    # drop nodes not used by any triangle (e.g. geometry-only points)
    used = np.unique(triangles)
    if len(used) != len(vertices):
        remap = -np.ones(len(vertices), dtype=np.int64)
        remap[used] = np.arange(len(used))
        vertices = vertices[used]
        triangles = remap[triangles]
        segs_arr = remap[np.array(segs, dtype=np.int64).reshape(-1, 2)]
        if np.any(segs_arr < 0):
            raise MeshFormatError("boundary line references a node outside all triangles", len(lines))
    else:
        segs_arr = np.array(segs, dtype=np.int64).reshape(-1, 2)
    return make_mesh(vertices, triangles, segs_arr, seg_tags, name=name or "gmsh")


def _int(raw: str, lineno: int) -> int:
    try:
        return int(raw.split()[0])
    except (ValueError, IndexError):
        raise MeshFormatError(f"expected an integer count, got {raw!r}", lineno) from None


def write_gmsh(mesh: Mesh, dest: str | os.PathLike | TextIO | None = None) -> str:
    """Serialize to GMSH ASCII 2.2; returns the text and optionally writes it."""
    out = io.StringIO()
    out.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n")
    out.write(f"{mesh.n_vertices}\n")
    for i, (x, y) in enumerate(mesh.vertices, start=1):
        out.write(f"{i} {float(x)!r} {float(y)!r} 0\n")
    out.write("$EndNodes\n$Elements\n")
    out.write(f"{len(mesh.boundary_edges) + mesh.n_triangles}\n")
    eid = 1
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        out.write(f"{eid} 1 2 {tag} {tag} {a + 1} {b + 1}\n")
        eid += 1
    for a, b, c in mesh.triangles:
        out.write(f"{eid} 2 2 0 0 {a + 1} {b + 1} {c + 1}\n")
        eid += 1
    out.write("$EndElements\n")
    text = out.getvalue()
    if isinstance(dest, (str, os.PathLike)):
        Path(dest).write_text(text)
    elif dest is not None:
        dest.write(text)
    return text


# ---------------------------------------------------------------- generators

def build_structured_square(n: int) -> Mesh:
    """Unit square, n x n cells each split along the (0,0)-(1,1) diagonal.

    All boundary edges carry tag 1.
    """
    if n < 1:
        raise ValueError(f"subdivision count must be >= 1, got {n}")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    segs = []
    for i in range(n):
        segs.append((vid(i, 0), vid(i + 1, 0)))
        segs.append((vid(n, i), vid(n, i + 1)))
        segs.append((vid(n - i, n), vid(n - i - 1, n)))
        segs.append((vid(0, n - i), vid(0, n - i - 1)))
    return make_mesh(vertices, tris, segs, np.full(len(segs), NOSLIP_TAG), name=f"square{n}")


OFFSET_CIRCLES_GEO = """\
// Flow between offset circles: unit disk minus the disk of radius 0.1 at (1/2, 0).
// Usage: gmsh -2 -format msh22 -setnumber lc 0.0625 offset_circles.geo -o mesh.msh
DefineConstant[ lc = {{{lc!r}, Name "lc"}} ];
Point(1) = {{0, 0, 0, lc}};
Point(2) = {{1, 0, 0, lc}};
Point(3) = {{0, 1, 0, lc}};
Point(4) = {{-1, 0, 0, lc}};
Point(5) = {{0, -1, 0, lc}};
Circle(1) = {{2, 1, 3}};
Circle(2) = {{3, 1, 4}};
Circle(3) = {{4, 1, 5}};
Circle(4) = {{5, 1, 2}};
Point(6) = {{0.5, 0, 0, lc}};
Point(7) = {{0.6, 0, 0, lc}};
Point(8) = {{0.5, 0.1, 0, lc}};
Point(9) = {{0.4, 0, 0, lc}};
Point(10) = {{0.5, -0.1, 0, lc}};
Circle(5) = {{7, 6, 8}};
Circle(6) = {{8, 6, 9}};
Circle(7) = {{9, 6, 10}};
Circle(8) = {{10, 6, 7}};
Curve Loop(1) = {{1, 2, 3, 4}};
Curve Loop(2) = {{5, 6, 7, 8}};
Plane Surface(1) = {{1, 2}};
Physical Curve("outer", 1) = {{1, 2, 3, 4}};
Physical Curve("inner", 2) = {{5, 6, 7, 8}};
Physical Surface("fluid", 3) = {{1}};
Mesh.MshFileVersion = 2.2;
"""

_DATA = Path(__file__).parent / "data"


def offset_circles_geo(lc: float) -> str:
    """GMSH .geo recipe text for the offset-circles domain at target size lc."""
    return OFFSET_CIRCLES_GEO.format(lc=float(lc))


def mesh_key(lc: float) -> str:
    inv = f"{1.0 / lc:.4f}".rstrip("0").rstrip(".")
    return f"offset_circles_inv{inv}"


def _cache_dir() -> Path:
    root = os.environ.get("URANS_FEM_CACHE") or os.path.join(
        os.environ.get("XDG_CACHE_HOME", os.path.expanduser("~/.cache")), "urans_fem"
    )
    return Path(root)


def generate_offset_circles_msh(lc: float, dest: str | os.PathLike) -> Path:
    """Run the GMSH Python API on the shipped recipe; needs the ``gmsh`` module."""
    try:
        import gmsh
    except (ImportError, OSError) as exc:  # OSError: missing shared libraries
        raise RuntimeError(
            f"no shipped mesh for lc={lc:g} and the gmsh module is unavailable ({exc}); "
            f"export the .geo recipe (urans_fem.mesh.offset_circles_geo) with GMSH 2.2 format"
        ) from exc
    import tempfile

    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        geo = Path(tmp) / "offset_circles.geo"
        geo.write_text(offset_circles_geo(lc))
        gmsh.initialize()
        try:
            gmsh.option.setNumber("General.Terminal", 0)
            gmsh.option.setNumber("General.NumThreads", 1)
            gmsh.open(str(geo))
            gmsh.option.setNumber("Mesh.MshFileVersion", 2.2)
            gmsh.option.setNumber("Mesh.Binary", 0)
            gmsh.model.mesh.generate(2)
            gmsh.write(str(dest))
        finally:
            gmsh.finalize()
    return dest


def load_offset_circles(lc: float) -> Mesh:
    """Offset-circles mesh at target size lc: shipped file, cache, or GMSH."""
    key = mesh_key(lc)
    for folder in (_DATA / "meshes", _cache_dir()):
        path = folder / f"{key}.msh"
        if path.exists():
            return parse_gmsh(path, name=key)
    path = generate_offset_circles_msh(lc, _cache_dir() / f"{key}.msh")
    return parse_gmsh(path, name=key)


# ---------------------------------------------------------------- wall distance

@dataclass(frozen=True, eq=False)
class WallDistanceField:
    """Distance to the no-slip walls sampled at the P2 nodes of ``mesh``."""

    mesh: Mesh
    values: np.ndarray
    noslip_tags: tuple[int, ...]

    def __post_init__(self):
        self.values.setflags(write=False)


def point_segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray,
                           chunk: int = 4096) -> np.ndarray:
    """Distance from each point to the union of segments [a_j, b_j]."""
    points = np.asarray(points, dtype=float)
    d = b - a
    len2 = np.einsum("ij,ij->i", d, d)
    out = np.empty(len(points))
    for start in range(0, len(points), chunk):
        p = points[start : start + chunk]
        rel = p[:, None, :] - a[None, :, :]
        s = np.clip(np.einsum("pjk,jk->pj", rel, d) / len2, 0.0, 1.0)
        diff = rel - s[..., None] * d[None]
        out[start : start + chunk] = np.sqrt(np.einsum("pjk,pjk->pj", diff, diff).min(axis=1))
    return out


def offset_circles_distance(points: np.ndarray) -> np.ndarray:
    """Analytic wall distance min(r1 - |x|, |x - c| - r2), clipped at zero."""
    points = np.asarray(points, dtype=float)
    r = np.hypot(points[..., 0], points[..., 1])
    rc = np.hypot(points[..., 0] - INNER_CENTER[0], points[..., 1] - INNER_CENTER[1])
    return np.maximum(np.minimum(OUTER_RADIUS - r, rc - INNER_RADIUS), 0.0)


def compute_wall_distance(
    mesh: Mesh,
    noslip_tags: Iterable[int] = (NOSLIP_TAG,),
    analytic: Callable[[np.ndarray], np.ndarray] | None = None,
) -> WallDistanceField:
    """Wall distance at every P2 node.

    By default this is the exact distance to the polygonal no-slip boundary.
    ``analytic`` overrides it with a closed form (curved walls); nodes on
    tagged edges are set to zero either way.
    """
    tags = tuple(sorted(set(int(t) for t in noslip_tags)))
    segs = mesh.tagged_edges(tags)
    if len(segs) == 0:
        raise ValueError(f"no boundary edge carries a no-slip tag in {tags}")
    nodes = mesh.p2_nodes
    if analytic is None:
        values = point_segment_distance(nodes, mesh.vertices[segs[:, 0]], mesh.vertices[segs[:, 1]])
    else:
        values = np.maximum(np.asarray(analytic(nodes), dtype=float), 0.0)
    values[mesh.tagged_p2_nodes(tags)] = 0.0
    return WallDistanceField(mesh, values, tags)
