"""Polygonal meshes of rectangular domains.

Meshes are built by Cartesian tiling and optional seeded pairwise
agglomeration, which produces genuinely polygonal (non-quadrilateral)
elements while staying reproducible.  Faces are straight segments between
mesh vertices, classified as interior, Dirichlet or Neumann.  A plain-text
file format allows importing externally generated polygonal meshes.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class MeshError(ValueError):
    """Raised when mesh input data violates a mesh invariant."""


class FaceKind(enum.Enum):
    INTERIOR = "interior"
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


@dataclass(frozen=True)
class Face:
    """Straight mesh face between two vertices.

    ``endpoints`` are vertex indices in the traversal order of the plus
    element, so ``normal`` (unit length) points out of ``plus_element``.
    ``minus_element`` is None on boundary faces.  The minus-side normal of
    an interior face is exactly ``-normal``.
    """

    endpoints: tuple[int, int]
    kind: FaceKind
    plus_element: int
    minus_element: int | None
    normal: np.ndarray

    @property
    def is_boundary(self) -> bool:
        return self.minus_element is None


def _signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _centroid(pts: np.ndarray) -> np.ndarray:
    """Area centroid of a simple polygon (shoelace weights)."""
    xs, ys = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(xs, -1), np.roll(ys, -1)
    cross = xs * yn - xn * ys
    area = 0.5 * np.sum(cross)
    cx = np.sum((xs + xn) * cross) / (6.0 * area)
    cy = np.sum((ys + yn) * cross) / (6.0 * area)
    return np.array([cx, cy])


def _diameter(pts: np.ndarray) -> float:
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((diff ** 2).sum(-1)).max())


def _fan_cross_products(pts: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Cross products of consecutive (v_i - c, v_{i+1} - c) pairs.

    All strictly positive iff the centroid fan is a valid (counter-clockwise,
    non-overlapping) triangulation, i.e. the polygon is star-shaped with
    respect to ``center``.
    """
    d = pts - center
    dn = np.roll(d, -1, axis=0)
    return d[:, 0] * dn[:, 1] - d[:, 1] * dn[:, 0]


class PolyMesh:
    """Immutable polygonal mesh: vertices, CCW element loops, classified faces.

    Attributes
    ----------
    vertices : (nv, 2) float array
    elements : tuple of int arrays, each a CCW vertex-index loop
    faces : tuple of Face
    element_areas, element_centroids, element_diameters : per-element metrics
    mesh_size : h = max over element diameters
    merge_warning : True when agglomeration stopped before its target
    """

    def __init__(self, vertices, elements, boundary_kinds=None, merge_warning=False):
        vertices = np.asarray(vertices, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must be an (nv, 2) array")
        loops = []
        for loop in elements:
            arr = np.asarray(loop, dtype=np.int64)
            if arr.size < 3:
                raise MeshError("element loops need at least 3 vertices")
            if arr.min() < 0 or arr.max() >= len(vertices):
                raise MeshError("element loop references a missing vertex")
            if len(np.unique(arr)) != arr.size:
                raise MeshError("element loop repeats a vertex (non-simple polygon)")
            arr.setflags(write=False)
            loops.append(arr)

        self.vertices = vertices
        self.vertices.setflags(write=False)
        self.elements = tuple(loops)
        self.merge_warning = bool(merge_warning)

        areas, centroids, diameters = [], [], []
        for loop in self.elements:
            pts = vertices[loop]
            area = _signed_area(pts)
            if area <= 0.0:
                raise MeshError("element polygon is not counter-clockwise or degenerate")
            if not _is_simple(pts):
                raise MeshError("element polygon is self-intersecting")
            areas.append(area)
            centroids.append(_centroid(pts))
            diameters.append(_diameter(pts))
        self.element_areas = np.array(areas)
        self.element_centroids = np.array(centroids)
        self.element_diameters = np.array(diameters)
        for arr in (self.element_areas, self.element_centroids, self.element_diameters):
            arr.setflags(write=False)
        self.mesh_size = float(self.element_diameters.max())
        self.total_area = float(self.element_areas.sum())

        self.faces = tuple(self._build_faces(boundary_kinds))

    # -- construction ------------------------------------------------------

    def _build_faces(self, boundary_kinds):
        # First traversal of a directed edge defines the plus side; the CCW
        # partner element traverses the same segment in reverse.
        owner: dict[tuple[int, int], int] = {}
        for e, loop in enumerate(self.elements):
            for a, b in _loop_edges(loop):
                if (a, b) in owner:
                    raise MeshError("directed edge appears twice; elements overlap")
                owner[(a, b)] = e

        faces = []
        seen = set()
        for e, loop in enumerate(self.elements):
            for a, b in _loop_edges(loop):
                key = (min(a, b), max(a, b))
                if key in seen:
                    continue
                seen.add(key)
                minus = owner.get((b, a))
                d = self.vertices[b] - self.vertices[a]
                length = float(np.hypot(d[0], d[1]))
                if length <= 0.0:
                    raise MeshError("zero-length face")
                normal = np.array([d[1], -d[0]]) / length
                normal.setflags(write=False)
                if minus is None:
                    kind = FaceKind.DIRICHLET
                    if boundary_kinds is not None:
                        kind = boundary_kinds.get((a, b), boundary_kinds.get((b, a), kind))
                else:
                    kind = FaceKind.INTERIOR
                faces.append(Face((a, b), kind, e, minus, normal))
        return faces

    # -- queries -----------------------------------------------------------

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def element_points(self, e: int) -> np.ndarray:
        return self.vertices[self.elements[e]]

    def face_points(self, face: Face) -> np.ndarray:
        return self.vertices[np.asarray(face.endpoints)]

    def face_length(self, face: Face) -> float:
        p = self.face_points(face)
        return float(np.hypot(*(p[1] - p[0])))

    def face_midpoint(self, face: Face) -> np.ndarray:
        p = self.face_points(face)
        return 0.5 * (p[0] + p[1])

    def faces_of_kind(self, kind: FaceKind) -> list[Face]:
        return [f for f in self.faces if f.kind == kind]

    def __repr__(self):
        nb = sum(1 for f in self.faces if f.is_boundary)
        return (f"PolyMesh({self.n_elements} elements, {len(self.faces)} faces "
                f"({nb} boundary), h={self.mesh_size:.4g})")


def _loop_edges(loop):
    for i in range(len(loop)):
        yield int(loop[i]), int(loop[(i + 1) % len(loop)])


def _is_simple(pts: np.ndarray) -> bool:
    """Check that no two non-adjacent edges of the loop intersect."""
    k = len(pts)
    segs = [(pts[i], pts[(i + 1) % k]) for i in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            if j == i or (j - i) % k in (1, k - 1):
                continue
            if _segments_cross(*segs[i], *segs[j]):
                return False
    return True


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True
    return False


def build_cartesian_mesh(nx: int, ny: int, bounds=(0.0, 1.0, 0.0, 1.0)) -> PolyMesh:
    """Tile an axis-aligned rectangle with nx*ny quadrilateral elements.

    ``bounds`` is (xmin, xmax, ymin, ymax).  All boundary faces start out
    Dirichlet; use classify_boundary to tag a Neumann part.
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    x0, x1, y0, y1 = map(float, bounds)
    if not (x1 > x0 and y1 > y0):
        raise ValueError("domain rectangle has a zero-size axis")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    xv, yv = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([xv.ravel(), yv.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    loops = []
    for i in range(nx):
        for j in range(ny):
            loops.append([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)])
    return PolyMesh(vertices, loops)


def classify_boundary(mesh: PolyMesh, neumann_predicate) -> PolyMesh:
    """Retag boundary faces: Neumann where the predicate holds at the face
    midpoint, Dirichlet elsewhere.  Interior faces are untouched."""
    tags = {}
    for face in mesh.faces:
        if not face.is_boundary:
            continue
        mid = mesh.face_midpoint(face)
        kind = FaceKind.NEUMANN if neumann_predicate(mid) else FaceKind.DIRICHLET
        tags[face.endpoints] = kind
    return PolyMesh(mesh.vertices, mesh.elements, boundary_kinds=tags,
                    merge_warning=mesh.merge_warning)


# -- agglomeration ---------------------------------------------------------

def _merge_loops(loop_a, loop_b):
    """Union of two CCW loops sharing at least one full edge.

    Returns the merged loop as a list, or None when the union would not be
    a simple polygon (pinched vertex, enclosed hole, ...).
    """
    edges_a = list(_loop_edges(loop_a))
    edges_b = list(_loop_edges(loop_b))
    set_a = set(edges_a)
    set_b = set(edges_b)
    # Shared segments are traversed in opposite directions by the two loops.
    shared = {e for e in edges_a if (e[1], e[0]) in set_b}
    if not shared:
        return None
    drop = shared | {(b, a) for a, b in shared}
    succ = {}
    for a, b in edges_a + edges_b:
        if (a, b) in drop:
            continue
        if a in succ:
            return None  # vertex with two outgoing edges: pinched union
        succ[a] = b
    if not succ:
        return None
    start = next(iter(succ))
    merged = [start]
    cur = succ[start]
    while cur != start:
        merged.append(cur)
        if cur not in succ:
            return None
        cur = succ[cur]
        if len(merged) > len(succ):
            return None
    if len(merged) != len(succ):
        return None  # leftover edges form a second loop (hole)
    return merged


def _merge_is_legal(vertices, loop) -> bool:
    pts = vertices[np.asarray(loop, dtype=np.int64)]
    area = _signed_area(pts)
    if area <= 0.0:
        return False
    # Keep every element star-shaped w.r.t. its centroid so that the
    # centroid-fan quadrature of the DG space stays valid.
    cross = _fan_cross_products(pts, _centroid(pts))
    return bool(np.all(cross > 1e-12 * area))


def agglomerate(mesh: PolyMesh, target_elements: int, rng_seed: int) -> PolyMesh:
    """Merge neighbouring elements pairwise until ``target_elements`` remain.

    Pairs are chosen greedily in a seeded-random order; merges that would
    create a non-simple or non-star-shaped polygon are skipped.  If no legal
    merge remains before the target is reached, the current mesh is returned
    with ``merge_warning`` set.  Deterministic for a fixed seed.
    """
    if not 1 <= target_elements <= mesh.n_elements:
        raise ValueError("target_elements must be in [1, n_elements]")
    if target_elements == mesh.n_elements:
        return mesh

    rng = np.random.default_rng(rng_seed)
    loops: dict[int, list[int]] = {e: [int(v) for v in loop]
                                   for e, loop in enumerate(mesh.elements)}
    owner = {}
    for e, loop in loops.items():
        for edge in _loop_edges(loop):
            owner[edge] = e

    def neighbors_of(e):
        out = set()
        for a, b in _loop_edges(loops[e]):
            o = owner.get((b, a))
            if o is not None and o != e:
                out.add(o)
        return sorted(out)

    n_alive = len(loops)
    stalled = False
    while n_alive > target_elements:
        alive = sorted(loops)
        merged_any = False
        for e in rng.permutation(alive):
            e = int(e)
            if e not in loops:
                continue
            nbrs = neighbors_of(e)
            if not nbrs:
                continue
            for j in rng.permutation(nbrs):
                j = int(j)
                merged = _merge_loops(loops[e], loops[j])
                if merged is None or not _merge_is_legal(mesh.vertices, merged):
                    continue
                for victim in (e, j):
                    for edge in _loop_edges(loops[victim]):
                        owner.pop(edge, None)
                    del loops[victim]
                loops[min(e, j)] = merged
                for edge in _loop_edges(merged):
                    owner[edge] = min(e, j)
                n_alive -= 1
                merged_any = True
                break
            if merged_any:
                break
        if not merged_any:
            stalled = True
            break

    tags = {f.endpoints: f.kind for f in mesh.faces if f.is_boundary}
    out = PolyMesh(mesh.vertices, [loops[k] for k in sorted(loops)],
                   boundary_kinds=tags, merge_warning=stalled)
    if abs(out.total_area - mesh.total_area) > 1e-12 * mesh.total_area:
        raise MeshError("agglomeration failed to conserve total area")
    return out


# -- plain-text mesh files -------------------------------------------------

def write_mesh(mesh: PolyMesh, path) -> None:
    """Write the plain-text format: header ``NV NE``, NV vertex lines
    ``x y``, NE element lines ``k i1 ... ik`` (0-based vertex loops), then
    one tag line ``a b D|N`` per boundary face."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_elements}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for loop in mesh.elements:
            fh.write(" ".join([str(len(loop))] + [str(int(v)) for v in loop]) + "\n")
        for face in mesh.faces:
            if face.is_boundary:
                tag = "N" if face.kind == FaceKind.NEUMANN else "D"
                fh.write(f"{face.endpoints[0]} {face.endpoints[1]} {tag}\n")


def read_mesh(path) -> PolyMesh:
    """Read the plain-text format written by write_mesh.

    Boundary-tag lines are optional; untagged boundary faces default to
    Dirichlet.  Vertex indices are 0-based.
    """
    with open(path) as fh:
        tokens = [line.split() for line in fh if line.strip()]
    if not tokens:
        raise MeshError(f"empty mesh file: {path}")
    try:
        nv, ne = int(tokens[0][0]), int(tokens[0][1])
    except (ValueError, IndexError) as exc:
        raise MeshError(f"bad mesh header in {path}") from exc
    if len(tokens) < 1 + nv + ne:
        raise MeshError(f"truncated mesh file: {path}")
    vertices = np.array([[float(t[0]), float(t[1])] for t in tokens[1:1 + nv]])
    loops = []
    for t in tokens[1 + nv:1 + nv + ne]:
        k = int(t[0])
        if len(t) != k + 1:
            raise MeshError("element line length does not match its vertex count")
        loops.append([int(v) for v in t[1:]])
    tags = {}
    for t in tokens[1 + nv + ne:]:
        if len(t) != 3 or t[2] not in ("D", "N"):
            raise MeshError(f"bad boundary tag line: {' '.join(t)}")
        kind = FaceKind.NEUMANN if t[2] == "N" else FaceKind.DIRICHLET
        tags[(int(t[0]), int(t[1]))] = kind
    return PolyMesh(vertices, loops, boundary_kinds=tags)
