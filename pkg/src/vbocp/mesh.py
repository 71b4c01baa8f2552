"""Triangular meshes with tagged boundaries and the movable control region.

Two built-in geometries are provided: a 2x1 channel whose top/bottom
boundary carries a control segment that shrinks as ``mu_u`` grows
("test1"), and a unit square with a rectangular hole whose boundary
carries the control ("holed_square").  Meshes are immutable after
construction and safe to share across concurrent solves.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
CONTROL = "control"
VALID_TAGS = (DIRICHLET, NEUMANN, CONTROL)

TEST1 = "test1"
HOLED_SQUARE = "holed_square"

_TICK_TOL = 1e-9


class MeshError(ValueError):
    """Malformed mesh data or generator input incompatible with the geometry."""


@dataclass(frozen=True)
class Mesh:
    """2D conforming triangulation with boundary tags and region labels.

    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counter-clockwise
    boundary_edges : (nb, 2) int array of vertex pairs
    boundary_tags : (nb,) array of tag strings (dirichlet|neumann|control)
    triangle_regions : (nt,) int region label per triangle
    in_observation : (nt,) bool, triangles inside the observation domain
    geometry : "test1" | "holed_square" | "custom"
    control_interval : admissible open interval for mu_u
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    triangle_regions: np.ndarray
    in_observation: np.ndarray
    geometry: str = "custom"
    control_interval: tuple = (0.0, 1.0)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def edges_with_tag(self, tag):
        """Row indices into boundary_edges carrying the given tag."""
        return np.flatnonzero(self.boundary_tags == tag)

    def edge_midpoints(self, rows=None):
        e = self.boundary_edges if rows is None else self.boundary_edges[rows]
        return 0.5 * (self.vertices[e[:, 0]] + self.vertices[e[:, 1]])

    def edge_lengths(self, rows=None):
        e = self.boundary_edges if rows is None else self.boundary_edges[rows]
        d = self.vertices[e[:, 1]] - self.vertices[e[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def dirichlet_vertices(self):
        rows = self.edges_with_tag(DIRICHLET)
        return np.unique(self.boundary_edges[rows].ravel())


@dataclass(frozen=True)
class ControlIndicator:
    """Discrete indicator of the active control boundary at one mu_u.

    nodal_values is a length-n_vertices 0/1 vector; a vertex is marked
    iff it touches at least one active candidate edge.  active_edges are
    row indices into mesh.boundary_edges.
    """

    nodal_values: np.ndarray
    active_edges: np.ndarray


def triangle_areas(mesh):
    """Signed areas of all triangles (positive for CCW orientation)."""
    p = mesh.vertices
    t = mesh.triangles
    a = p[t[:, 1]] - p[t[:, 0]]
    b = p[t[:, 2]] - p[t[:, 0]]
    return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


def _merge_ticks(base, extra):
    ticks = np.sort(np.concatenate([base, np.asarray(extra, dtype=float)]))
    keep = np.ones(len(ticks), dtype=bool)
    keep[1:] = np.diff(ticks) > _TICK_TOL
    return ticks[keep]


def _unit_ticks(h, span):
    """Ticks 0, h, 2h, ..., span; requires 1/h to be an integer."""
    n = 1.0 / h
    if abs(n - round(n)) > _TICK_TOL * n:
        raise MeshError(
            f"h={h} does not hit the unit interface lines: 1/h must be an "
            "integer so that x1=1 and x2 in {0.2, 0.8} are mesh lines"
        )
    n = int(round(n))
    return np.arange(int(round(span * n)) + 1) / n


def _grid_triangulation(xt, yt, drop_cell=None):
    """Right-triangle split of the tensor grid xt x yt.

    drop_cell(cx, cy) -> bool removes cells (by center) from the mesh.
    Returns vertices, triangles (CCW) and a vertex renumbering that
    keeps only vertices referenced by some triangle.
    """
    nx, ny = len(xt), len(yt)
    xx, yy = np.meshgrid(xt, yt, indexing="ij")
    verts = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return i * ny + j

    tris = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            if drop_cell is not None:
                cx = 0.5 * (xt[i] + xt[i + 1])
                cy = 0.5 * (yt[j] + yt[j + 1])
                if drop_cell(cx, cy):
                    continue
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    tris = np.asarray(tris, dtype=int)

    used = np.unique(tris.ravel())
    renum = -np.ones(len(verts), dtype=int)
    renum[used] = np.arange(len(used))
    return verts[used], renum[tris]


def _topological_boundary(triangles):
    """Edges incident to exactly one triangle, oriented as in that triangle."""
    edges = {}
    for tri in triangles:
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            key = (min(a, b), max(a, b))
            edges.setdefault(key, []).append((a, b))
    boundary = []
    for key, occ in edges.items():
        if len(occ) == 1:
            boundary.append(occ[0])
        elif len(occ) > 2:
            raise MeshError(f"edge {key} shared by {len(occ)} triangles")
    return np.asarray(sorted(boundary), dtype=int)


def _near(x, val):
    return np.abs(x - val) < _TICK_TOL


def generate_test1_mesh(h):
    """Structured mesh of the channel [0,2]x[0,1].

    Region labels: 1 for the left unit square, 2 for the middle band
    [1,2]x[0.2,0.8], 3 for the top strip [1,2]x[0.8,1], 4 for the bottom
    strip [1,2]x[0,0.2].  The observation domain is regions 3 and 4.
    Tags: dirichlet on x1=0 and on the top/bottom edges with x1<=1,
    control candidates on the top/bottom edges with x1>=1, fixed Neumann
    on x1=2.

    The grid always contains the interface lines x2 in {0.2, 0.8} and
    the recasting split line x1 = 1.5 in addition to the multiples of h,
    so 1/h must be an integer.
    """
    if h <= 0:
        raise MeshError("h must be positive")
    xt = _merge_ticks(_unit_ticks(h, 2.0), [1.0, 1.5])
    yt = _merge_ticks(_unit_ticks(h, 1.0), [0.2, 0.8])
    verts, tris = _grid_triangulation(xt, yt)

    cent = verts[tris].mean(axis=1)
    regions = np.ones(len(tris), dtype=int)
    right = cent[:, 0] > 1.0
    regions[right & (cent[:, 1] > 0.8)] = 3
    regions[right & (cent[:, 1] < 0.2)] = 4
    regions[right & (cent[:, 1] >= 0.2) & (cent[:, 1] <= 0.8)] = 2

    bedges = _topological_boundary(tris)
    mids = 0.5 * (verts[bedges[:, 0]] + verts[bedges[:, 1]])
    tags = np.empty(len(bedges), dtype=object)
    on_horiz = _near(mids[:, 1], 0.0) | _near(mids[:, 1], 1.0)
    tags[_near(mids[:, 0], 0.0)] = DIRICHLET
    tags[on_horiz & (mids[:, 0] < 1.0)] = DIRICHLET
    tags[on_horiz & (mids[:, 0] > 1.0)] = CONTROL
    tags[_near(mids[:, 0], 2.0)] = NEUMANN
    if any(t is None for t in tags):
        raise MeshError("internal tagging gap in test1 generator")

    return Mesh(
        vertices=verts,
        triangles=tris,
        boundary_edges=bedges,
        boundary_tags=tags.astype(str),
        triangle_regions=regions,
        in_observation=(regions == 3) | (regions == 4),
        geometry=TEST1,
        control_interval=(0.0, 1.0),
    )


def generate_holed_square_mesh(h, hole=((0.4, 0.6), (0.4, 0.6))):
    """Unit square with a rectangular hole; the full hole boundary is a
    control candidate.

    hole is ((x_lo, x_hi), (y_lo, y_hi)) and must lie strictly inside
    the square.  Tags: dirichlet on the left/top/bottom outer edges,
    fixed Neumann on the right outer edge, control on the hole boundary.
    The observation domain is the whole meshed region.
    """
    (x_lo, x_hi), (y_lo, y_hi) = hole
    if not (x_lo < x_hi and y_lo < y_hi):
        raise MeshError("degenerate hole: empty rectangle")
    if not (0.0 < x_lo and x_hi < 1.0 and 0.0 < y_lo and y_hi < 1.0):
        raise MeshError("hole must lie strictly inside the unit square")
    if h <= 0:
        raise MeshError("h must be positive")

    xt = _merge_ticks(_unit_ticks(h, 1.0), [x_lo, x_hi])
    yt = _merge_ticks(_unit_ticks(h, 1.0), [y_lo, y_hi])

    def in_hole(cx, cy):
        return x_lo < cx < x_hi and y_lo < cy < y_hi

    verts, tris = _grid_triangulation(xt, yt, drop_cell=in_hole)

    bedges = _topological_boundary(tris)
    mids = 0.5 * (verts[bedges[:, 0]] + verts[bedges[:, 1]])
    tags = np.empty(len(bedges), dtype=object)
    outer = (
        _near(mids[:, 0], 0.0)
        | _near(mids[:, 0], 1.0)
        | _near(mids[:, 1], 0.0)
        | _near(mids[:, 1], 1.0)
    )
    tags[outer] = DIRICHLET
    tags[outer & _near(mids[:, 0], 1.0)] = NEUMANN
    tags[~outer] = CONTROL

    regions = np.zeros(len(tris), dtype=int)
    return Mesh(
        vertices=verts,
        triangles=tris,
        boundary_edges=bedges,
        boundary_tags=tags.astype(str),
        triangle_regions=regions,
        in_observation=np.ones(len(tris), dtype=bool),
        geometry=HOLED_SQUARE,
        control_interval=(x_lo, x_hi),
    )


def control_front(mesh, mu_u):
    """x1 threshold above which candidate edges are active."""
    lo, hi = mesh.control_interval
    if not (lo < mu_u < hi):
        raise MeshError(
            f"mu_u={mu_u} outside the admissible interval ({lo}, {hi}) "
            f"of geometry '{mesh.geometry}'"
        )
    if mesh.geometry == TEST1:
        return 1.0 + mu_u
    return mu_u


def control_indicator(mesh, mu_u, geometry=None):
    """Nodal 0/1 indicator of the active control boundary.

    An edge is active iff it is a control candidate whose midpoint x1
    lies at or beyond the moving front; a vertex is marked active iff it
    touches at least one active edge.
    """
    if geometry is not None and geometry != mesh.geometry:
        raise MeshError(f"mesh geometry is '{mesh.geometry}', not '{geometry}'")
    front = control_front(mesh, mu_u)
    cand = mesh.edges_with_tag(CONTROL)
    mids = mesh.edge_midpoints(cand)
    active = cand[mids[:, 0] >= front - _TICK_TOL]
    nodal = np.zeros(mesh.n_vertices)
    nodal[mesh.boundary_edges[active].ravel()] = 1.0
    return ControlIndicator(nodal_values=nodal, active_edges=active)


def control_thresholds(mesh):
    """Per-vertex deactivation threshold t: the nodal indicator at mu_u
    equals (mu_u <= t).  Vertices off the candidate boundary get -inf.

    Evaluating the indicator at a handful of vertices (interpolation
    rows) then costs O(1) per vertex instead of a mesh sweep.
    """
    cand = mesh.edges_with_tag(CONTROL)
    mids = mesh.edge_midpoints(cand)
    offset = 1.0 if mesh.geometry == TEST1 else 0.0
    t = np.full(mesh.n_vertices, -np.inf)
    for row, mid in zip(cand, mids[:, 0]):
        thr = mid - offset
        for v in mesh.boundary_edges[row]:
            t[v] = max(t[v], thr)
    return t


def indicator_from_thresholds(thresholds, mu_u):
    """Nodal indicator values from precomputed thresholds.

    Uses the same tolerance as the midpoint rule, so the result matches
    control_indicator(mesh, mu_u).nodal_values entrywise.
    """
    return (mu_u <= thresholds + _TICK_TOL).astype(float)


# ---------------------------------------------------------------------------
# text serialization
# ---------------------------------------------------------------------------

def save_mesh(mesh, path):
    """Write the line-oriented text format (header ``vbocp-mesh v1``)."""
    lines = ["vbocp-mesh v1", f"vertices {mesh.n_vertices}"]
    lines += [f"{float(x)!r} {float(y)!r}" for x, y in mesh.vertices]
    lines.append(f"triangles {mesh.n_triangles}")
    lines += [
        f"{t[0]} {t[1]} {t[2]} {r}"
        for t, r in zip(mesh.triangles, mesh.triangle_regions)
    ]
    lines.append(f"boundary {len(mesh.boundary_edges)}")
    lines += [
        f"{e[0]} {e[1]} {tag}"
        for e, tag in zip(mesh.boundary_edges, mesh.boundary_tags)
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path, geometry="custom", observed_regions=None, control_interval=None):
    """Load the text format and validate all mesh invariants.

    Clockwise triangles are reoriented; a zero-area triangle, an
    interior edge in the boundary section or an untagged boundary edge
    is a hard error.  The text format carries no observation flags:
    ``observed_regions`` selects them by region label (geometry
    defaults: regions {3, 4} for "test1", everything otherwise).
    """
    with open(path, encoding="utf-8") as fh:
        raw = [ln.strip() for ln in fh]
    lines = [ln for ln in raw if ln]
    if not lines or lines[0] != "vbocp-mesh v1":
        raise MeshError(f"{path}: missing 'vbocp-mesh v1' header")
    pos = 1

    def section(name):
        nonlocal pos
        parts = lines[pos].split()
        if len(parts) != 2 or parts[0] != name:
            raise MeshError(f"{path}: expected '{name} N' at line {pos + 1}")
        pos += 1
        return int(parts[1])

    nv = section("vertices")
    try:
        verts = np.array(
            [[float(v) for v in lines[pos + i].split()] for i in range(nv)]
        )
    except ValueError as exc:
        raise MeshError(f"{path}: bad vertex line: {exc}") from exc
    if verts.shape != (nv, 2):
        raise MeshError(f"{path}: vertex lines must hold two coordinates")
    pos += nv

    nt = section("triangles")
    tri_rows = []
    for i in range(nt):
        parts = lines[pos + i].split()
        if len(parts) != 4:
            raise MeshError(f"{path}: triangle lines need 'i j k region'")
        tri_rows.append([int(p) for p in parts])
    pos += nt
    tri_rows = np.asarray(tri_rows, dtype=int)
    tris, regions = tri_rows[:, :3], tri_rows[:, 3]

    nb = section("boundary")
    edges, tags = [], []
    for i in range(nb):
        parts = lines[pos + i].split()
        if len(parts) != 3 or parts[2] not in VALID_TAGS:
            raise MeshError(f"{path}: boundary lines need 'i j tag' with a valid tag")
        edges.append([int(parts[0]), int(parts[1])])
        tags.append(parts[2])
    edges = np.asarray(edges, dtype=int).reshape(nb, 2)
    tags = np.asarray(tags, dtype=str)

    if tris.min(initial=0) < 0 or tris.max(initial=-1) >= nv:
        raise MeshError(f"{path}: triangle vertex index out of range")

    # orientation fix-up: flip clockwise triangles, reject degenerate ones
    p = verts
    a = p[tris[:, 1]] - p[tris[:, 0]]
    b = p[tris[:, 2]] - p[tris[:, 0]]
    signed = 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    degenerate = np.abs(signed) < 1e-14
    if degenerate.any():
        raise MeshError(f"{path}: zero-area triangle {np.flatnonzero(degenerate)[0]}")
    flip = signed < 0
    tris[flip, 1], tris[flip, 2] = tris[flip, 2].copy(), tris[flip, 1].copy()

    topo = {tuple(sorted(e)) for e in _topological_boundary(tris).tolist()}
    seen = set()
    for e, tag in zip(edges, tags):
        key = tuple(sorted(e.tolist()))
        if key in seen:
            raise MeshError(f"{path}: boundary edge {key} tagged twice")
        seen.add(key)
        if key not in topo:
            raise MeshError(f"{path}: edge {key} tagged '{tag}' is not a boundary edge")
    missing = topo - seen
    if missing:
        raise MeshError(f"{path}: untagged boundary edge {sorted(missing)[0]}")

    if observed_regions is None:
        observed_regions = {3, 4} if geometry == TEST1 else set(np.unique(regions))
    in_obs = np.isin(regions, sorted(observed_regions))

    if control_interval is None:
        if geometry == TEST1:
            control_interval = (0.0, 1.0)
        else:
            cand = edges[tags == CONTROL]
            if len(cand):
                xs = 0.5 * (verts[cand[:, 0], 0] + verts[cand[:, 1], 0])
                control_interval = (float(xs.min()), float(xs.max()))
            else:
                control_interval = (0.0, 1.0)

    return Mesh(
        vertices=verts,
        triangles=tris,
        boundary_edges=edges,
        boundary_tags=tags,
        triangle_regions=regions,
        in_observation=in_obs,
        geometry=geometry,
        control_interval=tuple(control_interval),
    )


def mesh_digest(mesh):
    """SHA-256 of the canonical text serialization, for provenance metadata."""
    lines = ["vbocp-mesh v1", f"vertices {mesh.n_vertices}"]
    lines += [f"{float(x)!r} {float(y)!r}" for x, y in mesh.vertices]
    lines += [
        f"{t[0]} {t[1]} {t[2]} {r}"
        for t, r in zip(mesh.triangles, mesh.triangle_regions)
    ]
    lines += [
        f"{e[0]} {e[1]} {tag}"
        for e, tag in zip(mesh.boundary_edges, mesh.boundary_tags)
    ]
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()
