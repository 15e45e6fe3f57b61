"""Interface-matched triangulations of a Stokes/Darcy domain pair.

A mesh carries two tagged subdomains that share a polyline interface.
Edges are deduplicated, classified (interior per subdomain, interface,
outer boundary per subdomain) and oriented: every edge stores a unit
normal that points out of its first adjacent triangle, which for
interface edges is always the Stokes one, so the stored normal is the
Stokes-outward normal on the whole interface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = ["Mesh", "RectanglePair", "MeshFormatError", "generate_structured",
           "load_msh", "save_msh", "mesh_summary", "edge_geometry",
           "STOKES", "DARCY", "INTERIOR_S", "INTERIOR_D", "INTERFACE",
           "BOUNDARY_S", "BOUNDARY_D", "EDGE_CLASS_NAMES"]

STOKES = 0
DARCY = 1
SUBDOMAIN_NAMES = ("stokes", "darcy")

INTERIOR_S = 0
INTERIOR_D = 1
INTERFACE = 2
BOUNDARY_S = 3
BOUNDARY_D = 4
EDGE_CLASS_NAMES = ("interior_s", "interior_d", "interface",
                    "boundary_gamma_s", "boundary_gamma_d")


class MeshFormatError(ValueError):
    """Raised for malformed or unsupported mesh input."""


class Mesh:
    """Immutable conforming triangulation with subdomain tags.

    Parameters
    ----------
    vertices : (n_v, 2) float array
    triangles : (n_t, 3) int array, reoriented counterclockwise
    tri_tag : (n_t,) int array of STOKES / DARCY
    edge_names : dict, optional
        Maps a sorted vertex pair to a boundary group name such as
        "lid" or "wall" (used for boundary-condition lookup).
    interface_pairs : set, optional
        Sorted vertex pairs declared to lie on the interface; when given,
        the derived interface classification is checked against it.
    """

    def __init__(self, vertices, triangles, tri_tag, edge_names=None,
                 interface_pairs=None):
        vertices = np.asarray(vertices, dtype=float)
        triangles = np.asarray(triangles, dtype=np.int64)
        tri_tag = np.asarray(tri_tag, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshFormatError("vertices must be an (n, 2) array")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshFormatError("triangles must be an (n, 3) array")
        if len(tri_tag) != len(triangles):
            raise MeshFormatError("one subdomain tag per triangle required")

        # enforce counterclockwise orientation (positive signed area)
        p = vertices[triangles]
        signed = 0.5 * np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        flip = signed < 0
        triangles = triangles.copy()
        triangles[flip] = triangles[flip][:, [0, 2, 1]]
        signed = np.abs(signed)
        if np.any(signed <= 0):
            raise MeshFormatError("degenerate triangle with zero area")

        self.vertices = vertices
        self.triangles = triangles
        self.tri_tag = tri_tag
        self.tri_area = signed
        self._build_edges(edge_names or {}, interface_pairs)
        self._compute_geometry()
        for arr in (self.vertices, self.triangles, self.tri_tag,
                    self.tri_area, self.edges, self.tri_edges,
                    self.edge_tris, self.edge_class, self.edge_normal,
                    self.edge_tangent, self.edge_length, self.tri_diam):
            arr.setflags(write=False)
        self._locator = None

    # -- construction ---------------------------------------------------

    def _build_edges(self, edge_names, interface_pairs):
        n_t = len(self.triangles)
        edge_ids = {}
        edges = []
        tri_edges = np.empty((n_t, 3), dtype=np.int64)
        adjacency = []
        for t in range(n_t):
            tri = self.triangles[t]
            for j in range(3):
                pair = (tri[(j + 1) % 3], tri[(j + 2) % 3])
                key = (min(pair), max(pair))
                e = edge_ids.get(key)
                if e is None:
                    e = len(edges)
                    edge_ids[key] = e
                    edges.append(key)
                    adjacency.append([])
                adjacency[e].append(t)
                tri_edges[t, j] = e
        n_e = len(edges)
        self.edges = np.array(edges, dtype=np.int64)
        self.tri_edges = tri_edges

        edge_tris = np.full((n_e, 2), -1, dtype=np.int64)
        edge_class = np.empty(n_e, dtype=np.int64)
        tag = self.tri_tag
        for e, tris in enumerate(adjacency):
            if len(tris) > 2:
                raise MeshFormatError(f"edge {e} shared by {len(tris)} triangles")
            if len(tris) == 1:
                t0 = tris[0]
                edge_tris[e, 0] = t0
                edge_class[e] = BOUNDARY_S if tag[t0] == STOKES else BOUNDARY_D
            else:
                t0, t1 = sorted(tris)
                if tag[t0] == tag[t1]:
                    edge_class[e] = INTERIOR_S if tag[t0] == STOKES else INTERIOR_D
                    edge_tris[e] = (t0, t1)
                else:
                    edge_class[e] = INTERFACE
                    if tag[t0] != STOKES:
                        t0, t1 = t1, t0
                    edge_tris[e] = (t0, t1)  # Stokes side first
        self.edge_tris = edge_tris
        self.edge_class = edge_class

        self.edge_name = {}
        for key, name in edge_names.items():
            e = edge_ids.get((min(key), max(key)))
            if e is not None:
                self.edge_name[e] = name

        if interface_pairs is not None:
            declared = {(min(a, b), max(a, b)) for a, b in interface_pairs}
            derived = {tuple(self.edges[e])
                       for e in np.nonzero(edge_class == INTERFACE)[0]}
            missing = declared - derived
            if missing:
                raise MeshFormatError(
                    "non-matching interface: declared interface edge "
                    f"{sorted(missing)[0]} has no triangle pair across it")

        if not np.any(edge_class == INTERFACE):
            raise MeshFormatError("mesh has no interface edge between subdomains")

    def _compute_geometry(self):
        pa = self.vertices[self.edges[:, 0]]
        pb = self.vertices[self.edges[:, 1]]
        vec = pb - pa
        length = np.linalg.norm(vec, axis=1)
        if np.any(length <= 0):
            raise MeshFormatError("zero-length edge")
        tangent = vec / length[:, None]
        normal = np.column_stack([tangent[:, 1], -tangent[:, 0]])
        # orient out of the first adjacent triangle
        centroid = self.vertices[self.triangles[self.edge_tris[:, 0]]].mean(axis=1)
        mid = 0.5 * (pa + pb)
        outward = np.einsum("ij,ij->i", normal, mid - centroid) < 0
        normal[outward] *= -1.0
        self.edge_normal = normal
        self.edge_tangent = tangent
        self.edge_length = length

        p = self.vertices[self.triangles]
        sides = np.stack([np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
                          np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
                          np.linalg.norm(p[:, 0] - p[:, 2], axis=1)])
        self.tri_diam = sides.max(axis=0)

    # -- queries ----------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def h(self):
        """Largest triangle diameter."""
        return float(self.tri_diam.max())

    def subdomain_tris(self, tag):
        return np.nonzero(self.tri_tag == tag)[0]

    def edges_of_class(self, cls):
        return np.nonzero(self.edge_class == cls)[0]

    def tri_vertices(self, tri_ids):
        return self.vertices[self.triangles[tri_ids]]

    def barycentric(self, tri_id, points):
        """Barycentric coordinates of physical points within a triangle."""
        points = np.atleast_2d(points)
        v = self.vertices[self.triangles[tri_id]]
        T = np.column_stack([v[1] - v[0], v[2] - v[0]])
        lam12 = np.linalg.solve(T, (points - v[0]).T).T
        lam0 = 1.0 - lam12.sum(axis=1)
        return np.column_stack([lam0, lam12])

    def locate(self, points, tol=1e-10):
        """Triangle id containing each point (-1 outside), via bbox binning."""
        if self._locator is None:
            self._locator = _TriLocator(self)
        return self._locator.query(np.atleast_2d(points), tol)

    def local_edge_index(self, tri_id, edge_id):
        idx = np.nonzero(self.tri_edges[tri_id] == edge_id)[0]
        if len(idx) == 0:
            raise ValueError(f"edge {edge_id} not on triangle {tri_id}")
        return int(idx[0])


class _TriLocator:
    """Uniform-grid candidate lists for point-in-triangle queries."""

    def __init__(self, mesh):
        self.mesh = mesh
        p = mesh.vertices[mesh.triangles]
        self.lo = mesh.vertices.min(axis=0)
        self.hi = mesh.vertices.max(axis=0)
        n = max(1, int(np.sqrt(mesh.n_triangles / 2.0)))
        self.n = n
        self.cell = (self.hi - self.lo) / n
        self.cell[self.cell == 0] = 1.0
        self.bins = [[] for _ in range(n * n)]
        tlo = np.clip(((p.min(axis=1) - self.lo) / self.cell).astype(int), 0, n - 1)
        thi = np.clip(((p.max(axis=1) - self.lo) / self.cell).astype(int), 0, n - 1)
        for t in range(mesh.n_triangles):
            for ix in range(tlo[t, 0], thi[t, 0] + 1):
                for iy in range(tlo[t, 1], thi[t, 1] + 1):
                    self.bins[ix * n + iy].append(t)

    def query(self, points, tol):
        mesh = self.mesh
        out = np.full(len(points), -1, dtype=np.int64)
        idx = np.clip(((points - self.lo) / self.cell).astype(int), 0, self.n - 1)
        for i, pt in enumerate(points):
            for t in self.bins[idx[i, 0] * self.n + idx[i, 1]]:
                lam = mesh.barycentric(t, pt[None, :])[0]
                if lam.min() >= -tol:
                    out[i] = t
                    break
        return out


@dataclass(frozen=True)
class RectanglePair:
    """Axis-aligned Stokes rectangle stacked on a Darcy rectangle.

    The rectangles share the full horizontal edge y = y_interface; the
    base grid has nx columns and ny_stokes / ny_darcy rows per subdomain.
    """

    x0: float
    x1: float
    y_bottom: float
    y_interface: float
    y_top: float
    nx: int = 2
    ny_stokes: int = 2
    ny_darcy: int = 2

    def __post_init__(self):
        if not (self.x0 < self.x1):
            raise ValueError("x0 < x1 required")
        if not (self.y_bottom < self.y_interface < self.y_top):
            raise ValueError("y_bottom < y_interface < y_top required")
        if min(self.nx, self.ny_stokes, self.ny_darcy) < 1:
            raise ValueError("base grid counts must be positive")

    @classmethod
    def from_rectangles(cls, stokes, darcy, **grid):
        """Build from two (x0, x1, y0, y1) rectangles sharing one edge."""
        sx0, sx1, sy0, sy1 = stokes
        dx0, dx1, dy0, dy1 = darcy
        if (sx0, sx1) != (dx0, dx1) or sy0 != dy1:
            raise ValueError(
                "subdomain rectangles must share a full horizontal edge "
                "(identical x-range, Stokes bottom == Darcy top)")
        return cls(sx0, sx1, dy0, sy0, sy1, **grid)


def generate_structured(domain: RectanglePair, refine_level: int = 0) -> Mesh:
    """Uniform triangulation of a rectangle pair, matched at the interface.

    Each cell is split along its lower-left to upper-right diagonal;
    every refinement level doubles the grid in both directions.
    """
    if refine_level < 0:
        raise ValueError("refine_level must be >= 0")
    scale = 2 ** refine_level
    nx = domain.nx * scale
    ny_d = domain.ny_darcy * scale
    ny_s = domain.ny_stokes * scale
    xs = np.linspace(domain.x0, domain.x1, nx + 1)
    ys = np.concatenate([
        np.linspace(domain.y_bottom, domain.y_interface, ny_d + 1),
        np.linspace(domain.y_interface, domain.y_top, ny_s + 1)[1:],
    ])
    ny = ny_d + ny_s
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(ix, iy):
        return iy * (nx + 1) + ix

    tris, tags = [], []
    for iy in range(ny):
        tag = DARCY if iy < ny_d else STOKES
        for ix in range(nx):
            ll, lr = vid(ix, iy), vid(ix + 1, iy)
            ul, ur = vid(ix, iy + 1), vid(ix + 1, iy + 1)
            tris.append((ll, lr, ur))
            tris.append((ll, ur, ul))
            tags.extend((tag, tag))
    return Mesh(vertices, tris, tags)


# -- MSH input/output ---------------------------------------------------

_CLASS_FOR_NAME = {"stokes": STOKES, "darcy": DARCY}
_BOUNDARY_GROUPS = {"interface", "lid", "wall", "gamma_s", "gamma_d"}


def load_msh(path) -> Mesh:
    """Read a Gmsh MSH file (versions 2.2 and 4.1, ASCII, tri + line).

    Physical names "stokes" and "darcy" tag the subdomain surfaces;
    "interface" tags the interface polyline; any further named line
    groups (e.g. "lid", "wall") become boundary group names.
    """
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    sections = _split_sections(lines)
    if "MeshFormat" not in sections:
        raise MeshFormatError("missing $MeshFormat section")
    version = sections["MeshFormat"][0].split()[0]
    if version.startswith("2.2"):
        nodes, elements = _parse_msh22(sections)
    elif version.startswith("4.1"):
        nodes, elements = _parse_msh41(sections)
    else:
        raise MeshFormatError(f"unsupported MSH version {version}")
    phys_names = _parse_physical_names(sections)
    return _mesh_from_elements(nodes, elements, phys_names)


def _split_sections(lines):
    sections = {}
    name, body = None, []
    for ln in lines:
        if ln.startswith("$End"):
            sections[name] = body
            name, body = None, []
        elif ln.startswith("$"):
            name = ln[1:]
            body = []
        elif name is not None and ln:
            body.append(ln)
    return sections


def _parse_physical_names(sections):
    names = {}
    for ln in sections.get("PhysicalNames", [])[1:]:
        parts = ln.split(None, 2)
        if len(parts) < 3:
            continue
        dim, num = int(parts[0]), int(parts[1])
        names[(dim, num)] = parts[2].strip().strip('"').lower()
    return names


def _parse_msh22(sections):
    node_lines = sections.get("Nodes", [])
    if not node_lines:
        raise MeshFormatError("missing $Nodes section")
    n_nodes = int(node_lines[0].split()[0])
    nodes = {}
    for ln in node_lines[1:1 + n_nodes]:
        parts = ln.split()
        nodes[int(parts[0])] = (float(parts[1]), float(parts[2]))

    elem_lines = sections.get("Elements", [])
    if not elem_lines:
        raise MeshFormatError("missing $Elements section")
    n_elems = int(elem_lines[0].split()[0])
    elements = []
    for ln in elem_lines[1:1 + n_elems]:
        parts = [int(v) for v in ln.split()]
        etype, n_tags = parts[1], parts[2]
        phys = parts[3] if n_tags >= 1 else 0
        conn = parts[3 + n_tags:]
        elements.append((etype, phys, conn))
    return nodes, elements


def _parse_msh41(sections):
    # map (dim, entity tag) -> physical tag via $Entities
    ent_phys = {}
    ent_lines = sections.get("Entities", [])
    if ent_lines:
        counts = [int(v) for v in ent_lines[0].split()]
        i = 1
        for dim, count in enumerate(counts):
            for _ in range(count):
                parts = ent_lines[i].split()
                i += 1
                tag = int(parts[0])
                n_phys_at = 4 if dim == 0 else 7
                n_phys = int(parts[n_phys_at])
                if n_phys > 0:
                    ent_phys[(dim, tag)] = int(parts[n_phys_at + 1])

    node_lines = sections.get("Nodes", [])
    if not node_lines:
        raise MeshFormatError("missing $Nodes section")
    n_blocks = int(node_lines[0].split()[0])
    nodes = {}
    i = 1
    for _ in range(n_blocks):
        _, _, _, n_in_block = (int(v) for v in node_lines[i].split())
        i += 1
        tags = [int(node_lines[i + j]) for j in range(n_in_block)]
        i += n_in_block
        for j in range(n_in_block):
            parts = node_lines[i + j].split()
            nodes[tags[j]] = (float(parts[0]), float(parts[1]))
        i += n_in_block

    elem_lines = sections.get("Elements", [])
    if not elem_lines:
        raise MeshFormatError("missing $Elements section")
    n_blocks = int(elem_lines[0].split()[0])
    elements = []
    i = 1
    for _ in range(n_blocks):
        dim, ent, etype, n_in_block = (int(v) for v in elem_lines[i].split())
        i += 1
        phys = ent_phys.get((dim, ent), 0)
        for j in range(n_in_block):
            parts = [int(v) for v in elem_lines[i + j].split()]
            elements.append((etype, phys, parts[1:]))
        i += n_in_block
    return nodes, elements


def _mesh_from_elements(nodes, elements, phys_names):
    tag_order = sorted(nodes)
    renum = {tag: i for i, tag in enumerate(tag_order)}
    vertices = np.array([nodes[t] for t in tag_order])

    tris, tri_tags = [], []
    edge_names = {}
    interface_pairs = set()
    for etype, phys, conn in elements:
        if etype == 15:  # point element, carries no mesh content here
            continue
        if etype == 1:
            a, b = renum[conn[0]], renum[conn[1]]
            name = phys_names.get((1, phys), "")
            if name == "interface":
                interface_pairs.add((min(a, b), max(a, b)))
            elif name:
                edge_names[(min(a, b), max(a, b))] = name
        elif etype == 2:
            name = phys_names.get((2, phys), "")
            if name not in _CLASS_FOR_NAME:
                raise MeshFormatError(
                    "untagged triangle: every triangle needs a physical "
                    "group named 'stokes' or 'darcy'")
            tris.append([renum[c] for c in conn])
            tri_tags.append(_CLASS_FOR_NAME[name])
        else:
            raise MeshFormatError(
                f"unsupported element type {etype}; only 2-node lines and "
                "3-node triangles are readable")
    if not tris:
        raise MeshFormatError("no triangles in mesh file")
    return Mesh(vertices, tris, tri_tags, edge_names=edge_names,
                interface_pairs=interface_pairs or None)


def save_msh(mesh: Mesh, path):
    """Write MSH 2.2 ASCII with subdomain, interface and boundary groups."""
    group_names = {}

    def group(dim, name):
        key = (dim, name)
        if key not in group_names:
            group_names[key] = len(group_names) + 1
        return group_names[key]

    tri_phys = [group(2, SUBDOMAIN_NAMES[t]) for t in mesh.tri_tag]
    line_records = []
    for e in mesh.edges_of_class(INTERFACE):
        line_records.append((group(1, "interface"), *mesh.edges[e]))
    for e in np.nonzero((mesh.edge_class == BOUNDARY_S)
                        | (mesh.edge_class == BOUNDARY_D))[0]:
        name = mesh.edge_name.get(int(e))
        if name:
            line_records.append((group(1, name), *mesh.edges[e]))

    with open(path, "w") as fh:
        fh.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
        fh.write(f"$PhysicalNames\n{len(group_names)}\n")
        for (dim, name), num in sorted(group_names.items(), key=lambda kv: kv[1]):
            fh.write(f'{dim} {num} "{name}"\n')
        fh.write("$EndPhysicalNames\n")
        fh.write(f"$Nodes\n{mesh.n_vertices}\n")
        for i, (x, y) in enumerate(mesh.vertices, start=1):
            fh.write(f"{i} {x:.17g} {y:.17g} 0\n")
        fh.write("$EndNodes\n")
        n_elem = len(line_records) + mesh.n_triangles
        fh.write(f"$Elements\n{n_elem}\n")
        eid = 1
        for phys, a, b in line_records:
            fh.write(f"{eid} 1 2 {phys} {phys} {a + 1} {b + 1}\n")
            eid += 1
        for t in range(mesh.n_triangles):
            a, b, c = mesh.triangles[t] + 1
            fh.write(f"{eid} 2 2 {tri_phys[t]} {tri_phys[t]} {a} {b} {c}\n")
            eid += 1
        fh.write("$EndElements\n")


def edge_geometry(mesh: Mesh, edge_id: int):
    """Unit normal, unit tangent and length of one edge.

    The normal points out of the first adjacent triangle: outward for
    boundary edges, from the Stokes into the Darcy side for interface
    edges.
    """
    if not (0 <= edge_id < mesh.n_edges):
        raise IndexError(f"edge id {edge_id} out of range")
    return (mesh.edge_normal[edge_id].copy(),
            mesh.edge_tangent[edge_id].copy(),
            float(mesh.edge_length[edge_id]))


def mesh_summary(mesh: Mesh) -> dict:
    """JSON-serializable entity counts, classification tallies and h."""
    per_class = {EDGE_CLASS_NAMES[c]: int((mesh.edge_class == c).sum())
                 for c in range(len(EDGE_CLASS_NAMES))}
    return {
        "n_vertices": mesh.n_vertices,
        "n_triangles": mesh.n_triangles,
        "n_triangles_stokes": int((mesh.tri_tag == STOKES).sum()),
        "n_triangles_darcy": int((mesh.tri_tag == DARCY).sum()),
        "n_edges": mesh.n_edges,
        "edges_by_class": per_class,
        "h": mesh.h,
        "area_stokes": float(mesh.tri_area[mesh.tri_tag == STOKES].sum()),
        "area_darcy": float(mesh.tri_area[mesh.tri_tag == DARCY].sum()),
    }


def dump_summary(mesh: Mesh, path):
    with open(path, "w") as fh:
        json.dump(mesh_summary(mesh), fh, indent=2, sort_keys=True)
        fh.write("\n")
