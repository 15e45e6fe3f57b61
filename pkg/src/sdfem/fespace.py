"""Discrete spaces: bubble-enriched vector Lagrange velocity on the free-flow
subdomain, Raviart-Thomas velocity on the porous subdomain, discontinuous
pressures on the whole domain, and a scalar trace space on the interface.

Scalar bases are written in barycentric coordinates, so their point values
are mesh independent and gradients follow from the per-triangle barycentric
gradients.  The Raviart-Thomas spaces carry two layers: a local prebasis
(for order 1 the eight Bernstein-Bezier fields built from scaled edge
tangents) plus a per-triangle coefficient matrix mapping it onto the basis
dual to the global degrees of freedom (edge-normal moments against shifted
Legendre polynomials and interior moments), which is what makes assembled
fields normally continuous across edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, STOKES, DARCY, INTERFACE
from .quadrature import triangle_rule, edge_rule

__all__ = ["ElementFamily", "Space", "BasisEval", "FieldFunction",
           "build_space", "eval_basis", "interpolate",
           "stokes_velocity", "darcy_velocity", "pressure", "trace"]


@dataclass(frozen=True)
class ElementFamily:
    """Family tag plus the velocity polynomial degree k (2 or 3).

    kind is one of "stokes_velocity" (vector P_k plus cell bubbles),
    "darcy_velocity" (RT_{k-1}), "pressure" (discontinuous P_{k-1}),
    "trace" (discontinuous P_{k-1} on interface edges).
    """

    kind: str
    k: int

    def __post_init__(self):
        if self.kind not in ("stokes_velocity", "darcy_velocity",
                             "pressure", "trace"):
            raise ValueError(f"unknown element family {self.kind!r}")
        if self.k not in (2, 3):
            raise ValueError(f"k must be 2 or 3, got {self.k}")


def stokes_velocity(k=2):
    return ElementFamily("stokes_velocity", k)


def darcy_velocity(k=2):
    return ElementFamily("darcy_velocity", k)


def pressure(k=2):
    return ElementFamily("pressure", k)


def trace(k=2):
    return ElementFamily("trace", k)


@dataclass
class BasisEval:
    """Local basis values at reference points.

    values: (n_pts, n_basis) for scalar families, (n_pts, n_basis, 2) for
    vector families.  gradients: (n_pts, n_basis, 2) scalar or
    (n_pts, n_basis, 2, 2) vector with grad[c, m] = d v_c / d x_m.
    divergence: (n_pts, n_basis) for vector families, else None.
    """

    values: np.ndarray
    gradients: np.ndarray
    divergence: np.ndarray | None = None


# -- scalar bases in barycentric coordinates ------------------------------

def _p1_table(lam):
    vals = lam.copy()
    dlam = np.tile(np.eye(3), (len(lam), 1, 1))
    return vals, dlam


def _p2_table(lam, bubble):
    n = len(lam)
    nb = 7 if bubble else 6
    vals = np.empty((n, nb))
    dlam = np.zeros((n, nb, 3))
    for i in range(3):
        li = lam[:, i]
        vals[:, i] = li * (2.0 * li - 1.0)
        dlam[:, i, i] = 4.0 * li - 1.0
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        lj, lk = lam[:, j], lam[:, k]
        vals[:, 3 + i] = 4.0 * lj * lk
        dlam[:, 3 + i, j] = 4.0 * lk
        dlam[:, 3 + i, k] = 4.0 * lj
    if bubble:
        b = lam[:, 0] * lam[:, 1] * lam[:, 2]
        vals[:, 6] = 27.0 * b
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            dlam[:, 6, i] = 27.0 * lam[:, j] * lam[:, k]
    return vals, dlam


def _p3_table(lam, enrich):
    n = len(lam)
    nb = 12 if enrich else 10
    vals = np.empty((n, nb))
    dlam = np.zeros((n, nb, 3))
    for i in range(3):
        li = lam[:, i]
        vals[:, i] = 0.5 * li * (3.0 * li - 1.0) * (3.0 * li - 2.0)
        dlam[:, i, i] = 13.5 * li * li - 9.0 * li + 1.0
    col = 3
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        lj, lk = lam[:, j], lam[:, k]
        # node at 2/3 toward vertex j, then toward vertex k
        vals[:, col] = 4.5 * lj * lk * (3.0 * lj - 1.0)
        dlam[:, col, j] = 4.5 * lk * (6.0 * lj - 1.0)
        dlam[:, col, k] = 4.5 * lj * (3.0 * lj - 1.0)
        vals[:, col + 1] = 4.5 * lj * lk * (3.0 * lk - 1.0)
        dlam[:, col + 1, k] = 4.5 * lj * (6.0 * lk - 1.0)
        dlam[:, col + 1, j] = 4.5 * lk * (3.0 * lk - 1.0)
        col += 2
    b = lam[:, 0] * lam[:, 1] * lam[:, 2]
    vals[:, 9] = 27.0 * b
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        dlam[:, 9, i] = 27.0 * lam[:, j] * lam[:, k]
    if enrich:
        for e in range(2):
            le = lam[:, e]
            vals[:, 10 + e] = 81.0 * b * le
            for i in range(3):
                j, k = (i + 1) % 3, (i + 2) % 3
                dlam[:, 10 + e, i] = 81.0 * le * lam[:, j] * lam[:, k]
            dlam[:, 10 + e, e] += 81.0 * b
    return vals, dlam


def scalar_basis_table(kind, k, lam):
    """Values and barycentric derivatives of the scalar local basis.

    Returns (vals (n, nb), dlam (n, nb, 3)).  For "stokes_scalar" the
    basis is nodal Lagrange plus the cell bubbles; "pressure" is plain
    P_{k-1} Lagrange.
    """
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    if kind == "stokes_scalar":
        return _p2_table(lam, True) if k == 2 else _p3_table(lam, True)
    if kind == "pressure":
        return _p1_table(lam) if k == 2 else _p2_table(lam, False)
    raise ValueError(kind)


def tri_linear_geometry(mesh: Mesh, tris):
    """Barycentric gradients (n, 3, 2) and areas (n,) for given triangles."""
    p = mesh.vertices[mesh.triangles[tris]]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    inv = np.empty((len(p), 2, 2))
    inv[:, 0, 0] = d2[:, 1] / det
    inv[:, 0, 1] = -d2[:, 0] / det
    inv[:, 1, 0] = -d1[:, 1] / det
    inv[:, 1, 1] = d1[:, 0] / det
    grad = np.empty((len(p), 3, 2))
    grad[:, 1] = inv[:, 0]
    grad[:, 2] = inv[:, 1]
    grad[:, 0] = -inv[:, 0] - inv[:, 1]
    return grad, 0.5 * np.abs(det)


def physical_scalar_grads(dlam, grad_lam):
    """Chain rule: (n_q, nb, 3) x (n_t, 3, 2) -> (n_t, n_q, nb, 2)."""
    return np.einsum("qbi,tid->tqbd", dlam, grad_lam)


# -- Raviart-Thomas prebases ----------------------------------------------

# RT1 Bernstein-Bezier fields: term lists (sign, lambda factors, edge index)
# over scaled edge tangents |e_j| t_j; leading three are divided by 2.
_RT1_TERMS = (
    ((1.0, (1,), 2), (-1.0, (2,), 1)),
    ((1.0, (2,), 0), (-1.0, (0,), 2)),
    ((1.0, (0,), 1), (-1.0, (1,), 0)),
    ((2.0, (2,), 1), (2.0, (1,), 2)),
    ((2.0, (2,), 0), (2.0, (0,), 2)),
    ((2.0, (1,), 0), (2.0, (0,), 1)),
    ((2.0, (0, 1), 2), (-2.0, (0, 2), 1)),
    ((2.0, (0, 2), 1), (-2.0, (1, 2), 0)),
)


def _edge_vectors(mesh, tris):
    """Scaled tangents |e_j| t_j, i.e. the vector along edge opposite vertex j."""
    p = mesh.vertices[mesh.triangles[tris]]
    ev = np.empty_like(p)
    for j in range(3):
        ev[:, j] = p[:, (j + 2) % 3] - p[:, (j + 1) % 3]
    return ev


def rt_prebasis_eval(mesh: Mesh, tris, lam, k, want_grads=False):
    """Evaluate the local RT_{k-1} prebasis on a batch of triangles.

    `lam` holds barycentric coordinates, either (n_q, 3) shared across the
    batch or (n_t, n_q, 3) per triangle.  Returns (values
    (n_t, n_q, nb, 2), divs (n_t, n_q, nb)) and, when requested,
    gradients (n_t, n_q, nb, 2, 2).
    """
    tris = np.atleast_1d(tris)
    lam = np.asarray(lam, dtype=float)
    if lam.ndim == 1:
        lam = lam[None, :]
    if lam.ndim == 2:
        lam = np.broadcast_to(lam, (len(tris),) + lam.shape)
    if k == 2:
        return _rt1_eval(mesh, tris, lam, want_grads)
    return _rt2_eval(mesh, tris, lam, want_grads)


def _rt1_eval(mesh, tris, lam, want_grads):
    n_t, n_q = lam.shape[:2]
    ev = _edge_vectors(mesh, tris)
    grad_lam, area = tri_linear_geometry(mesh, tris)
    inv2a = 1.0 / (2.0 * area)
    vals = np.zeros((n_t, n_q, 8, 2))
    divs = np.zeros((n_t, n_q, 8))
    grads = np.zeros((n_t, n_q, 8, 2, 2)) if want_grads else None
    for b, terms in enumerate(_RT1_TERMS):
        for sign, factors, e in terms:
            dprod = np.zeros((n_t, n_q, 3))
            if len(factors) == 1:
                prod = lam[:, :, factors[0]]
                dprod[:, :, factors[0]] = 1.0
            else:
                a_, b_ = factors
                prod = lam[:, :, a_] * lam[:, :, b_]
                dprod[:, :, a_] = lam[:, :, b_]
                dprod[:, :, b_] = lam[:, :, a_]
            coef = sign * inv2a  # (n_t,)
            vec = ev[:, e]       # (n_t, 2)
            vals[:, :, b, :] += (coef[:, None, None]
                                 * prod[:, :, None] * vec[:, None, :])
            gp = np.einsum("tqi,tid->tqd", dprod, grad_lam)  # grad of product
            divs[:, :, b] += coef[:, None] * np.einsum("tqd,td->tq", gp, vec)
            if want_grads:
                grads[:, :, b] += (coef[:, None, None, None]
                                   * vec[:, None, :, None] * gp[:, :, None, :])
    return (vals, divs, grads) if want_grads else (vals, divs)


def _rt2_eval(mesh, tris, lam, want_grads):
    n_t, n_q = lam.shape[:2]
    grad_lam, _ = tri_linear_geometry(mesh, tris)
    p2_vals, p2_dlam = _p2_table(lam.reshape(-1, 3), False)
    p2_vals = p2_vals.reshape(n_t, n_q, 6)
    p2_dlam = p2_dlam.reshape(n_t, n_q, 6, 3)
    p2_grads = np.einsum("tqbi,tid->tqbd", p2_dlam, grad_lam)
    verts = mesh.vertices[mesh.triangles[tris]]
    pts = np.einsum("tqj,tjd->tqd", lam, verts)
    rel = pts - verts.mean(axis=1)[:, None, :]  # (n_t, n_q, 2)

    nb = 15
    vals = np.zeros((n_t, n_q, nb, 2))
    divs = np.zeros((n_t, n_q, nb))
    grads = np.zeros((n_t, n_q, nb, 2, 2)) if want_grads else None
    for c in range(2):
        sl = slice(6 * c, 6 * c + 6)
        vals[:, :, sl, c] = p2_vals
        divs[:, :, sl] = p2_grads[:, :, :, c]
        if want_grads:
            grads[:, :, sl, c, :] = p2_grads
    # radial fields (x - x_c) q with q in {l0^2, l0 l1, l1^2}
    qs = [(0, 0), (0, 1), (1, 1)]
    for m, (i, j) in enumerate(qs):
        q = lam[:, :, i] * lam[:, :, j]
        dq = np.zeros((n_t, n_q, 3))
        dq[:, :, i] += lam[:, :, j]
        dq[:, :, j] += lam[:, :, i]
        gq = np.einsum("tqi,tid->tqd", dq, grad_lam)
        b = 12 + m
        vals[:, :, b, :] = rel * q[:, :, None]
        divs[:, :, b] = 2.0 * q + np.einsum("tqd,tqd->tq", rel, gq)
        if want_grads:
            grads[:, :, b] = (np.eye(2)[None, None] * q[:, :, None, None]
                              + rel[:, :, :, None] * gq[:, :, None, :])
    return (vals, divs, grads) if want_grads else (vals, divs)


def local_edge_lam(mesh, tris, local_edge, s):
    """Barycentric points along a local edge at global edge parameters s.

    The global parameterization runs from the low-index endpoint of the
    edge to the high-index one; the returned array is (n_t, n_s, 3).
    """
    tris = np.atleast_1d(tris)
    eids = mesh.tri_edges[tris, local_edge]
    # local tail of edge j is vertex (j+1)%3; flip when it is not the
    # low-index endpoint anchoring the global parameterization
    flip = mesh.triangles[tris, (local_edge + 1) % 3] != mesh.edges[eids, 0]
    s_loc = np.where(flip[:, None], 1.0 - s[None, :], s[None, :])
    lam = np.zeros((len(tris), len(s), 3))
    lam[:, :, (local_edge + 1) % 3] = 1.0 - s_loc
    lam[:, :, (local_edge + 2) % 3] = s_loc
    return lam


# -- shifted Legendre on [0, 1] for edge moments ---------------------------

def legendre01(m, s):
    s = np.asarray(s, dtype=float)
    if m == 0:
        return np.ones_like(s)
    if m == 1:
        return 2.0 * s - 1.0
    if m == 2:
        return 6.0 * s * s - 6.0 * s + 1.0
    raise ValueError(f"edge moment order {m} not supported")


# -- the Space container ----------------------------------------------------

class Space:
    """A finite element space over a mesh subregion.

    Attributes
    ----------
    family : ElementFamily
    cells : entity ids (triangles, or interface edges for the trace space)
    cell_dofs : (n_cells, n_local) global dof ids
    n_dofs : int
    dof_kind / dof_point / dof_entity / dof_component / dof_sub :
        per-dof metadata (kind string, geometric anchor, owning entity id,
        vector component or -1, slot such as a moment index)
    dual_coef : (n_cells, nb, nb) prebasis-to-dual map, RT families only
    """

    def __init__(self, family, mesh, cells, cell_dofs, n_dofs, dof_kind,
                 dof_point, dof_entity, dof_component, dof_sub,
                 dual_coef=None, n_scalar=None):
        self.family = family
        self.mesh = mesh
        self.cells = np.asarray(cells, dtype=np.int64)
        self.cell_dofs = np.asarray(cell_dofs, dtype=np.int64)
        self.n_dofs = n_dofs
        self.dof_kind = dof_kind
        self.dof_point = np.asarray(dof_point, dtype=float)
        self.dof_entity = np.asarray(dof_entity, dtype=np.int64)
        self.dof_component = np.asarray(dof_component, dtype=np.int64)
        self.dof_sub = np.asarray(dof_sub, dtype=np.int64)
        self.dual_coef = dual_coef
        self.n_scalar = n_scalar
        self.cell_index = {int(c): i for i, c in enumerate(self.cells)}

    @property
    def n_local(self):
        return self.cell_dofs.shape[1]

    @property
    def is_vector(self):
        return self.family.kind in ("stokes_velocity", "darcy_velocity")

    def local_coefs(self, vec):
        """Gather (n_cells, n_local) coefficient rows from a global vector."""
        return np.asarray(vec)[self.cell_dofs]


def build_space(mesh: Mesh, family: ElementFamily) -> Space:
    """Enumerate global degrees of freedom for one family on its subregion."""
    if family.kind == "stokes_velocity":
        return _build_stokes(mesh, family)
    if family.kind == "darcy_velocity":
        return _build_darcy(mesh, family)
    if family.kind == "pressure":
        return _build_pressure(mesh, family)
    return _build_trace(mesh, family)


def _require(cond, msg):
    if not cond:
        raise ValueError(msg)


def _build_stokes(mesh, family):
    k = family.k
    tris = mesh.subdomain_tris(STOKES)
    _require(len(tris) > 0, "mesh has no Stokes triangles")
    verts = np.unique(mesh.triangles[tris])
    edges = np.unique(mesh.tri_edges[tris])
    vmap = {int(v): i for i, v in enumerate(verts)}
    emap = {int(e): i for i, e in enumerate(edges)}

    n_per_edge = k - 1           # nodes interior to each edge
    n_per_cell = 1 if k == 2 else 3   # center/bubble coefficients
    n_scalar = (len(verts) + n_per_edge * len(edges) + n_per_cell * len(tris))

    dof_kind = []
    dof_point = np.zeros((2 * n_scalar, 2))
    dof_entity = np.zeros(2 * n_scalar, dtype=np.int64)
    dof_component = np.zeros(2 * n_scalar, dtype=np.int64)
    dof_sub = np.zeros(2 * n_scalar, dtype=np.int64)

    e_base = len(verts)
    c_base = e_base + n_per_edge * len(edges)
    scalar_kind = [""] * n_scalar
    scalar_point = np.zeros((n_scalar, 2))
    scalar_entity = np.zeros(n_scalar, dtype=np.int64)
    scalar_sub = np.zeros(n_scalar, dtype=np.int64)

    for v, i in vmap.items():
        scalar_kind[i] = "vertex"
        scalar_point[i] = mesh.vertices[v]
        scalar_entity[i] = v
    for e, i in emap.items():
        a, b = mesh.edges[e]
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        for slot in range(n_per_edge):
            d = e_base + n_per_edge * i + slot
            scalar_kind[d] = "edge_node"
            frac = 0.5 if k == 2 else (slot + 1) / 3.0
            scalar_point[d] = (1 - frac) * pa + frac * pb
            scalar_entity[d] = e
            scalar_sub[d] = slot
    for i, t in enumerate(tris):
        center = mesh.vertices[mesh.triangles[t]].mean(axis=0)
        for slot in range(n_per_cell):
            d = c_base + n_per_cell * i + slot
            scalar_kind[d] = "cell_node" if (k == 3 and slot == 0) else "bubble"
            scalar_point[d] = center
            scalar_entity[d] = t
            scalar_sub[d] = slot

    # local scalar ordering must match scalar_basis_table("stokes_scalar")
    nb = 7 if k == 2 else 12
    scalar_cell_dofs = np.empty((len(tris), nb), dtype=np.int64)
    for i, t in enumerate(tris):
        tri = mesh.triangles[t]
        row = [vmap[int(tri[j])] for j in range(3)]
        for j in range(3):
            e = mesh.tri_edges[t, j]
            a, _ = mesh.edges[e]
            eb = e_base + n_per_edge * emap[int(e)]
            if k == 2:
                row.append(eb)
            else:
                # local node order: toward vertex (j+1)%3 then (j+2)%3
                vj = tri[(j + 1) % 3]
                row.extend([eb, eb + 1] if vj == a else [eb + 1, eb])
        cb = c_base + n_per_cell * i
        row.extend(range(cb, cb + n_per_cell))
        scalar_cell_dofs[i] = row

    cell_dofs = np.hstack([scalar_cell_dofs, scalar_cell_dofs + n_scalar])
    for comp in range(2):
        off = comp * n_scalar
        dof_kind.extend(scalar_kind)
        dof_point[off:off + n_scalar] = scalar_point
        dof_entity[off:off + n_scalar] = scalar_entity
        dof_component[off:off + n_scalar] = comp
        dof_sub[off:off + n_scalar] = scalar_sub

    return Space(family, mesh, tris, cell_dofs, 2 * n_scalar, dof_kind,
                 dof_point, dof_entity, dof_component, dof_sub,
                 n_scalar=n_scalar)


def _rt_dof_layout(k):
    n_edge = k          # moments per edge
    n_int = 2 if k == 2 else 6
    return n_edge, n_int, 3 * n_edge + n_int


def _build_darcy(mesh, family):
    k = family.k
    tris = mesh.subdomain_tris(DARCY)
    _require(len(tris) > 0, "mesh has no Darcy triangles")
    edges = np.unique(mesh.tri_edges[tris])
    emap = {int(e): i for i, e in enumerate(edges)}
    n_edge, n_int, n_local = _rt_dof_layout(k)

    n_dofs = n_edge * len(edges) + n_int * len(tris)
    t_base = n_edge * len(edges)
    dof_kind = [""] * n_dofs
    dof_point = np.zeros((n_dofs, 2))
    dof_entity = np.zeros(n_dofs, dtype=np.int64)
    dof_component = np.full(n_dofs, -1, dtype=np.int64)
    dof_sub = np.zeros(n_dofs, dtype=np.int64)
    for e, i in emap.items():
        mid = mesh.vertices[mesh.edges[e]].mean(axis=0)
        for m in range(n_edge):
            d = n_edge * i + m
            dof_kind[d] = "edge_moment"
            dof_point[d] = mid
            dof_entity[d] = e
            dof_sub[d] = m
    for i, t in enumerate(tris):
        center = mesh.vertices[mesh.triangles[t]].mean(axis=0)
        for m in range(n_int):
            d = t_base + n_int * i + m
            dof_kind[d] = "interior_moment"
            dof_point[d] = center
            dof_entity[d] = t
            dof_component[d] = m // (n_int // 2)
            dof_sub[d] = m
    cell_dofs = np.empty((len(tris), n_local), dtype=np.int64)
    for i, t in enumerate(tris):
        row = []
        for j in range(3):
            eb = n_edge * emap[int(mesh.tri_edges[t, j])]
            row.extend(range(eb, eb + n_edge))
        tb = t_base + n_int * i
        row.extend(range(tb, tb + n_int))
        cell_dofs[i] = row

    space = Space(family, mesh, tris, cell_dofs, n_dofs, dof_kind,
                  dof_point, dof_entity, dof_component, dof_sub)
    space.dual_coef = np.linalg.inv(rt_dof_matrix(mesh, tris, k))
    return space


def rt_dof_matrix(mesh, tris, k):
    """Degree-of-freedom matrix M[t, j, l] = F_j(prebasis_l) per triangle.

    Row order: the k normal moments on each of the three local edges
    (taken against shifted Legendre polynomials in the global edge
    parameterization and the globally stored edge normal), then the
    interior moments.
    """
    tris = np.atleast_1d(tris)
    n_edge, n_int, n_local = _rt_dof_layout(k)
    erule = edge_rule(8)
    s = erule.points
    M = np.empty((len(tris), n_local, n_local))
    for j in range(3):
        eids = mesh.tri_edges[tris, j]
        lam = local_edge_lam(mesh, tris, j, s)
        vals, _ = rt_prebasis_eval(mesh, tris, lam, k)
        tr = np.einsum("tqld,td->tql", vals, mesh.edge_normal[eids])
        for m in range(n_edge):
            w = erule.weights * legendre01(m, s)
            M[:, n_edge * j + m] = (mesh.edge_length[eids][:, None]
                                    * np.einsum("q,tql->tl", w, tr))
    trule = triangle_rule(8)
    vals, _ = rt_prebasis_eval(mesh, tris, trule.points, k)
    _, area = tri_linear_geometry(mesh, tris)
    jac = 2.0 * area
    if k == 2:
        qweights = [np.ones(trule.n_points)]
    else:
        qweights = [np.ones(trule.n_points), trule.points[:, 1],
                    trule.points[:, 2]]
    row = 3 * n_edge
    for c in range(2):
        for q in qweights:
            M[:, row] = jac[:, None] * np.einsum(
                "q,tql->tl", trule.weights * q, vals[:, :, :, c])
            row += 1
    return M


def _build_pressure(mesh, family):
    k = family.k
    tris = np.arange(mesh.n_triangles)
    n_local = 3 if k == 2 else 6
    n_dofs = n_local * len(tris)
    cell_dofs = np.arange(n_dofs, dtype=np.int64).reshape(len(tris), n_local)
    dof_kind = []
    dof_point = np.zeros((n_dofs, 2))
    dof_entity = np.repeat(tris, n_local)
    dof_component = np.full(n_dofs, -1, dtype=np.int64)
    dof_sub = np.tile(np.arange(n_local), len(tris))
    node_lam = _pressure_nodes(k)
    p = mesh.vertices[mesh.triangles]
    for t in tris:
        for m in range(n_local):
            dof_kind.append("cell_value")
            dof_point[n_local * t + m] = node_lam[m] @ p[t]
    return Space(family, mesh, tris, cell_dofs, n_dofs, dof_kind,
                 dof_point, dof_entity, dof_component, dof_sub)


def _pressure_nodes(k):
    if k == 2:
        return np.eye(3)
    mids = np.array([[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]])
    return np.vstack([np.eye(3), mids])


def _build_trace(mesh, family):
    k = family.k
    edges = mesh.edges_of_class(INTERFACE)
    _require(len(edges) > 0, "mesh has no interface edges")
    n_local = k
    n_dofs = n_local * len(edges)
    cell_dofs = np.arange(n_dofs, dtype=np.int64).reshape(len(edges), n_local)
    dof_kind = ["edge_moment"] * n_dofs
    mids = mesh.vertices[mesh.edges[edges]].mean(axis=1)
    dof_point = np.repeat(mids, n_local, axis=0)
    dof_entity = np.repeat(edges, n_local)
    dof_component = np.full(n_dofs, -1, dtype=np.int64)
    dof_sub = np.tile(np.arange(n_local), len(edges))
    return Space(family, mesh, edges, cell_dofs, n_dofs, dof_kind,
                 dof_point, dof_entity, dof_component, dof_sub)


# -- evaluation and interpolation -------------------------------------------

def eval_basis(space: Space, cell_id: int, lam) -> BasisEval:
    """Evaluate all local basis functions of one cell at reference points.

    `lam` holds barycentric coordinates (triangle families) or parameters
    in [0, 1] (trace family).  Vector bases return per-function vector
    values, full gradients and divergences.
    """
    lam = np.atleast_2d(np.asarray(lam, dtype=float)) \
        if space.family.kind != "trace" else np.atleast_1d(lam)
    kind, k = space.family.kind, space.family.k
    if kind == "trace":
        vals = np.stack([legendre01(m, lam) for m in range(k)], axis=1)
        grads = np.zeros((len(lam), k, 2))
        return BasisEval(vals, grads)

    row = space.cell_index[int(cell_id)]
    tri = space.cells[row]
    grad_lam, _ = tri_linear_geometry(space.mesh, [tri])
    if kind == "pressure":
        vals, dlam = scalar_basis_table("pressure", k, lam)
        grads = physical_scalar_grads(dlam, grad_lam)[0]
        return BasisEval(vals, grads)
    if kind == "stokes_velocity":
        svals, dlam = scalar_basis_table("stokes_scalar", k, lam)
        sgrads = physical_scalar_grads(dlam, grad_lam)[0]
        n_q, nb = svals.shape
        vals = np.zeros((n_q, 2 * nb, 2))
        grads = np.zeros((n_q, 2 * nb, 2, 2))
        div = np.zeros((n_q, 2 * nb))
        for c in range(2):
            sl = slice(c * nb, (c + 1) * nb)
            vals[:, sl, c] = svals
            grads[:, sl, c, :] = sgrads
            div[:, sl] = sgrads[:, :, c]
        return BasisEval(vals, grads, div)
    # darcy_velocity: dual basis through the prebasis coefficients
    pv, pd, pg = rt_prebasis_eval(space.mesh, [tri], lam, k, want_grads=True)
    C = space.dual_coef[row]
    vals = np.einsum("lj,qld->qjd", C, pv[0])
    div = np.einsum("lj,ql->qj", C, pd[0])
    grads = np.einsum("lj,qlcm->qjcm", C, pg[0])
    return BasisEval(vals, grads, div)


class FieldFunction:
    """Coefficient vector over a Space plus evaluation machinery."""

    def __init__(self, space: Space, coefficients):
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape != (space.n_dofs,):
            raise ValueError("coefficient vector has wrong length")
        self.space = space
        self.coefficients = coefficients

    def values_in_cells(self, rows, lam):
        """Field values on space-cell rows at shared reference points.

        Returns (n_rows, n_q, 2) for vector families, (n_rows, n_q) else.
        """
        space = self.space
        rows = np.atleast_1d(rows)
        coefs = self.coefficients[space.cell_dofs[rows]]
        kind, k = space.family.kind, space.family.k
        if kind == "trace":
            vals = np.stack([legendre01(m, lam) for m in range(k)], axis=1)
            return np.einsum("tj,qj->tq", coefs, vals)
        if kind == "pressure":
            vals, _ = scalar_basis_table("pressure", k, lam)
            return np.einsum("tj,qj->tq", coefs, vals)
        if kind == "stokes_velocity":
            svals, _ = scalar_basis_table("stokes_scalar", k, lam)
            nb = svals.shape[1]
            out = np.empty((len(rows), len(svals), 2))
            out[:, :, 0] = np.einsum("tj,qj->tq", coefs[:, :nb], svals)
            out[:, :, 1] = np.einsum("tj,qj->tq", coefs[:, nb:], svals)
            return out
        pv, _ = rt_prebasis_eval(space.mesh, space.cells[rows], lam, k)
        dual = np.einsum("tlj,tqld->tqjd", space.dual_coef[rows], pv)
        return np.einsum("tj,tqjd->tqd", coefs, dual)

    def gradients_in_cells(self, rows, lam):
        """Gradients per cell row; vector fields give (..., 2, 2)."""
        space = self.space
        rows = np.atleast_1d(rows)
        coefs = self.coefficients[space.cell_dofs[rows]]
        kind, k = space.family.kind, space.family.k
        grad_lam, _ = tri_linear_geometry(space.mesh, space.cells[rows])
        if kind == "pressure":
            _, dlam = scalar_basis_table("pressure", k, lam)
            g = physical_scalar_grads(dlam, grad_lam)
            return np.einsum("tj,tqjd->tqd", coefs, g)
        if kind == "stokes_velocity":
            _, dlam = scalar_basis_table("stokes_scalar", k, lam)
            g = physical_scalar_grads(dlam, grad_lam)
            nb = g.shape[2]
            out = np.empty((len(rows), g.shape[1], 2, 2))
            out[:, :, 0, :] = np.einsum("tj,tqjd->tqd", coefs[:, :nb], g)
            out[:, :, 1, :] = np.einsum("tj,tqjd->tqd", coefs[:, nb:], g)
            return out
        pv, pd, pg = rt_prebasis_eval(space.mesh, space.cells[rows], lam, k,
                                      want_grads=True)
        dual_g = np.einsum("tlj,tqlcm->tqjcm", space.dual_coef[rows], pg)
        return np.einsum("tj,tqjcm->tqcm", coefs, dual_g)

    def divergence_in_cells(self, rows, lam):
        space = self.space
        rows = np.atleast_1d(rows)
        coefs = self.coefficients[space.cell_dofs[rows]]
        k = space.family.k
        if space.family.kind == "darcy_velocity":
            _, pd = rt_prebasis_eval(space.mesh, space.cells[rows], lam, k)
            dual_d = np.einsum("tlj,tql->tqj", space.dual_coef[rows], pd)
            return np.einsum("tj,tqj->tq", coefs, dual_d)
        g = self.gradients_in_cells(rows, lam)
        return g[:, :, 0, 0] + g[:, :, 1, 1]

    def eval(self, points):
        """Point evaluation in physical coordinates (slow path).

        Points outside the space's subregion evaluate to NaN.
        """
        points = np.atleast_2d(points)
        tri_of = self.space.mesh.locate(points)
        shape = (len(points), 2) if self.space.is_vector else (len(points),)
        out = np.full(shape, np.nan)
        for i, t in enumerate(tri_of):
            row = self.space.cell_index.get(int(t))
            if row is None:
                continue
            lam = self.space.mesh.barycentric(int(t), points[i:i + 1])
            vals = self.values_in_cells([row], lam)
            out[i] = vals[0, 0]
        return out


def interpolate(space: Space, field) -> FieldFunction:
    """Apply the degree-of-freedom functionals to an analytic field.

    `field` is a vectorized callable: points (n, 2) -> (n, 2) for vector
    families or (n,) for scalar ones.  Velocity interpolation matches the
    basis duality exactly, so fields inside the space are reproduced.
    """
    kind, k = space.family.kind, space.family.k
    mesh = space.mesh
    coefs = np.zeros(space.n_dofs)
    if kind == "pressure":
        coefs[:] = field(space.dof_point)
        return FieldFunction(space, coefs)
    if kind == "trace":
        rule = edge_rule(8)
        for i, e in enumerate(space.cells):
            pa, pb = mesh.vertices[mesh.edges[e]]
            pts = np.outer(1 - rule.points, pa) + np.outer(rule.points, pb)
            fv = np.asarray(field(pts))
            for m in range(k):
                w = rule.weights * legendre01(m, rule.points)
                coefs[space.cell_dofs[i, m]] = (2 * m + 1) * (w @ fv)
        return FieldFunction(space, coefs)
    if kind == "darcy_velocity":
        coefs[:] = _rt_moments_of_field(mesh, space, field)
        return FieldFunction(space, coefs)
    return _interpolate_stokes(space, field)


def _rt_moments_of_field(mesh, space, field, tris=None):
    """Edge and interior moment functionals applied to an analytic field."""
    k = space.family.k
    n_edge, n_int, _ = _rt_dof_layout(k)
    coefs = np.zeros(space.n_dofs)
    erule = edge_rule(8)
    seen = set()
    rows = range(len(space.cells)) if tris is None else tris
    for i in rows:
        t = space.cells[i]
        for j in range(3):
            e = int(mesh.tri_edges[t, j])
            if e in seen:
                continue
            seen.add(e)
            pa, pb = mesh.vertices[mesh.edges[e]]
            pts = np.outer(1 - erule.points, pa) + np.outer(erule.points, pb)
            fn = np.asarray(field(pts)) @ mesh.edge_normal[e]
            for m in range(n_edge):
                w = erule.weights * legendre01(m, erule.points)
                coefs[space.cell_dofs[i, n_edge * j + m]] = \
                    mesh.edge_length[e] * (w @ fn)
    trule = triangle_rule(8)
    pts = np.einsum("qj,tjd->tqd", trule.points,
                    mesh.vertices[mesh.triangles[space.cells]])
    fv = np.asarray(field(pts.reshape(-1, 2))).reshape(len(space.cells), -1, 2)
    _, area = tri_linear_geometry(mesh, space.cells)
    if k == 2:
        weights = [np.ones(trule.n_points)]
    else:
        weights = [np.ones(trule.n_points), trule.points[:, 1],
                   trule.points[:, 2]]
    col = 3 * n_edge
    for c in range(2):
        for q in weights:
            vals = 2.0 * area * np.einsum("q,tq->t", trule.weights * q,
                                          fv[:, :, c])
            coefs[space.cell_dofs[:, col]] = vals
            col += 1
    return coefs


def _interpolate_stokes(space, field):
    k = space.family.k
    mesh = space.mesh
    nb = 7 if k == 2 else 12
    n_scalar = space.n_scalar
    coefs = np.zeros(space.n_dofs)

    # nodal functionals: point evaluation at every anchor
    nodal = np.asarray(field(space.dof_point[:n_scalar]))
    node_lam = _stokes_node_lam(k)
    noded = len(node_lam)
    vals_at_nodes, _ = scalar_basis_table("stokes_scalar", k, node_lam)

    if k == 2:
        # 7 point-evaluation functionals (6 nodes + centroid) are unisolvent;
        # the bubble coefficient is the centroid deviation from the nodal part
        centers = mesh.vertices[mesh.triangles[space.cells]].mean(axis=1)
        fc = np.asarray(field(centers))
        phi_at_center = vals_at_nodes[6, :6]
        rows = space.cell_dofs[:, :nb] % n_scalar
        for c in range(2):
            nodevals = nodal[rows[:, :6], c]
            coefs[space.cell_dofs[:, c * nb + 6]] = \
                fc[:, c] - nodevals @ phi_at_center
            for j in range(6):
                coefs[space.cell_dofs[:, c * nb + j]] = nodal[rows[:, j], c]
        return FieldFunction(space, coefs)

    # k = 3: ten nodal functionals plus two interior moments per component
    trule = triangle_rule(8)
    tvals, _ = scalar_basis_table("stokes_scalar", k, trule.points)
    _, area = tri_linear_geometry(mesh, space.cells)
    pts = np.einsum("qj,tjd->tqd", trule.points,
                    mesh.vertices[mesh.triangles[space.cells]])
    fq = np.asarray(field(pts.reshape(-1, 2))).reshape(len(space.cells), -1, 2)
    rows = space.cell_dofs[:, :nb] % n_scalar
    qweights = [trule.points[:, 0], trule.points[:, 1]]
    M = np.empty((len(space.cells), 12, 12))
    M[:, :10, :] = vals_at_nodes[None]
    for m, q in enumerate(qweights):
        M[:, 10 + m, :] = (2.0 * area)[:, None] * np.einsum(
            "q,qj->j", trule.weights * q, tvals)[None, :]
    rhs = np.empty((len(space.cells), 12, 2))
    for c in range(2):
        rhs[:, :10, c] = nodal[rows[:, :10], c]
        for m, q in enumerate(qweights):
            rhs[:, 10 + m, c] = 2.0 * area * np.einsum(
                "q,tq->t", trule.weights * q, fq[:, :, c])
    local = np.linalg.solve(M, rhs)
    for c in range(2):
        for j in range(nb):
            coefs[space.cell_dofs[:, c * nb + j]] = local[:, j, c]
    return FieldFunction(space, coefs)


def _stokes_node_lam(k):
    if k == 2:
        return np.array([
            [1, 0, 0], [0, 1, 0], [0, 0, 1],
            [0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0],
            [1 / 3, 1 / 3, 1 / 3],
        ])
    lam = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
    for i in range(3):
        j, k_ = (i + 1) % 3, (i + 2) % 3
        for frac in (2 / 3, 1 / 3):
            row = [0.0, 0.0, 0.0]
            row[j] = frac
            row[k_] = 1 - frac
            lam.append(row)
    lam.append([1 / 3, 1 / 3, 1 / 3])
    return np.array(lam)
