"""Element- and edge-level matrices and vectors for the coupled problem:
viscous Stokes stiffness, Darcy mass, interface slip (BJS) coupling, the
divergence form, interface multiplier rows, the pressure mean constraint,
penalty Dirichlet handling and classical right-hand sides.

The batch kernels return dense per-entity blocks plus global index arrays
ready for scatter assembly; the `local_*` wrappers expose single entities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, STOKES, DARCY, INTERFACE, BOUNDARY_S, BOUNDARY_D
from .quadrature import triangle_rule, edge_rule
from . import fespace as fs

__all__ = ["ModelParams", "LocalBlock", "BCSpec",
           "local_a_stokes", "local_a_darcy", "local_a_interface",
           "local_b", "local_interface_multiplier", "local_mean_constraint",
           "apply_penalty_dirichlet", "rhs_classical"]

ASSEMBLY_DEGREE = 8


@dataclass
class ModelParams:
    """Physical and numerical model parameters.

    alpha1_over_sqrt_kappa is the combined slip coefficient multiplying
    the tangential interface form (together with mu).  penalty defaults
    to 1e10 * (mu + 1) per constrained degree of freedom.
    """

    mu: float = 1.0
    K: float = 1e-4
    alpha1_over_sqrt_kappa: float = 1.0
    penalty: float | None = None

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.K <= 0:
            raise ValueError("K must be positive")
        if self.alpha1_over_sqrt_kappa < 0:
            raise ValueError("BJS coefficient must be nonnegative")
        if self.penalty is not None and self.penalty <= 0:
            raise ValueError("penalty must be positive")

    @property
    def penalty_weight(self) -> float:
        if self.penalty is not None:
            return self.penalty
        return 1e10 * (self.mu + 1.0)


@dataclass
class LocalBlock:
    """Dense block with its global row/column ids."""

    rows: np.ndarray
    cols: np.ndarray
    matrix: np.ndarray

    def __post_init__(self):
        if self.matrix.shape != (len(self.rows), len(self.cols)):
            raise ValueError("block shape does not match id lists")


@dataclass
class BCSpec:
    """Dirichlet data per boundary group.

    stokes maps group names ("gamma_s", "lid", "wall", ...) to vectorized
    velocity callables (pts (n,2) -> (n,2)); unnamed outer Stokes edges
    resolve to "gamma_s".  darcy_flux is a vector field whose normal
    moments constrain the RT edge dofs on the outer Darcy boundary
    (None means a zero normal flux).  Vertices shared by several groups
    take the first name in `priority` present among them.
    """

    stokes: dict = field(default_factory=dict)
    darcy_flux: object = None
    priority: tuple = ("lid",)

    def stokes_value(self, name):
        if name in self.stokes:
            return self.stokes[name]
        if "gamma_s" in self.stokes:
            return self.stokes["gamma_s"]
        raise KeyError(f"no Dirichlet data for boundary group {name!r}")


# -- shared evaluation helpers ---------------------------------------------

def _tri_quad(mesh, tris):
    rule = triangle_rule(ASSEMBLY_DEGREE)
    grad_lam, area = fs.tri_linear_geometry(mesh, tris)
    pts = np.einsum("qj,tjd->tqd", rule.points,
                    mesh.vertices[mesh.triangles[tris]])
    return rule, grad_lam, area, pts


def _stokes_tables(mesh, sspace, tris, rule):
    svals, sdlam = fs.scalar_basis_table("stokes_scalar", sspace.family.k,
                                         rule.points)
    grad_lam, _ = fs.tri_linear_geometry(mesh, tris)
    sgrads = fs.physical_scalar_grads(sdlam, grad_lam)
    return svals, sgrads


def _darcy_tables(mesh, dspace, rows, lam):
    """Dual RT basis values and divergences on darcy-space cell rows."""
    tris = dspace.cells[rows]
    pv, pd = fs.rt_prebasis_eval(mesh, tris, lam, dspace.family.k)
    C = dspace.dual_coef[rows]
    vals = np.einsum("tlj,tqld->tqjd", C, pv)
    divs = np.einsum("tlj,tql->tqj", C, pd)
    return vals, divs


def edge_trace_stokes(mesh, sspace, edges, s):
    """Stokes scalar basis values on interface edges at parameters s.

    Returns (values (n_e, n_q, nb), stokes_tris).
    """
    ts = mesh.edge_tris[edges, 0]
    jloc = (mesh.tri_edges[ts] == edges[:, None]).argmax(axis=1)
    lam = np.zeros((len(edges), len(s), 3))
    for j in range(3):
        sel = np.nonzero(jloc == j)[0]
        if len(sel):
            lam[sel] = fs.local_edge_lam(mesh, ts[sel], j, s)
    vals, _ = fs.scalar_basis_table("stokes_scalar", sspace.family.k,
                                    lam.reshape(-1, 3))
    return vals.reshape(len(edges), len(s), -1), ts


def edge_trace_darcy_normal(mesh, dspace, edges, s):
    """Normal traces of the dual RT basis on interface edges.

    Uses the stored edge normal (the Stokes-outward one on the
    interface).  Returns (traces (n_e, n_q, n_local), darcy_tris).
    """
    td = mesh.edge_tris[edges, 1]
    jloc = (mesh.tri_edges[td] == edges[:, None]).argmax(axis=1)
    lam = np.zeros((len(edges), len(s), 3))
    for j in range(3):
        sel = np.nonzero(jloc == j)[0]
        if len(sel):
            lam[sel] = fs.local_edge_lam(mesh, td[sel], j, s)
    rows = np.array([dspace.cell_index[int(t)] for t in td])
    pv, _ = fs.rt_prebasis_eval(mesh, dspace.cells[rows], lam,
                                dspace.family.k)
    dual = np.einsum("tlj,tqld->tqjd", dspace.dual_coef[rows], pv)
    tr = np.einsum("tqjd,td->tqj", dual, mesh.edge_normal[edges])
    return tr, td


# -- batched bilinear form kernels -------------------------------------------

def stokes_stiffness_blocks(mesh, sspace, params):
    """2 mu (D(u), D(v)) per Stokes triangle; (n_t, 2nb, 2nb) blocks."""
    tris = sspace.cells
    rule, grad_lam, area, _ = _tri_quad(mesh, tris)
    _, sgrads = _stokes_tables(mesh, sspace, tris, rule)
    w = rule.weights[None, :, None, None] * sgrads
    H = np.einsum("tqia,tqjb->tijab", w, sgrads) * (2.0 * area)[:, None, None,
                                                                None, None]
    mu = params.mu
    nb = sgrads.shape[2]
    blocks = np.empty((len(tris), 2 * nb, 2 * nb))
    blocks[:, :nb, :nb] = 2 * mu * H[..., 0, 0] + mu * H[..., 1, 1]
    blocks[:, :nb, nb:] = mu * H[..., 1, 0]
    blocks[:, nb:, :nb] = mu * H[..., 0, 1]
    blocks[:, nb:, nb:] = 2 * mu * H[..., 1, 1] + mu * H[..., 0, 0]
    return blocks


def darcy_mass_blocks(mesh, dspace, params):
    """(mu / K) (u, v) per Darcy triangle on the dual RT basis."""
    tris = dspace.cells
    rule, _, area, _ = _tri_quad(mesh, tris)
    vals, _ = _darcy_tables(mesh, dspace, np.arange(len(tris)), rule.points)
    w = rule.weights[None, :, None, None] * vals
    blocks = np.einsum("tqid,tqjd->tij", w, vals)
    return (params.mu / params.K) * blocks * (2.0 * area)[:, None, None]


def interface_bjs_blocks(mesh, sspace, params):
    """Tangential slip penalty on interface edges, on Stokes velocity dofs.

    Returns (edge_ids, stokes_tris, blocks (n_e, 2nb, 2nb)).
    """
    edges = mesh.edges_of_class(INTERFACE)
    rule = edge_rule(ASSEMBLY_DEGREE)
    vals, ts = edge_trace_stokes(mesh, sspace, edges, rule.points)
    mass = np.einsum("q,eqi,eqj->eij", rule.weights, vals, vals)
    mass *= mesh.edge_length[edges][:, None, None]
    tau = mesh.edge_tangent[edges]
    coef = params.alpha1_over_sqrt_kappa * params.mu
    nb = vals.shape[2]
    blocks = np.empty((len(edges), 2 * nb, 2 * nb))
    for c1 in range(2):
        for c2 in range(2):
            blocks[:, c1 * nb:(c1 + 1) * nb, c2 * nb:(c2 + 1) * nb] = \
                coef * (tau[:, c1] * tau[:, c2])[:, None, None] * mass
    return edges, ts, blocks


def div_blocks(mesh, vspace, pspace):
    """-(div u, q) blocks; rows are local pressure dofs of the same cell."""
    tris = vspace.cells
    rule, grad_lam, area, _ = _tri_quad(mesh, tris)
    pvals, _ = fs.scalar_basis_table("pressure", pspace.family.k, rule.points)
    if vspace.family.kind == "stokes_velocity":
        _, sgrads = _stokes_tables(mesh, vspace, tris, rule)
        nb = sgrads.shape[2]
        div = np.concatenate([sgrads[:, :, :, 0], sgrads[:, :, :, 1]], axis=2)
    else:
        _, div = _darcy_tables(mesh, vspace, np.arange(len(tris)),
                               rule.points)
    blocks = -np.einsum("q,qm,tqi->tmi", rule.weights, pvals, div)
    return blocks * (2.0 * area)[:, None, None]


def multiplier_blocks(mesh, sspace, dspace, tspace):
    """Interface multiplier rows <v_s . n_s + v_d . n_d, mu_m> per edge.

    Returns (edges, stokes_tris, darcy_tris, stokes (n_e, k, 2nb),
    darcy (n_e, k, n_local)); the Darcy side carries the sign flip from
    n_d = -n_s.
    """
    edges = tspace.cells
    k = tspace.family.k
    rule = edge_rule(ASSEMBLY_DEGREE)
    s = rule.points
    svals, ts = edge_trace_stokes(mesh, sspace, edges, s)
    dtr, td = edge_trace_darcy_normal(mesh, dspace, edges, s)
    n = mesh.edge_normal[edges]
    length = mesh.edge_length[edges]
    nb = svals.shape[2]
    cs = np.empty((len(edges), k, 2 * nb))
    cd = np.empty((len(edges), k, dtr.shape[2]))
    for m in range(k):
        w = rule.weights * fs.legendre01(m, s)
        tr_s = np.einsum("q,eqi->ei", w, svals) * length[:, None]
        cs[:, m, :nb] = tr_s * n[:, 0:1]
        cs[:, m, nb:] = tr_s * n[:, 1:2]
        cd[:, m, :] = -np.einsum("q,eqi->ei", w, dtr) * length[:, None]
    return edges, ts, td, cs, cd


def mean_constraint_rows(mesh, pspace):
    """(q, 1) per triangle: (n_t, n_local) integrals of pressure basis."""
    tris = pspace.cells
    rule, _, area, _ = _tri_quad(mesh, tris)
    pvals, _ = fs.scalar_basis_table("pressure", pspace.family.k, rule.points)
    return 2.0 * area[:, None] * np.einsum("q,qm->m", rule.weights,
                                           pvals)[None, :]


# -- right-hand sides ---------------------------------------------------------

def rhs_velocity_classical(mesh, space, f):
    """(f, psi_j) for all velocity basis functions of one space."""
    out = np.zeros(space.n_dofs)
    if f is None:
        return out
    tris = space.cells
    rule, _, area, pts = _tri_quad(mesh, tris)
    fv = np.asarray(f(pts.reshape(-1, 2))).reshape(len(tris), -1, 2)
    if space.family.kind == "stokes_velocity":
        svals, _ = fs.scalar_basis_table("stokes_scalar", space.family.k,
                                         rule.points)
        nb = svals.shape[1]
        local = np.empty((len(tris), 2 * nb))
        for c in range(2):
            local[:, c * nb:(c + 1) * nb] = np.einsum(
                "q,qi,tq->ti", rule.weights, svals, fv[:, :, c])
    else:
        vals, _ = _darcy_tables(mesh, space, np.arange(len(tris)),
                                rule.points)
        local = np.einsum("q,tqid,tqd->ti", rule.weights, vals, fv)
    local *= (2.0 * area)[:, None]
    np.add.at(out, space.cell_dofs, local)
    return out


def rhs_pressure(mesh, pspace, g_s, g_d):
    """(g, phi_m) with g given per subdomain (None means zero)."""
    out = np.zeros(pspace.n_dofs)
    rule = triangle_rule(ASSEMBLY_DEGREE)
    pvals, _ = fs.scalar_basis_table("pressure", pspace.family.k, rule.points)
    for tag, g in ((STOKES, g_s), (DARCY, g_d)):
        if g is None:
            continue
        sel = np.nonzero(mesh.tri_tag[pspace.cells] == tag)[0]
        if len(sel) == 0:
            continue
        tris = pspace.cells[sel]
        _, area = fs.tri_linear_geometry(mesh, tris)
        pts = np.einsum("qj,tjd->tqd", rule.points,
                        mesh.vertices[mesh.triangles[tris]])
        gv = np.asarray(g(pts.reshape(-1, 2))).reshape(len(tris), -1)
        local = 2.0 * area[:, None] * np.einsum("q,qm,tq->tm", rule.weights,
                                                pvals, gv)
        np.add.at(out, pspace.cell_dofs[sel], local)
    return out


def rhs_classical(mesh, spaces, f_s, f_d, g_s, g_d):
    """Stacked classical right-hand side over velocity and pressure blocks."""
    return (rhs_velocity_classical(mesh, spaces.stokes, f_s),
            rhs_velocity_classical(mesh, spaces.darcy, f_d),
            rhs_pressure(mesh, spaces.pressure, g_s, g_d))


# -- Dirichlet penalty --------------------------------------------------------

def dirichlet_constraints(mesh, sspace, dspace, bc: BCSpec):
    """Constrained dof ids and prescribed values for both velocity spaces.

    Stokes: Lagrange dofs anchored on the outer Stokes boundary take
    prescribed point values (vertices shared by groups follow the
    priority rule).  Darcy: RT edge-moment dofs on the outer Darcy
    boundary take the normal moments of the prescribed flux field.
    """
    vertex_groups = {}
    sedges = mesh.edges_of_class(BOUNDARY_S)
    for e in sedges:
        name = mesh.edge_name.get(int(e), "gamma_s")
        for v in mesh.edges[e]:
            vertex_groups.setdefault(int(v), set()).add(name)

    def pick(names):
        for p in bc.priority:
            if p in names:
                return p
        return sorted(names)[0]

    sedge_set = set(int(e) for e in sedges)
    n_scalar = sspace.n_scalar
    dofs_s, vals_s = [], []
    for d in range(n_scalar):
        kind = sspace.dof_kind[d]
        if kind == "vertex":
            names = vertex_groups.get(int(sspace.dof_entity[d]))
            if not names:
                continue
            name = pick(names)
        elif kind == "edge_node":
            e = int(sspace.dof_entity[d])
            if e not in sedge_set:
                continue
            name = mesh.edge_name.get(e, "gamma_s")
        else:
            continue
        val = np.asarray(bc.stokes_value(name)(sspace.dof_point[d][None, :]))
        for c in range(2):
            dofs_s.append(d + c * n_scalar)
            vals_s.append(float(val[0, c]))

    k = dspace.family.k
    rule = edge_rule(ASSEMBLY_DEGREE)
    flux = bc.darcy_flux
    dofs_d, vals_d = [], []
    for e in mesh.edges_of_class(BOUNDARY_D):
        sel = np.nonzero(dspace.dof_entity == e)[0]
        base = sel[np.argsort(dspace.dof_sub[sel])]
        if flux is None:
            moments = np.zeros(k)
        else:
            pa, pb = mesh.vertices[mesh.edges[e]]
            pts = np.outer(1 - rule.points, pa) + np.outer(rule.points, pb)
            fn = np.asarray(flux(pts)) @ mesh.edge_normal[e]
            moments = np.array([
                mesh.edge_length[e]
                * ((rule.weights * fs.legendre01(m, rule.points)) @ fn)
                for m in range(k)])
        for m in range(k):
            dofs_d.append(int(base[m]))
            vals_d.append(float(moments[m]))
    return (np.array(dofs_s, dtype=np.int64), np.array(vals_s),
            np.array(dofs_d, dtype=np.int64), np.array(vals_d))


def apply_penalty_dirichlet(system, mesh, bc_spec: BCSpec, params: ModelParams):
    """Add penalty rows for the Dirichlet data to an assembled system.

    For each constrained velocity dof: diagonal += penalty and
    rhs += penalty * prescribed value.
    """
    sspace, dspace = system.spaces.stokes, system.spaces.darcy
    dofs_s, vals_s, dofs_d, vals_d = dirichlet_constraints(
        mesh, sspace, dspace, bc_spec)
    dofs = np.concatenate([dofs_s, dofs_d + system.offsets["darcy"]])
    vals = np.concatenate([vals_s, vals_d])
    system.add_penalty(dofs, vals, params.penalty_weight)


# -- single-entity wrappers (spec operations) --------------------------------

def local_a_stokes(mesh, sspace, tri, params) -> LocalBlock:
    row = sspace.cell_index[int(tri)]
    blocks = _single_stokes_stiffness(mesh, sspace, row, params)
    ids = sspace.cell_dofs[row]
    return LocalBlock(ids, ids, blocks)


def _single_stokes_stiffness(mesh, sspace, row, params):
    sub = _subspace_view(sspace, [row])
    return stokes_stiffness_blocks(mesh, sub, params)[0]


def local_a_darcy(mesh, dspace, tri, params) -> LocalBlock:
    row = dspace.cell_index[int(tri)]
    sub = _subspace_view(dspace, [row])
    block = darcy_mass_blocks(mesh, sub, params)[0]
    ids = dspace.cell_dofs[row]
    return LocalBlock(ids, ids, block)


def local_a_interface(mesh, sspace, edge, params) -> LocalBlock:
    if mesh.edge_class[edge] != INTERFACE:
        raise ValueError(f"edge {edge} is not an interface edge")
    rule = edge_rule(ASSEMBLY_DEGREE)
    vals, ts = edge_trace_stokes(mesh, sspace, np.array([edge]), rule.points)
    mass = np.einsum("q,qi,qj->ij", rule.weights, vals[0], vals[0])
    mass *= mesh.edge_length[edge]
    tau = mesh.edge_tangent[edge]
    coef = params.alpha1_over_sqrt_kappa * params.mu
    nb = vals.shape[2]
    block = np.empty((2 * nb, 2 * nb))
    for c1 in range(2):
        for c2 in range(2):
            block[c1 * nb:(c1 + 1) * nb, c2 * nb:(c2 + 1) * nb] = \
                coef * tau[c1] * tau[c2] * mass
    ids = sspace.cell_dofs[sspace.cell_index[int(ts[0])]]
    return LocalBlock(ids, ids, block)


def local_b(mesh, vspace, pspace, tri) -> LocalBlock:
    vrow = vspace.cell_index[int(tri)]
    prow = pspace.cell_index[int(tri)]
    sub = _subspace_view(vspace, [vrow])
    block = div_blocks(mesh, sub, pspace)[0]
    return LocalBlock(pspace.cell_dofs[prow], vspace.cell_dofs[vrow], block)


def local_interface_multiplier(mesh, sspace, dspace, tspace, edge) -> LocalBlock:
    erow = tspace.cell_index[int(edge)]
    sub = _subspace_view(tspace, [erow])
    _, ts, td, cs, cd = multiplier_blocks(mesh, sspace, dspace, sub)
    srow = sspace.cell_index[int(ts[0])]
    drow = dspace.cell_index[int(td[0])]
    cols = np.concatenate([sspace.cell_dofs[srow], dspace.cell_dofs[drow]])
    return LocalBlock(tspace.cell_dofs[erow], cols,
                      np.concatenate([cs[0], cd[0]], axis=1))


def local_mean_constraint(mesh, pspace, tri) -> LocalBlock:
    row = pspace.cell_index[int(tri)]
    sub = _subspace_view(pspace, [row])
    vals = mean_constraint_rows(mesh, sub)
    return LocalBlock(np.array([0]), pspace.cell_dofs[row], vals)


def _subspace_view(space, rows):
    """Shallow one-cell view reusing the parent's dof numbering."""
    import copy
    sub = copy.copy(space)
    rows = np.asarray(rows)
    sub.cells = space.cells[rows]
    sub.cell_dofs = space.cell_dofs[rows]
    if space.dual_coef is not None:
        sub.dual_coef = space.dual_coef[rows]
    sub.cell_index = {int(c): i for i, c in enumerate(sub.cells)}
    return sub
