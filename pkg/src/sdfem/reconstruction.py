"""Element-local divergence-free reconstruction of velocity test functions.

On each free-flow triangle, a velocity function is mapped into the local
Raviart-Thomas space by matching its edge-normal moments (against
P_{k-1} on every edge) and its interior moments (against [P_{k-2}]^2).
The porous-side velocity already lives in the RT space, so it passes
through unchanged.  The reconstruction enters only the body-force term
of the right-hand side; the system matrix is untouched.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .quadrature import triangle_rule, edge_rule
from . import fespace as fs
from .forms import ASSEMBLY_DEGREE, rhs_velocity_classical, rhs_pressure

__all__ = ["LocalReconstruction", "ReconstructionOperator",
           "local_reconstruct", "rhs_robust"]

log = logging.getLogger(__name__)

COND_WARN = 1e8


@dataclass
class LocalReconstruction:
    """Local RT coefficients of a reconstructed field on one triangle."""

    tri_id: int
    w: np.ndarray
    dof_matrix: np.ndarray
    residual: float


class ReconstructionOperator:
    """Per-triangle reconstruction data for a Stokes velocity space.

    Caches the local RT degree-of-freedom matrices, their inverses and the
    reconstruction coefficients of every local velocity basis function;
    all of it is independent of the forcing, so parameter sweeps on a
    fixed mesh reuse one instance.
    """

    def __init__(self, mesh, sspace):
        self.mesh = mesh
        self.sspace = sspace
        self.k = sspace.family.k
        tris = sspace.cells
        self.dof_matrix = fs.rt_dof_matrix(mesh, tris, self.k)
        cond = np.linalg.cond(self.dof_matrix)
        self.max_cond = float(cond.max())
        if self.max_cond > COND_WARN:
            log.warning("local reconstruction matrix condition number %.2e "
                        "exceeds %.0e (worst triangle %d)", self.max_cond,
                        COND_WARN, int(tris[int(cond.argmax())]))
        try:
            self.dof_matrix_inv = np.linalg.inv(self.dof_matrix)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                "singular local reconstruction matrix: degenerate triangle"
            ) from exc
        # moments of every local Stokes basis function -> coefficients
        B = _stokes_basis_moments(mesh, sspace)
        self.basis_coefs = np.einsum("tlm,tmb->tlb", self.dof_matrix_inv, B)

    # -- application -------------------------------------------------------

    def field_coefs(self, stokes_coefficients):
        """Prebasis RT coefficients of the reconstructed discrete field.

        Input is a global Stokes coefficient vector; output is
        (n_stokes_tris, n_rt_local).
        """
        local = np.asarray(stokes_coefficients)[self.sspace.cell_dofs]
        return np.einsum("tlb,tb->tl", self.basis_coefs, local)

    def values(self, rt_coefs, rows, lam):
        pv, _ = fs.rt_prebasis_eval(self.mesh, self.sspace.cells[rows], lam,
                                    self.k)
        return np.einsum("tl,tqld->tqd", rt_coefs[rows], pv)

    def divergences(self, rt_coefs, rows, lam):
        _, pd = fs.rt_prebasis_eval(self.mesh, self.sspace.cells[rows], lam,
                                    self.k)
        return np.einsum("tl,tql->tq", rt_coefs[rows], pd)


def _stokes_basis_moments(mesh, sspace):
    """RT degree-of-freedom functionals of each local velocity basis
    function: (n_t, n_rt_local, 2 nb)."""
    k = sspace.family.k
    tris = sspace.cells
    n_edge, n_int, n_local = fs._rt_dof_layout(k)
    erule = edge_rule(ASSEMBLY_DEGREE)
    s = erule.points
    nb = 7 if k == 2 else 12
    B = np.empty((len(tris), n_local, 2 * nb))
    for j in range(3):
        eids = mesh.tri_edges[tris, j]
        lam = fs.local_edge_lam(mesh, tris, j, s)
        svals, _ = fs.scalar_basis_table("stokes_scalar", k,
                                         lam.reshape(-1, 3))
        svals = svals.reshape(len(tris), len(s), nb)
        n = mesh.edge_normal[eids]
        length = mesh.edge_length[eids]
        for m in range(n_edge):
            w = erule.weights * fs.legendre01(m, s)
            tr = np.einsum("q,tqi->ti", w, svals) * length[:, None]
            B[:, n_edge * j + m, :nb] = tr * n[:, 0:1]
            B[:, n_edge * j + m, nb:] = tr * n[:, 1:2]
    trule = triangle_rule(ASSEMBLY_DEGREE)
    svals, _ = fs.scalar_basis_table("stokes_scalar", k, trule.points)
    _, area = fs.tri_linear_geometry(mesh, tris)
    if k == 2:
        qweights = [np.ones(trule.n_points)]
    else:
        qweights = [np.ones(trule.n_points), trule.points[:, 1],
                    trule.points[:, 2]]
    row = 3 * n_edge
    for c in range(2):
        for q in qweights:
            moments = 2.0 * area[:, None] * np.einsum(
                "q,qi->i", trule.weights * q, svals)[None, :]
            B[:, row, :] = 0.0
            B[:, row, c * nb:(c + 1) * nb] = moments
            row += 1
    return B


def _field_moments(mesh, sspace_k, tri, psi):
    """RT dof functionals of an arbitrary vectorized field on one triangle."""
    k = sspace_k
    n_edge, n_int, n_local = fs._rt_dof_layout(k)
    erule = edge_rule(ASSEMBLY_DEGREE)
    s = erule.points
    b = np.empty(n_local)
    for j in range(3):
        e = int(mesh.tri_edges[tri, j])
        pa, pb = mesh.vertices[mesh.edges[e]]
        pts = np.outer(1 - s, pa) + np.outer(s, pb)
        fn = np.asarray(psi(pts)) @ mesh.edge_normal[e]
        for m in range(n_edge):
            w = erule.weights * fs.legendre01(m, s)
            b[n_edge * j + m] = mesh.edge_length[e] * (w @ fn)
    trule = triangle_rule(ASSEMBLY_DEGREE)
    verts = mesh.vertices[mesh.triangles[tri]]
    pts = trule.points @ verts
    fv = np.asarray(psi(pts))
    _, area = fs.tri_linear_geometry(mesh, [tri])
    if k == 2:
        qweights = [np.ones(trule.n_points)]
    else:
        qweights = [np.ones(trule.n_points), trule.points[:, 1],
                    trule.points[:, 2]]
    row = 3 * n_edge
    for c in range(2):
        for q in qweights:
            b[row] = 2.0 * area[0] * ((trule.weights * q) @ fv[:, c])
            row += 1
    return b


def local_reconstruct(mesh, k, tri, psi) -> LocalReconstruction:
    """Reconstruct one smooth field on one triangle.

    `psi` is a vectorized callable (pts (n, 2) -> (n, 2)); the result
    solves the local moment system exactly (dense LU with partial
    pivoting) and records its relative residual.
    """
    M = fs.rt_dof_matrix(mesh, [tri], k)[0]
    b = _field_moments(mesh, k, tri, psi)
    try:
        w = np.linalg.solve(M, b)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"singular reconstruction matrix on triangle {tri}") from exc
    scale = max(np.abs(b).max(), 1e-300)
    residual = float(np.abs(M @ w - b).max() / scale)
    return LocalReconstruction(int(tri), w, M, residual)


def rhs_robust(mesh, spaces, recon: ReconstructionOperator, f_s, f_d,
               g_s, g_d):
    """Right-hand side with reconstructed free-flow test functions.

    Only the Stokes velocity block changes: entries become
    (f, Pi psi_j) computed from the cached local coefficients.  The
    porous-side reconstruction is the identity, and the pressure block
    carries the unchanged divergence data.
    """
    sspace = spaces.stokes
    out_s = np.zeros(sspace.n_dofs)
    if f_s is not None:
        tris = sspace.cells
        rule = triangle_rule(ASSEMBLY_DEGREE)
        pv, _ = fs.rt_prebasis_eval(mesh, tris, rule.points, recon.k)
        _, area = fs.tri_linear_geometry(mesh, tris)
        pts = np.einsum("qj,tjd->tqd", rule.points,
                        mesh.vertices[mesh.triangles[tris]])
        fv = np.asarray(f_s(pts.reshape(-1, 2))).reshape(len(tris), -1, 2)
        fchi = np.einsum("q,tqld,tqd->tl", rule.weights, pv, fv)
        local = np.einsum("tl,tlb->tb", fchi, recon.basis_coefs)
        local *= (2.0 * area)[:, None]
        np.add.at(out_s, sspace.cell_dofs, local)
    out_d = rhs_velocity_classical(mesh, spaces.darcy, f_d)
    out_p = rhs_pressure(mesh, spaces.pressure, g_s, g_d)
    return out_s, out_d, out_p
