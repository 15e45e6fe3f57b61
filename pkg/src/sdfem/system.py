"""Global saddle-point assembly and sparse direct solution.

Unknown ordering: Stokes velocity, Darcy velocity, pressure, interface
multipliers, and one trailing scalar enforcing the zero pressure mean.
The classical and reconstructed methods share the identical matrix; only
the body-force part of the right-hand side differs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh
from . import fespace as fs
from . import forms
from .reconstruction import ReconstructionOperator, rhs_robust

__all__ = ["Spaces", "ProblemData", "SaddleSystem", "Solution",
           "SolverError", "Factorization", "build_spaces", "assemble",
           "assemble_rhs", "solve", "factorize", "dump_matrixmarket"]

RESIDUAL_TOL = 1e-9


class SolverError(RuntimeError):
    pass


@dataclass
class Spaces:
    """The four discrete spaces of one discretization."""

    stokes: fs.Space
    darcy: fs.Space
    pressure: fs.Space
    trace: fs.Space
    k: int
    _recon: ReconstructionOperator | None = field(default=None, repr=False)

    @property
    def mesh(self):
        return self.stokes.mesh

    def reconstruction(self) -> ReconstructionOperator:
        if self._recon is None:
            self._recon = ReconstructionOperator(self.mesh, self.stokes)
        return self._recon


def build_spaces(mesh: Mesh, k: int = 2) -> Spaces:
    return Spaces(
        stokes=fs.build_space(mesh, fs.stokes_velocity(k)),
        darcy=fs.build_space(mesh, fs.darcy_velocity(k)),
        pressure=fs.build_space(mesh, fs.pressure(k)),
        trace=fs.build_space(mesh, fs.trace(k)),
        k=k,
    )


@dataclass
class ProblemData:
    """Forcing, divergence data and boundary spec for one solve.

    All callables are vectorized over point arrays; None means zero.
    """

    f_s: object = None
    f_d: object = None
    g_s: object = None
    g_d: object = None
    bc: forms.BCSpec = field(default_factory=forms.BCSpec)


class SaddleSystem:
    """Assembled sparse system with its block layout."""

    def __init__(self, matrix, rhs, offsets, spaces, params, method):
        self.matrix = matrix
        self.rhs = rhs
        self.offsets = offsets
        self.spaces = spaces
        self.params = params
        self.method = method

    @property
    def n(self):
        return self.matrix.shape[0]

    def add_penalty(self, dofs, values, weight):
        if len(dofs) == 0:
            return
        diag = sp.coo_matrix((np.full(len(dofs), weight), (dofs, dofs)),
                             shape=self.matrix.shape)
        self.matrix = (self.matrix + diag.tocsr()).tocsr()
        self.rhs[dofs] += weight * np.asarray(values)

    def block_slice(self, name):
        order = ["stokes", "darcy", "pressure", "trace", "mean"]
        start = self.offsets[name]
        i = order.index(name)
        end = self.offsets[order[i + 1]] if i + 1 < len(order) else self.n
        return slice(start, end)


@dataclass
class Solution:
    velocity_s: fs.FieldFunction
    velocity_d: fs.FieldFunction
    pressure: fs.FieldFunction
    multiplier: fs.FieldFunction
    mean_multiplier: float
    x: np.ndarray
    stats: dict


def _scatter(entries, rows_ids, cols_ids, blocks):
    """Append COO triplets for (n, r, c) blocks with (n, r)/(n, c) ids."""
    n, r, c = blocks.shape
    ii = np.repeat(rows_ids[:, :, None], c, axis=2)
    jj = np.repeat(cols_ids[:, None, :], r, axis=1)
    entries[0].append(ii.ravel())
    entries[1].append(jj.ravel())
    entries[2].append(blocks.ravel())


def assemble(mesh: Mesh, spaces: Spaces, params: forms.ModelParams,
             data: ProblemData, method: str = "classical") -> SaddleSystem:
    """Assemble matrix and right-hand side for one method.

    method "classical" uses (f, psi); "robust" reconstructs the
    free-flow test functions in the body-force term.  The matrices of
    the two methods are identical by construction.
    """
    if method not in ("classical", "robust"):
        raise ValueError(f"unknown method {method!r}")
    ss, ds, ps, ts = spaces.stokes, spaces.darcy, spaces.pressure, spaces.trace
    if ss.mesh is not mesh:
        raise ValueError("spaces were built on a different mesh")
    n_s, n_d, n_p, n_t = ss.n_dofs, ds.n_dofs, ps.n_dofs, ts.n_dofs
    offsets = {"stokes": 0, "darcy": n_s, "pressure": n_s + n_d,
               "trace": n_s + n_d + n_p, "mean": n_s + n_d + n_p + n_t}
    n = n_s + n_d + n_p + n_t + 1

    entries = ([], [], [])

    # velocity-velocity blocks
    blocks = forms.stokes_stiffness_blocks(mesh, ss, params)
    _scatter(entries, ss.cell_dofs, ss.cell_dofs, blocks)
    edges, ts_tris, bjs = forms.interface_bjs_blocks(mesh, ss, params)
    srows = np.array([ss.cell_index[int(t)] for t in ts_tris])
    _scatter(entries, ss.cell_dofs[srows], ss.cell_dofs[srows], bjs)
    blocks = forms.darcy_mass_blocks(mesh, ds, params)
    _scatter(entries, ds.cell_dofs + n_s, ds.cell_dofs + n_s, blocks)

    # divergence blocks and their transposes
    for vspace, off in ((ss, 0), (ds, n_s)):
        blocks = forms.div_blocks(mesh, vspace, ps)
        prow = np.array([ps.cell_index[int(t)] for t in vspace.cells])
        prows_ids = ps.cell_dofs[prow] + offsets["pressure"]
        vcols_ids = vspace.cell_dofs + off
        _scatter(entries, prows_ids, vcols_ids, blocks)
        _scatter(entries, vcols_ids, prows_ids,
                 np.transpose(blocks, (0, 2, 1)))

    # interface multiplier rows and columns
    medges, mts, mtd, cs, cd = forms.multiplier_blocks(mesh, ss, ds, ts)
    trow_ids = ts.cell_dofs + offsets["trace"]
    scol = ss.cell_dofs[np.array([ss.cell_index[int(t)] for t in mts])]
    dcol = ds.cell_dofs[np.array([ds.cell_index[int(t)] for t in mtd])] + n_s
    _scatter(entries, trow_ids, scol, cs)
    _scatter(entries, scol, trow_ids, np.transpose(cs, (0, 2, 1)))
    _scatter(entries, trow_ids, dcol, cd)
    _scatter(entries, dcol, trow_ids, np.transpose(cd, (0, 2, 1)))

    # pressure mean constraint, bordered symmetrically
    mean_rows = forms.mean_constraint_rows(mesh, ps)
    mrow = np.full((len(ps.cells), 1), offsets["mean"], dtype=np.int64)
    pcols = ps.cell_dofs + offsets["pressure"]
    _scatter(entries, mrow, pcols, mean_rows[:, None, :])
    _scatter(entries, pcols, mrow, mean_rows[:, :, None])

    i = np.concatenate(entries[0])
    j = np.concatenate(entries[1])
    v = np.concatenate(entries[2])
    matrix = sp.coo_matrix((v, (i, j)), shape=(n, n)).tocsr()

    rhs = _body_rhs(mesh, spaces, data, method, offsets, n)
    system = SaddleSystem(matrix, rhs, offsets, spaces, params, method)
    forms.apply_penalty_dirichlet(system, mesh, data.bc, params)
    return system


def _body_rhs(mesh, spaces, data, method, offsets, n):
    if method == "classical":
        r_s, r_d, r_p = forms.rhs_classical(mesh, spaces, data.f_s, data.f_d,
                                            data.g_s, data.g_d)
    else:
        r_s, r_d, r_p = rhs_robust(mesh, spaces, spaces.reconstruction(),
                                   data.f_s, data.f_d, data.g_s, data.g_d)
    rhs = np.zeros(n)
    rhs[:len(r_s)] = r_s
    rhs[offsets["darcy"]:offsets["darcy"] + len(r_d)] = r_d
    rhs[offsets["pressure"]:offsets["pressure"] + len(r_p)] = r_p
    return rhs


def assemble_rhs(mesh: Mesh, spaces: Spaces, params: forms.ModelParams,
                 data: ProblemData, method: str, offsets, n) -> np.ndarray:
    """Right-hand side alone (body terms plus penalty data terms)."""
    rhs = _body_rhs(mesh, spaces, data, method, offsets, n)
    dofs_s, vals_s, dofs_d, vals_d = forms.dirichlet_constraints(
        mesh, spaces.stokes, spaces.darcy, data.bc)
    w = params.penalty_weight
    if len(dofs_s):
        rhs[dofs_s] += w * vals_s
    if len(dofs_d):
        rhs[dofs_d + offsets["darcy"]] += w * vals_d
    return rhs


class Factorization:
    """Cached sparse LU of one assembled matrix, reusable across
    right-hand sides (parameter and method sweeps on a fixed mesh)."""

    def __init__(self, system: SaddleSystem):
        self.matrix = system.matrix
        self.offsets = system.offsets
        self.spaces = system.spaces
        t0 = time.perf_counter()
        A = system.matrix.tocsc()
        try:
            self.lu = spla.splu(A)
        except RuntimeError as exc:
            raise SolverError(f"singular factorization: {exc}") from exc
        self._csc = A
        self.factor_time = time.perf_counter() - t0

    def system_with_rhs(self, mesh, spaces, params, data, method):
        """New SaddleSystem sharing this matrix, with a fresh rhs."""
        rhs = assemble_rhs(mesh, spaces, params, data, method,
                           self.offsets, self.matrix.shape[0])
        return SaddleSystem(self.matrix, rhs, self.offsets, spaces, params,
                            method)

    def solve_rhs(self, rhs) -> Solution:
        t0 = time.perf_counter()
        A = self._csc
        x = self.lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SolverError("factorization produced non-finite values "
                              "(numerically singular matrix)")
        for _ in range(2):
            r = rhs - A @ x
            x = x + self.lu.solve(r)
        res = np.linalg.norm(rhs - A @ x)
        scale = max(np.linalg.norm(rhs), 1e-300)
        if res > RESIDUAL_TOL * scale:
            raise SolverError(f"relative residual {res / scale:.2e} exceeds "
                              f"{RESIDUAL_TOL:.0e}")
        t_total = time.perf_counter() - t0

        off = self.offsets
        ss, ds, ps, ts = (self.spaces.stokes, self.spaces.darcy,
                          self.spaces.pressure, self.spaces.trace)
        return Solution(
            velocity_s=fs.FieldFunction(ss, x[:ss.n_dofs]),
            velocity_d=fs.FieldFunction(
                ds, x[off["darcy"]:off["darcy"] + ds.n_dofs]),
            pressure=fs.FieldFunction(
                ps, x[off["pressure"]:off["pressure"] + ps.n_dofs]),
            multiplier=fs.FieldFunction(
                ts, x[off["trace"]:off["trace"] + ts.n_dofs]),
            mean_multiplier=float(x[off["mean"]]),
            x=x,
            stats={"factor_time": self.factor_time, "solve_time": t_total,
                   "residual": float(res / scale),
                   "n": self.matrix.shape[0]},
        )


def factorize(system: SaddleSystem) -> Factorization:
    return Factorization(system)


def solve(system: SaddleSystem) -> Solution:
    """Sparse direct LU solve with iterative refinement."""
    return Factorization(system).solve_rhs(system.rhs)


def dump_matrixmarket(system: SaddleSystem, prefix: str):
    """Write matrix and right-hand side in MatrixMarket format."""
    from scipy.io import mmwrite
    mmwrite(f"{prefix}_matrix.mtx", system.matrix.tocoo())
    mmwrite(f"{prefix}_rhs.mtx", system.rhs[:, None])
    return [f"{prefix}_matrix.mtx", f"{prefix}_rhs.mtx"]
