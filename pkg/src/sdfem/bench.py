"""Benchmark problems and sweep drivers.

ex1: manufactured solution on the unit square (interface y = 0.5) whose
pressure scales with a factor gamma while the velocity stays fixed.
ex2: manufactured solution on two pi-by-pi squares (interface y = 0)
valid for every viscosity, used for viscosity sweeps.
ex3: lid-driven cavity over a porous bed with a piecewise linear
interface, loaded by an irrotational body force of magnitude lambda;
no exact solution.

Forcing terms are hand-derived from the exact fields and hard-coded;
the test suite rechecks them against symbolic differentiation.
"""

from __future__ import annotations

import importlib.resources
import time
from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, RectanglePair, generate_structured, load_msh, STOKES
from .forms import ModelParams, BCSpec
from .system import ProblemData, build_spaces, assemble, factorize
from .errors import ErrorReport, compute_errors, write_csv_rows

__all__ = ["Benchmark", "ExactSolution", "example1", "example2", "example3",
           "run_sweep", "sample_velocity_grid", "velocity_relative_difference",
           "velocity_max"]

PI = np.pi


@dataclass
class ExactSolution:
    """Vectorized exact fields with analytic derivatives."""

    u_s: object
    grad_u_s: object
    u_d: object
    div_u_d: object
    p_s: object
    p_d: object


@dataclass
class Benchmark:
    id: str
    params: ModelParams
    data: ProblemData
    exact: ExactSolution | None
    domain: RectanglePair | None = None
    mesh_path: str | None = None
    meta: dict = field(default_factory=dict)

    def mesh_at(self, level: int) -> Mesh:
        if self.domain is not None:
            return generate_structured(self.domain, level)
        if self.mesh_path is None:
            raise FileNotFoundError(
                f"benchmark {self.id} needs a mesh file and none was given")
        return load_msh(self.mesh_path)


def example1(gamma: float, mu: float = 1.0, K: float = 1e-4,
             penalty: float | None = None) -> Benchmark:
    """Pressure-scaling benchmark on the unit square, interface y = 0.5.

    The slip coefficient (1 + 4 pi^2)/2 follows from the exact fields;
    the printed interface force balance requires mu = 1, which is the
    value used throughout the sweeps.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    g = float(gamma)

    def E(p):
        return np.exp(0.5 * p[:, 1])

    def u_s(p):
        e = E(p)
        return np.column_stack([-e * np.sin(PI * p[:, 0]) / (2 * PI ** 2),
                                e * np.cos(PI * p[:, 0]) / PI])

    def grad_u_s(p):
        e = E(p)
        s, c = np.sin(PI * p[:, 0]), np.cos(PI * p[:, 0])
        out = np.empty((len(p), 2, 2))
        out[:, 0, 0] = -e * c / (2 * PI)
        out[:, 0, 1] = -e * s / (4 * PI ** 2)
        out[:, 1, 0] = -e * s
        out[:, 1, 1] = e * c / (2 * PI)
        return out

    def u_d(p):
        e = E(p)
        return np.column_stack([-2 * e * np.sin(PI * p[:, 0]),
                                e * np.cos(PI * p[:, 0]) / PI])

    def div_u_d(p):
        return E(p) * np.cos(PI * p[:, 0]) * (1 / (2 * PI) - 2 * PI)

    def p_s(p):
        return -g * E(p) * np.cos(PI * p[:, 0]) / PI

    def p_d(p):
        return -(g + 1) * E(p) * np.cos(PI * p[:, 0]) / PI

    def f_s(p):
        e = E(p)
        s, c = np.sin(PI * p[:, 0]), np.cos(PI * p[:, 0])
        return np.column_stack([
            (g - mu * (4 * PI ** 2 - 1) / (8 * PI ** 2)) * e * s,
            (4 * PI ** 2 * mu - mu - 2 * g) / (4 * PI) * e * c,
        ])

    def f_d(p):
        e = E(p)
        s, c = np.sin(PI * p[:, 0]), np.cos(PI * p[:, 0])
        return np.column_stack([
            ((g + 1) - 2 * mu / K) * e * s,
            (2 * mu / K - (g + 1)) * e * c / (2 * PI),
        ])

    params = ModelParams(mu=mu, K=K,
                         alpha1_over_sqrt_kappa=(1 + 4 * PI ** 2) / 2,
                         penalty=penalty)
    data = ProblemData(f_s=f_s, f_d=f_d, g_s=None, g_d=div_u_d,
                       bc=BCSpec(stokes={"gamma_s": u_s}, darcy_flux=u_d))
    exact = ExactSolution(u_s, grad_u_s, u_d, div_u_d, p_s, p_d)
    domain = RectanglePair(0.0, 1.0, 0.0, 0.5, 1.0,
                           nx=4, ny_stokes=2, ny_darcy=2)
    return Benchmark("ex1", params, data, exact, domain=domain,
                     meta={"gamma": g, "mu": mu})


# additive constant putting the combined exact pressure into L^2_0
EX2_MEAN_SHIFT = (2.0 * np.cosh(PI) - 4.0) / PI ** 2


def example2(mu: float, K: float = 1e-4, alpha: float = 1.0,
             penalty: float | None = None) -> Benchmark:
    """Viscosity benchmark on stacked pi-by-pi squares, interface y = 0.

    The exact fields satisfy all interface conditions for every mu; the
    tangential slip term vanishes identically, so the slip coefficient
    is a free knob (default 1).
    """
    C0 = EX2_MEAN_SHIFT

    def u_s(p):
        x, y = p[:, 0], p[:, 1]
        return np.column_stack([np.sin(2 * y) * np.cos(x),
                                (np.sin(y) ** 2 - 2) * np.sin(x)])

    def grad_u_s(p):
        x, y = p[:, 0], p[:, 1]
        out = np.empty((len(p), 2, 2))
        out[:, 0, 0] = -np.sin(2 * y) * np.sin(x)
        out[:, 0, 1] = 2 * np.cos(2 * y) * np.cos(x)
        out[:, 1, 0] = (np.sin(y) ** 2 - 2) * np.cos(x)
        out[:, 1, 1] = np.sin(2 * y) * np.sin(x)
        return out

    def u_d(p):
        x, y = p[:, 0], p[:, 1]
        return np.column_stack([-2 * np.sinh(y) * np.cos(x),
                                -2 * np.cosh(y) * np.sin(x)])

    def div_u_d(p):
        return np.zeros(len(p))

    def p_s(p):
        return np.sin(p[:, 0]) * np.sin(p[:, 1]) + C0

    def p_d(p):
        return 2 * np.sinh(p[:, 1]) * np.sin(p[:, 0]) + C0

    def f_s(p):
        x, y = p[:, 0], p[:, 1]
        return np.column_stack([
            5 * mu * np.sin(2 * y) * np.cos(x) + np.cos(x) * np.sin(y),
            (-5 * mu * np.cos(y) ** 2 + mu + np.cos(y)) * np.sin(x),
        ])

    def f_d(p):
        x, y = p[:, 0], p[:, 1]
        c = 2 * (1 - mu / K)
        return np.column_stack([c * np.sinh(y) * np.cos(x),
                                c * np.cosh(y) * np.sin(x)])

    params = ModelParams(mu=mu, K=K, alpha1_over_sqrt_kappa=alpha,
                         penalty=penalty)
    data = ProblemData(f_s=f_s, f_d=f_d, g_s=None, g_d=None,
                       bc=BCSpec(stokes={"gamma_s": u_s}, darcy_flux=u_d))
    exact = ExactSolution(u_s, grad_u_s, u_d, div_u_d, p_s, p_d)
    domain = RectanglePair(0.0, PI, -PI, 0.0, PI,
                           nx=2, ny_stokes=2, ny_darcy=2)
    return Benchmark("ex2", params, data, exact, domain=domain,
                     meta={"mu": mu})


def bundled_cavity_mesh(n: int = 16) -> str:
    """Path of a packaged interface-fitted cavity mesh (n cells per side)."""
    ref = importlib.resources.files("sdfem").joinpath(f"data/cavity_n{n}.msh")
    if not ref.is_file():
        raise FileNotFoundError(f"no bundled cavity mesh cavity_n{n}.msh; "
                                "see scripts/make_cavity_mesh.py")
    return str(ref)


def example3(mu: float, lam: float, K: float = 1e-4, alpha1: float = 1.0,
             mesh_path: str | None = None,
             penalty: float | None = None) -> Benchmark:
    """Lid-driven cavity over a porous bed, gradient forcing of size lambda.

    The body force is the gradient of lambda sin(pi x) sin(pi y), which a
    pressure shift can absorb exactly, so the continuous velocity is
    independent of lambda.  The lid moves with velocity (1, 0); lid data
    wins over wall data at the corners.
    """
    lam = float(lam)

    def f(p):
        x, y = p[:, 0], p[:, 1]
        return lam * PI * np.column_stack([
            np.cos(PI * x) * np.sin(PI * y),
            np.sin(PI * x) * np.cos(PI * y),
        ])

    def lid(p):
        out = np.zeros((len(p), 2))
        out[:, 0] = 1.0
        return out

    def wall(p):
        return np.zeros((len(p), 2))

    params = ModelParams(mu=mu, K=K,
                         alpha1_over_sqrt_kappa=alpha1 / np.sqrt(K),
                         penalty=penalty)
    data = ProblemData(f_s=f, f_d=f, g_s=None, g_d=None,
                       bc=BCSpec(stokes={"lid": lid, "wall": wall,
                                         "gamma_s": wall},
                                 darcy_flux=None))
    if mesh_path is None:
        mesh_path = bundled_cavity_mesh()
    return Benchmark("ex3", params, data, None, mesh_path=mesh_path,
                     meta={"mu": mu, "lambda": lam})


# -- sweep drivers -----------------------------------------------------------

def run_sweep(example: str, methods=("classical", "robust"), k: int = 2,
              levels=(0, 1, 2, 3), gammas=(1.0,), mus=(1.0,),
              lambdas=(0.0,), K: float = 1e-4, alpha: float | None = None,
              mesh_path: str | None = None, out_dir: str | None = None,
              penalty: float | None = None, keep_solutions: bool = False,
              sample_n: int = 64):
    """Run one benchmark family over its parameter grid.

    Per mesh and set of matrix parameters the factorization is reused
    across right-hand sides (parameter values and methods).  Returns a
    dict with CSV rows, ErrorReports keyed by (method, param, level),
    and optionally the solutions; CSV and field-sample files are written
    when out_dir is given.
    """
    if example == "ex1":
        grid = [("gamma", g) for g in gammas]
        make = lambda g: example1(g, K=K, penalty=penalty)
    elif example == "ex2":
        grid = [("mu", m) for m in mus]
        make = lambda m: example2(m, K=K, penalty=penalty,
                                  **({} if alpha is None else
                                     {"alpha": alpha}))
    elif example == "ex3":
        return _run_cavity(methods=methods, k=k, mus=mus, lambdas=lambdas,
                           K=K, mesh_path=mesh_path, out_dir=out_dir,
                           penalty=penalty, keep_solutions=keep_solutions,
                           sample_n=sample_n)
    else:
        raise ValueError(f"unknown example {example!r}")

    rows, reports, solutions = [], {}, {}
    for level in levels:
        bench0 = make(grid[0][1])
        mesh = bench0.mesh_at(level)
        spaces = build_spaces(mesh, k)
        # ex1: the matrix is identical across gamma; ex2: mu changes it
        shared_matrix = example == "ex1"
        factor = None
        for pname, pval in grid:
            bench = make(pval)
            for method in methods:
                t0 = time.perf_counter()
                if shared_matrix and factor is not None:
                    system = factor.system_with_rhs(
                        mesh, spaces, bench.params, bench.data, method)
                    sol = factor.solve_rhs(system.rhs)
                else:
                    system = assemble(mesh, spaces, bench.params, bench.data,
                                      method)
                    factor = factorize(system)
                    sol = factor.solve_rhs(system.rhs)
                wall = time.perf_counter() - t0
                rep = compute_errors(sol, bench.exact, mesh, dof=system.n,
                                     wall_time=wall)
                reports[(method, pval, level)] = rep
                if keep_solutions:
                    solutions[(method, pval, level)] = sol
                rows.append(_csv_row(example, method, k, level, rep, bench))
    result = {"rows": rows, "reports": reports, "solutions": solutions}
    if out_dir is not None:
        import os
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, f"{example}_k{k}_errors.csv")
        write_csv_rows(path, rows)
        result["csv_path"] = path
    return result


def _run_cavity(methods, k, mus, lambdas, K, mesh_path, out_dir, penalty,
                keep_solutions, sample_n):
    rows, solutions, field_paths = [], {}, []
    bench0 = example3(mus[0], lambdas[0], K=K, mesh_path=mesh_path,
                      penalty=penalty)
    mesh = bench0.mesh_at(0)
    spaces = build_spaces(mesh, k)
    for mu in mus:
        factor = None
        for lam in lambdas:
            bench = example3(mu, lam, K=K, mesh_path=mesh_path,
                             penalty=penalty)
            for method in methods:
                t0 = time.perf_counter()
                if factor is None:
                    system = assemble(mesh, spaces, bench.params, bench.data,
                                      method)
                    factor = factorize(system)
                    sol = factor.solve_rhs(system.rhs)
                else:
                    system = factor.system_with_rhs(
                        mesh, spaces, bench.params, bench.data, method)
                    sol = factor.solve_rhs(system.rhs)
                wall = time.perf_counter() - t0
                solutions[(method, mu, lam)] = sol
                rep = ErrorReport(*([float("nan")] * 7), dof=system.n,
                                  h=mesh.h, wall_time=wall)
                rows.append(_csv_row("ex3", method, k, 0, rep, bench))
                if out_dir is not None:
                    import os
                    os.makedirs(out_dir, exist_ok=True)
                    fname = (f"ex3_{method}_mu{mu:g}_lambda{lam:g}"
                             f"_fields.csv")
                    fpath = os.path.join(out_dir, fname)
                    sample_velocity_grid(sol, mesh, sample_n, path=fpath)
                    field_paths.append(fpath)
    result = {"rows": rows, "solutions": solutions,
              "field_paths": field_paths, "mesh": mesh}
    if out_dir is not None:
        import os
        path = os.path.join(out_dir, f"ex3_k{k}_errors.csv")
        write_csv_rows(path, rows)
        result["csv_path"] = path
    if not keep_solutions:
        pass  # callers rely on solutions for the robustness comparisons
    return result


def _csv_row(example, method, k, level, rep: ErrorReport, bench: Benchmark):
    row = {"method": method, "example": example, "k": k, "level": level,
           "dof": rep.dof, "h": f"{rep.h:.12e}",
           "gamma": bench.meta.get("gamma", ""),
           "mu": bench.meta.get("mu", ""),
           "lambda": bench.meta.get("lambda", ""),
           "time_s": f"{rep.wall_time:.3f}"}
    for key in ("E_h", "E_h_s", "E_h1_d", "E_h2_d", "e_h", "e_h_s", "e_h_d"):
        val = getattr(rep, key)
        row[key] = "" if val != val else f"{val:.12e}"
    return row


# -- field sampling and comparisons ------------------------------------------

def sample_velocity_grid(solution, mesh, n=64, path=None):
    """Velocity and pressure samples on a uniform n-by-n grid of cell
    centers over the mesh bounding box.  Returns structured rows and
    optionally writes the x, y, subdomain, u1, u2, p CSV."""
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    xs = lo[0] + (hi[0] - lo[0]) * (np.arange(n) + 0.5) / n
    ys = lo[1] + (hi[1] - lo[1]) * (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    tri_of = mesh.locate(pts)
    rows = []
    for i, t in enumerate(tri_of):
        if t < 0:
            continue
        tag = int(mesh.tri_tag[t])
        space = solution.velocity_s.space if tag == STOKES \
            else solution.velocity_d.space
        vel = solution.velocity_s if tag == STOKES else solution.velocity_d
        row = space.cell_index.get(int(t))
        lam = mesh.barycentric(int(t), pts[i:i + 1])
        u = vel.values_in_cells([row], lam)[0, 0]
        prow = solution.pressure.space.cell_index[int(t)]
        p = solution.pressure.values_in_cells([prow], lam)[0, 0]
        rows.append((pts[i, 0], pts[i, 1], tag, u[0], u[1], p))
    if path is not None:
        import csv as _csv
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["x", "y", "subdomain", "u1", "u2", "p"])
            for r in rows:
                w.writerow([f"{r[0]:.12e}", f"{r[1]:.12e}", r[2],
                            f"{r[3]:.12e}", f"{r[4]:.12e}", f"{r[5]:.12e}"])
    return rows


def velocity_relative_difference(sol_a, sol_b):
    """Max relative difference of stacked velocity coefficient vectors."""
    va = np.concatenate([sol_a.velocity_s.coefficients,
                         sol_a.velocity_d.coefficients])
    vb = np.concatenate([sol_b.velocity_s.coefficients,
                         sol_b.velocity_d.coefficients])
    scale = max(np.abs(va).max(), np.abs(vb).max(), 1e-300)
    return float(np.abs(va - vb).max() / scale)


def velocity_max(solution, mesh, n=48):
    """Max sampled velocity magnitude on a uniform grid."""
    rows = sample_velocity_grid(solution, mesh, n)
    mags = [np.hypot(r[3], r[4]) for r in rows]
    return float(max(mags))
