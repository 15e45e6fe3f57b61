"""Error norms against analytic exact solutions and empirical orders.

The coupled velocity norm combines the H1 seminorm on the free-flow
side with the L2 norms of the porous velocity and of its divergence:
E_h^2 = (E_h^s)^2 + (E_h1_d)^2 + (E_h2_d)^2.  Exact gradients and
divergences are supplied analytically by the benchmark, never by
numerical differentiation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, asdict

import numpy as np

from .mesh import STOKES, DARCY
from .quadrature import triangle_rule
from . import fespace as fs

__all__ = ["ErrorReport", "compute_errors", "convergence_rates",
           "CSV_COLUMNS", "write_csv_rows"]

ERROR_DEGREE = 8

CSV_COLUMNS = ["method", "example", "k", "level", "dof", "h",
               "E_h", "E_h_s", "E_h1_d", "E_h2_d",
               "e_h", "e_h_s", "e_h_d", "gamma", "mu", "lambda", "time_s"]


@dataclass
class ErrorReport:
    """The seven error components plus run metadata."""

    E_h: float
    E_h_s: float
    E_h1_d: float
    E_h2_d: float
    e_h: float
    e_h_s: float
    e_h_d: float
    dof: int
    h: float
    wall_time: float = 0.0

    def as_dict(self):
        return asdict(self)


def _quad_pts(mesh, tris, rule):
    _, area = fs.tri_linear_geometry(mesh, tris)
    pts = np.einsum("qj,tjd->tqd", rule.points,
                    mesh.vertices[mesh.triangles[tris]])
    return area, pts


def compute_errors(solution, exact, mesh, dof=None, degree=ERROR_DEGREE,
                   wall_time=0.0) -> ErrorReport:
    """All seven error components of one solution via fixed quadrature.

    `exact` provides vectorized callables u_s, grad_u_s, u_d, div_u_d,
    p_s, p_d (gradient shape (n, 2, 2) with [c, m] = d u_c / d x_m).
    """
    rule = triangle_rule(degree)
    w = rule.weights
    ss = solution.velocity_s.space
    ds = solution.velocity_d.space
    ps = solution.pressure.space

    rows_s = np.arange(len(ss.cells))
    area_s, pts_s = _quad_pts(mesh, ss.cells, rule)
    gh = solution.velocity_s.gradients_in_cells(rows_s, rule.points)
    gx = np.asarray(exact.grad_u_s(pts_s.reshape(-1, 2)))
    diff = gh - gx.reshape(gh.shape)
    E_s2 = float(np.einsum("q,tqcm->", w, diff ** 2 * (2.0 * area_s)[:, None,
                                                       None, None]))

    rows_d = np.arange(len(ds.cells))
    area_d, pts_d = _quad_pts(mesh, ds.cells, rule)
    uh = solution.velocity_d.values_in_cells(rows_d, rule.points)
    ux = np.asarray(exact.u_d(pts_d.reshape(-1, 2))).reshape(uh.shape)
    diff = uh - ux
    E_d12 = float(np.einsum("q,tqd->", w, diff ** 2 * (2.0 * area_d)[:, None,
                                                       None]))
    dh = solution.velocity_d.divergence_in_cells(rows_d, rule.points)
    dx = np.asarray(exact.div_u_d(pts_d.reshape(-1, 2))).reshape(dh.shape)
    diff = dh - dx
    E_d22 = float(np.einsum("q,tq->", w, diff ** 2 * (2.0 * area_d)[:, None]))

    e_s2 = _pressure_error_sq(solution.pressure, exact.p_s, mesh, STOKES, rule)
    e_d2 = _pressure_error_sq(solution.pressure, exact.p_d, mesh, DARCY, rule)

    report = ErrorReport(
        E_h=math.sqrt(E_s2 + E_d12 + E_d22),
        E_h_s=math.sqrt(E_s2),
        E_h1_d=math.sqrt(E_d12),
        E_h2_d=math.sqrt(E_d22),
        e_h=math.sqrt(e_s2 + e_d2),
        e_h_s=math.sqrt(e_s2),
        e_h_d=math.sqrt(e_d2),
        dof=int(dof) if dof is not None else -1,
        h=mesh.h,
        wall_time=wall_time,
    )
    return report


def _pressure_error_sq(p_field, p_exact, mesh, tag, rule):
    ps = p_field.space
    sel = np.nonzero(mesh.tri_tag[ps.cells] == tag)[0]
    if len(sel) == 0:
        return 0.0
    area, pts = _quad_pts(mesh, ps.cells[sel], rule)
    ph = p_field.values_in_cells(sel, rule.points)
    px = np.asarray(p_exact(pts.reshape(-1, 2))).reshape(ph.shape)
    diff = ph - px
    return float(np.einsum("q,tq->", rule.weights,
                           diff ** 2 * (2.0 * area)[:, None]))


def convergence_rates(reports, key="E_h"):
    """Empirical orders between consecutive refinements.

    Returns a list of dicts with both conventions: "order_h" is
    log(err ratio) / log(h ratio), "order_dof" is
    log(err ratio) / log(dof ratio) (the dof count doubles rank under
    uniform 2D refinement, so order_dof is about half of order_h).
    Zero errors yield NaN entries flagged "exact".
    """
    if len(reports) < 2:
        raise ValueError("need at least two reports")
    out = []
    for prev, cur in zip(reports, reports[1:]):
        e0, e1 = getattr(prev, key), getattr(cur, key)
        entry = {"order_h": math.nan, "order_dof": math.nan, "exact": False}
        if e0 <= 0.0 or e1 <= 0.0:
            entry["exact"] = True
        else:
            ratio = e0 / e1
            entry["order_h"] = math.log(ratio) / math.log(prev.h / cur.h)
            entry["order_dof"] = math.log(ratio) / math.log(cur.dof / prev.dof)
        out.append(entry)
    return out


def write_csv_rows(path, rows):
    """Write sweep rows (dicts keyed by CSV_COLUMNS) deterministically."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in CSV_COLUMNS})
