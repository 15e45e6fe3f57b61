"""Gaussian quadrature on reference triangles and edges.

Triangle rules are fixed symmetric interior-point rules with positive
weights, stored as orbit data (centroid / 3-point / 6-point orbits under
vertex permutation) with 25 significant digits.  Edge rules are
Gauss-Legendre on [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = ["QuadratureRule", "triangle_rule", "edge_rule",
           "integrate_on_triangle", "integrate_on_edge"]


@dataclass(frozen=True)
class QuadratureRule:
    """A fixed quadrature rule on the reference triangle or unit interval.

    Attributes
    ----------
    points : ndarray
        Barycentric coordinates, shape (n, 3), for triangle rules;
        parametric coordinates in [0, 1], shape (n,), for edge rules.
    weights : ndarray
        Weights summing to the reference measure (1/2 for the triangle,
        1 for the interval).  All stored rules have positive weights.
    exact_degree : int
        Highest total polynomial degree integrated exactly.
    kind : str
        "triangle" or "edge".
    """

    points: np.ndarray
    weights: np.ndarray
    exact_degree: int
    kind: str

    def __post_init__(self):
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def n_points(self) -> int:
        return len(self.weights)


# Orbit tables: ("c", w) centroid; ("a", w, a) the 3 permutations of
# (a, a, 1-2a); ("b", w, a, b) the 6 permutations of (a, b, 1-a-b).
# Weights sum to 1/2.  Values solved from the symmetric moment equations
# to 40-digit working precision; worst monomial defect below 1e-40.
_TRI_ORBITS = {
    1: (("c", "0.5"),),
    2: (("a", "0.1666666666666666666666667", "0.1666666666666666666666667"),),
    4: (
        ("a", "0.1116907948390057328475035", "0.4459484909159648863183293"),
        ("a", "0.05497587182766093381916316", "0.09157621350977074345957146"),
    ),
    5: (
        ("c", "0.1125"),
        ("a", "0.06619707639425309036882469", "0.4701420641051150897704412"),
        ("a", "0.06296959027241357629784197", "0.1012865073234563388009874"),
    ),
    6: (
        ("a", "0.0254224531851034084604684", "0.0630890144915022283403316"),
        ("a", "0.05839313786318968301264481", "0.2492867451709104212916386"),
        ("b", "0.04142553780918678759677673", "0.3103524510337844054166077",
         "0.6365024991213986472301426"),
    ),
    8: (
        ("c", "0.07215780383889358412554556"),
        ("a", "0.04754581713364231239694805", "0.4592925882927231560288155"),
        ("a", "0.05160868526735912514089578", "0.1705693077517602066222935"),
        ("a", "0.01622924881159904015546296", "0.05054722831703097545842355"),
        ("b", "0.01361515708721749713242235", "0.2631128296346381134217858",
         "0.7284923929554042812410004"),
    ),
    9: (
        ("c", "0.04856789814139941690962099"),
        ("a", "0.01566735011356953526842742", "0.4896825191987376277837069"),
        ("a", "0.03891377050238713965836968", "0.4370895914929366372699304"),
        ("a", "0.03982386946360512651644589", "0.1882035356190327302409613"),
        ("a", "0.0127888378293490156308394", "0.04472951339445270986510659"),
        ("b", "0.02164176968864468864468864", "0.2219629891607656956751025",
         "0.7411985987844980206900799"),
    ),
    10: (
        ("c", "0.0454089951913767900476433"),
        ("a", "0.01836297887823335235850304", "0.4855776333836573773675075"),
        ("a", "0.02266052971776396739130282", "0.1094815754850370547954586"),
        ("b", "0.03637895842271005430215759", "0.1417072194148799547566833",
         "0.307939838764120950165155"),
        ("b", "0.01416362126552874241836853", "0.02500353476268638607398848",
         "0.2466725606399026939172765"),
        ("b", "0.004710833481866411729963735", "0.00954081540029945758015281",
         "0.06680325101220026577354021"),
    ),
}

_MAX_TRI_DEGREE = 10


def _expand_orbits(orbits):
    pts, wts = [], []
    for orbit in orbits:
        kind, w = orbit[0], float(orbit[1])
        if kind == "c":
            third = 1.0 / 3.0
            pts.append((third, third, third))
            wts.append(w)
        elif kind == "a":
            a = float(orbit[2])
            c = 1.0 - 2.0 * a
            for p in ((a, a, c), (a, c, a), (c, a, a)):
                pts.append(p)
                wts.append(w)
        else:
            a, b = float(orbit[2]), float(orbit[3])
            c = 1.0 - a - b
            for p in ((a, b, c), (b, a, c), (a, c, b),
                      (c, a, b), (b, c, a), (c, b, a)):
                pts.append(p)
                wts.append(w)
    return np.array(pts), np.array(wts)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Symmetric rule on the reference triangle, exact to `degree`.

    Degrees 3 and 7 are served by the next stronger table entry so that
    every returned rule has positive weights.
    """
    if degree < 1:
        raise ValueError(f"quadrature degree must be >= 1, got {degree}")
    if degree > _MAX_TRI_DEGREE:
        raise ValueError(
            f"no triangle rule tabulated beyond degree {_MAX_TRI_DEGREE}"
            f" (requested {degree})")
    table_degree = min(d for d in _TRI_ORBITS if d >= degree)
    pts, wts = _expand_orbits(_TRI_ORBITS[table_degree])
    return QuadratureRule(pts, wts, table_degree, "triangle")


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1], exact to `degree`."""
    if degree < 0:
        raise ValueError(f"quadrature degree must be >= 0, got {degree}")
    n = max(1, (degree + 2) // 2)
    nodes, weights = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(0.5 * (nodes + 1.0), 0.5 * weights,
                          2 * n - 1, "edge")


def physical_points(rule: QuadratureRule, vertices: np.ndarray) -> np.ndarray:
    """Map rule points to physical coordinates.

    `vertices` is (3, 2) for a triangle rule or (2, 2) for an edge rule;
    batched shapes (m, 3, 2) / (m, 2, 2) are accepted and return
    (m, n, 2).
    """
    if rule.kind == "triangle":
        return np.einsum("qj,...jd->...qd", rule.points, vertices)
    lam = np.stack([1.0 - rule.points, rule.points], axis=-1)
    return np.einsum("qj,...jd->...qd", lam, vertices)


def integrate_on_triangle(rule: QuadratureRule, mesh, tri_id: int,
                          integrand) -> float:
    """Integrate `integrand(points) -> values` over one mesh triangle.

    The callback receives physical points of shape (n, 2) and must return
    (n,) values.  The affine Jacobian is 2*area.
    """
    verts = mesh.vertices[mesh.triangles[tri_id]]
    pts = physical_points(rule, verts)
    vals = np.asarray(integrand(pts), dtype=float)
    return float(2.0 * mesh.tri_area[tri_id] * (rule.weights @ vals))


def integrate_on_edge(rule: QuadratureRule, mesh, edge_id: int,
                      integrand) -> float:
    """Integrate `integrand(points) -> values` along one mesh edge."""
    verts = mesh.vertices[mesh.edges[edge_id]]
    pts = physical_points(rule, verts)
    vals = np.asarray(integrand(pts), dtype=float)
    return float(mesh.edge_length[edge_id] * (rule.weights @ vals))
