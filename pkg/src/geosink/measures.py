"""Discrete probability measures on the flat torus and the round sphere.

Measures arrive in two ways: by sampling a log-density exponent f (the
measure is proportional to e^{-f} dV) on a structured grid, or from a
point-cloud text file. Either way the result is a `DiscreteMeasure`:
a chart tag, a coordinate array, and probability weights normalized by
explicit division (pairwise summation keeps this deterministic and is
plenty accurate at the sizes we run).

Torus charts use coordinates in [0, 1)^n. Sphere charts use (phi, theta)
with phi in [0, 2*pi) and theta strictly inside (0, pi); the grids used
by the fast backends never touch the poles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expressions import parse_expression
from .sphere import SphericalGrid, sphere_embed
from .torus import TorusGrid

__all__ = [
    "EXP_BOUND",
    "ManifoldPoint",
    "DensityField",
    "DiscreteMeasure",
    "discretize_torus",
    "discretize_sphere",
    "load_point_cloud",
    "check_density_property",
]

# largest |exponent| we allow before e^{-f} leaves double range
EXP_BOUND = 700.0


@dataclass(frozen=True)
class ManifoldPoint:
    """A single point, tagged by chart: "torus" (n coords) or "sphere" (phi, theta)."""

    chart: str
    coords: tuple

    def __post_init__(self):
        if self.chart == "torus":
            if not 1 <= len(self.coords) <= 3:
                raise ValueError("torus points have 1 to 3 coordinates")
            object.__setattr__(
                self, "coords", tuple(float(c) % 1.0 for c in self.coords)
            )
        elif self.chart == "sphere":
            if len(self.coords) != 2:
                raise ValueError("sphere points are (phi, theta) pairs")
            phi, theta = float(self.coords[0]), float(self.coords[1])
            if not 0.0 < theta < np.pi:
                raise ValueError(f"colatitude must lie in (0, pi), got {theta}")
            object.__setattr__(self, "coords", (phi % (2.0 * np.pi), theta))
        else:
            raise ValueError(f"unknown chart {self.chart!r}")

    def to_unit_vector(self):
        if self.chart != "sphere":
            raise ValueError("only sphere points embed as unit vectors")
        return sphere_embed(self.coords[0], self.coords[1])


class DensityField:
    """Log-density exponent f, so the associated measure is e^{-f} dV.

    Wraps a vectorized evaluator over coordinate rows. The classmethods
    build evaluators from expression strings: torus expressions use the
    variables x1..xn, sphere expressions use phi and theta.
    """

    def __init__(self, chart, evaluator, source=None, smoothness=None):
        self.chart = chart
        self._evaluator = evaluator
        self.source = source
        self.smoothness = smoothness

    @classmethod
    def torus_expression(cls, text, n, smoothness=None):
        names = [f"x{i + 1}" for i in range(n)]
        expr = parse_expression(text, names)

        def evaluate(coords):
            coords = np.atleast_2d(np.asarray(coords, dtype=float))
            env = {name: coords[:, i] for i, name in enumerate(names)}
            return np.broadcast_to(
                np.asarray(expr(env), dtype=float), (coords.shape[0],)
            ).copy()

        return cls("torus", evaluate, source=text, smoothness=smoothness)

    @classmethod
    def sphere_expression(cls, text, smoothness=None):
        expr = parse_expression(text, ["phi", "theta"])

        def evaluate(coords):
            coords = np.atleast_2d(np.asarray(coords, dtype=float))
            env = {"phi": coords[:, 0], "theta": coords[:, 1]}
            return np.broadcast_to(
                np.asarray(expr(env), dtype=float), (coords.shape[0],)
            ).copy()

        return cls("sphere", evaluate, source=text, smoothness=smoothness)

    @classmethod
    def constant(cls, chart, value=0.0):
        return cls(
            chart,
            lambda coords: np.full(np.atleast_2d(coords).shape[0], float(value)),
            source=repr(float(value)),
        )

    def __call__(self, coords):
        values = self._evaluator(coords)
        if not np.all(np.isfinite(values)):
            raise ValueError("density exponent evaluated to a non-finite value")
        if np.any(np.abs(values) > EXP_BOUND):
            raise ValueError(
                f"density exponent exceeds {EXP_BOUND} in magnitude; "
                "e^{-f} would leave double-precision range"
            )
        return values


class DiscreteMeasure:
    """Weighted point cloud: chart tag, (N, d) coordinates, weights summing to 1."""

    def __init__(self, chart, coords, weights):
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (coords.shape[0],):
            raise ValueError("one weight per point required")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and nonnegative")
        total = weights.sum()
        if not np.isclose(total, 1.0, rtol=0.0, atol=1e-12):
            raise ValueError(f"weights must sum to 1 within 1e-12, got {total!r}")
        if len(np.unique(coords, axis=0)) != coords.shape[0]:
            raise ValueError("points must be pairwise distinct")
        self.chart = chart
        self.coords = coords
        self.weights = weights

    @property
    def size(self):
        return self.coords.shape[0]

    def point(self, i):
        return ManifoldPoint(self.chart, tuple(self.coords[i]))

    def __iter__(self):
        return (self.point(i) for i in range(self.size))


def _normalized_from_log(log_w):
    # shift before exponentiating so a constant added to f cancels exactly
    w = np.exp(log_w - log_w.max())
    return w / w.sum()


def discretize_torus(f, k, n):
    """Sample e^{-f} dV on the uniform k^n lattice and normalize.

    Accepts a DensityField or an expression string over x1..xn. A constant
    shift of f leaves the weights unchanged.
    """
    if isinstance(f, str):
        f = DensityField.torus_expression(f, n)
    grid = TorusGrid(n, k)
    pts = grid.points()
    weights = _normalized_from_log(-f(pts))
    return DiscreteMeasure("torus", pts, weights)


def discretize_sphere(f, grid):
    """Sample e^{-f} against the quadrature weights of a SphericalGrid.

    For f constant the output weights are exactly the quadrature weights.
    """
    if isinstance(f, str):
        f = DensityField.sphere_expression(f)
    if not isinstance(grid, SphericalGrid):
        raise TypeError("discretize_sphere needs a SphericalGrid")
    ang = grid.angles()
    log_w = np.log(grid.node_weights) - f(ang)
    return DiscreteMeasure("sphere", ang, _normalized_from_log(log_w))


# ---------------------------------------------------------------------------
# point-cloud files
# ---------------------------------------------------------------------------

_TORUS_TAGS = {"torus1": 1, "torus2": 2, "torus3": 3}


def _parse_record(tag, fields, lineno, ndim):
    """Return (chart, coords, weight-or-None) for one whitespace-split record."""
    if tag in _TORUS_TAGS:
        n = _TORUS_TAGS[tag]
        chart = "torus"
    elif tag == "torus":
        # bare tag: dimension from the caller, or unambiguous single coordinate
        chart = "torus"
        if ndim is not None:
            n = ndim
        elif len(fields) == 1:
            n = 1
        else:
            raise ValueError(
                f"line {lineno}: bare 'torus' tag is ambiguous with "
                f"{len(fields)} numbers; use torus1/torus2/torus3"
            )
    elif tag == "sphere":
        chart = "sphere"
        n = 2
    else:
        raise ValueError(f"line {lineno}: unknown chart tag {tag!r}")
    if len(fields) not in (n, n + 1):
        raise ValueError(
            f"line {lineno}: expected {n} coordinates plus optional weight, "
            f"got {len(fields)} numbers"
        )
    try:
        numbers = [float(s) for s in fields]
    except ValueError as exc:
        raise ValueError(f"line {lineno}: {exc}") from None
    coords = numbers[:n]
    weight = numbers[n] if len(numbers) == n + 1 else None
    if chart == "torus":
        coords = [c % 1.0 for c in coords]
    else:
        phi, theta = coords
        if not 0.0 < theta < np.pi:
            raise ValueError(f"line {lineno}: colatitude {theta} outside (0, pi)")
        coords = [phi % (2.0 * np.pi), theta]
    return chart, coords, weight


def load_point_cloud(path, renormalize=False, ndim=None):
    """Read a whitespace-separated point cloud file into a DiscreteMeasure.

    Each record is `chart_tag coord1 ... [weight]`; `#` starts a comment.
    Weights are all-or-none; when absent every point gets 1/N. A weight
    sum farther than 1e-6 from 1 is rejected unless renormalize is set.
    """
    charts, rows, weights = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            chart, coords, weight = _parse_record(
                fields[0], fields[1:], lineno, ndim
            )
            charts.append(chart)
            rows.append(coords)
            weights.append(weight)
    if not rows:
        raise ValueError(f"{path}: no records found")
    if len(set(charts)) != 1:
        raise ValueError(f"{path}: mixed chart tags")
    dims = {len(r) for r in rows}
    if len(dims) != 1:
        raise ValueError(f"{path}: inconsistent coordinate counts")
    has_w = [w is not None for w in weights]
    if any(has_w) and not all(has_w):
        raise ValueError(f"{path}: weights must be given for all points or none")
    coords = np.array(rows, dtype=float)
    if all(has_w):
        w = np.array(weights, dtype=float)
        if np.any(w < 0):
            raise ValueError(f"{path}: negative weight")
        total = w.sum()
        if abs(total - 1.0) > 1e-6:
            if not renormalize:
                raise ValueError(
                    f"{path}: weights sum to {total!r}; pass renormalize to accept"
                )
            w = w / total
        else:
            w = w / total
    else:
        w = np.full(len(rows), 1.0 / len(rows))
    return DiscreteMeasure(charts[0], coords, w)


# ---------------------------------------------------------------------------
# density property
# ---------------------------------------------------------------------------


def _ball_masses(measure, centers, radius):
    if measure.chart == "torus":
        diff = np.abs(measure.coords[None, :, :] - centers[:, None, :])
        diff = np.minimum(diff, 1.0 - diff)
        dist = np.sqrt((diff**2).sum(axis=2))
    else:
        xyz = sphere_embed(measure.coords[:, 0], measure.coords[:, 1])
        cxyz = sphere_embed(centers[:, 0], centers[:, 1])
        # chordal metric: comparable to the geodesic one at small radius
        dist = np.linalg.norm(xyz[None, :, :] - cxyz[:, None, :], axis=2)
    return (measure.weights[None, :] * (dist <= radius)).sum(axis=1)


def check_density_property(measure, k, radius, sample_centers):
    """Minimum over centers of k^{-1} log m(B(center, radius)).

    Values near zero from below mean every sampled ball carries mass
    bounded below by e^{k * value}; an empty ball gives -inf. Centers are
    coordinate rows in the measure's chart (torus distances are periodic
    euclidean, sphere distances chordal).
    """
    centers = np.atleast_2d(np.asarray(sample_centers, dtype=float))
    if centers.shape[1] != measure.coords.shape[1]:
        raise ValueError("center dimension does not match the measure")
    masses = _ball_masses(measure, centers, radius)
    with np.errstate(divide="ignore"):
        values = np.log(masses) / k
    worst = int(np.argmin(values))
    return {
        "min": float(values[worst]),
        "worst_center": centers[worst].tolist(),
        "values": values,
    }
