import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from .geometry import EDGE_TOLERANCE, convex_hull, edge_function, inside_convex, signed_area
from .utilities import BoxcertUtilities, BoxcertValidationError, DegeneratePolygon

logger = logging.getLogger(__name__)

AXIS_ALIGNED = "axis_aligned"
UNIFORM_SIMPLEX = "uniform_simplex"
ADAPTIVE_SIMPLEX = "adaptive_simplex"
SUPPORTED_STRATEGIES = (AXIS_ALIGNED, UNIFORM_SIMPLEX, ADAPTIVE_SIMPLEX)
MIN_TRIANGLE_AREA = 1e-9


@dataclass(frozen=True, eq=False)
class ConvexPolygon(object):
    """
    Convex polygon with counter-clockwise vertices (positive signed area), no repeated vertices.
    """

    vertices: np.ndarray

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] != 2 or len(vertices) < 3:
            raise DegeneratePolygon(f"A polygon needs at least 3 two-dimensional vertices, got shape {vertices.shape}")
        if not np.all(np.isfinite(vertices)):
            raise DegeneratePolygon("Polygon vertices must be finite")
        if len(np.unique(vertices, axis=0)) != len(vertices):
            raise DegeneratePolygon(f"Polygon has repeated vertices: {vertices.tolist()}")
        if signed_area(vertices) <= 0.0:
            raise DegeneratePolygon(f"Polygon must be counter-clockwise with positive area: {vertices.tolist()}")
        for index in range(len(vertices)):
            a, b, c = vertices[index], vertices[(index + 1) % len(vertices)], vertices[(index + 2) % len(vertices)]
            if edge_function(a[0], a[1], b[0], b[1], c[0], c[1]) < -EDGE_TOLERANCE:
                raise DegeneratePolygon(f"Polygon is not convex at vertex {(index + 1) % len(vertices)}")
        vertices.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)

    @classmethod
    def from_points(cls, points) -> "ConvexPolygon":
        """
        Convex hull of arbitrary points.

        :raises DegeneratePolygon: if the points are collinear or fewer than 3 are distinct
        """
        hull = convex_hull(points)
        if len(hull) < 3:
            raise DegeneratePolygon(f"Points span no area: {np.asarray(points).tolist()}")
        return cls(hull)

    @property
    def area(self) -> float:
        return signed_area(self.vertices)

    def contains(self, points, tolerance: float = EDGE_TOLERANCE) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return inside_convex(self.vertices, points[:, 0], points[:, 1], tolerance)


@dataclass(frozen=True, eq=False)
class SampleBatch(object):
    points: np.ndarray
    strategy: str
    seed: int


def fan_triangulate(poly: ConvexPolygon) -> List[np.ndarray]:
    """ Triangles ``(v0, v_k, v_k+1)`` for k in 1..V-2 """
    if poly.area < 1e-12:
        raise DegeneratePolygon(f"Polygon area {poly.area:.3g} is too small to triangulate")
    v = poly.vertices
    return [np.array([v[0], v[k], v[k + 1]]) for k in range(1, len(v) - 1)]


def triangle_area(triangle: np.ndarray) -> float:
    (ax, ay), (bx, by), (cx, cy) = triangle
    return 0.5 * abs(edge_function(ax, ay, bx, by, cx, cy))


def _sample_triangles(triangles: np.ndarray, u: np.ndarray) -> np.ndarray:
    flip = u.sum(axis=1) > 1.0
    u[flip] = 1.0 - u[flip]
    a, b, c = triangles[:, 0], triangles[:, 1], triangles[:, 2]
    return a + u[:, :1] * (b - a) + u[:, 1:] * (c - a)


def _check_count(n: int):
    if int(n) != n or n <= 0:
        raise BoxcertValidationError(f"Sample count must be a positive integer, got {n}")


def sample_axis_aligned(poly: ConvexPolygon, n: int, seed: int) -> SampleBatch:
    """
    Normalized random convex combinations of the polygon vertices. Cheap but biased toward the centroid.
    """
    _check_count(n)
    rng = BoxcertUtilities.seeded_generator(seed)
    weights = rng.random((int(n), len(poly.vertices)))
    weights /= weights.sum(axis=1, keepdims=True)
    return SampleBatch(weights @ poly.vertices, AXIS_ALIGNED, seed)


def sample_uniform_simplex(poly: ConvexPolygon, n: int, seed: int) -> SampleBatch:
    """
    Area-uniform samples: a fan triangle is drawn with probability proportional to its area, then a
    point is drawn uniformly inside it by folding the unit square onto the triangle.
    """
    _check_count(n)
    rng = BoxcertUtilities.seeded_generator(seed)
    triangles = np.array(fan_triangulate(poly))
    areas = np.array([triangle_area(triangle) for triangle in triangles])
    chosen = rng.choice(len(triangles), size=int(n), p=areas / areas.sum())
    points = _sample_triangles(triangles[chosen], rng.random((int(n), 2)))
    return SampleBatch(points, UNIFORM_SIMPLEX, seed)


def sample_adaptive_simplex(poly: ConvexPolygon, density: float, seed: int) -> SampleBatch:
    """
    Places ``round(density * area)`` samples in every fan triangle, at least one in every triangle with an area
    above ``MIN_TRIANGLE_AREA``. Each triangle draws from its own stream, so its samples do not depend on
    the others.

    :param poly: Convex polygon
    :param density: Samples per square pixel
    :param seed: Root seed
    :return: SampleBatch with the samples of every triangle in fan order
    """
    if not density > 0.0:
        raise BoxcertValidationError(f"Sample density must be positive, got {density}")
    batches = []
    for index, triangle in enumerate(fan_triangulate(poly)):
        area = triangle_area(triangle)
        count = int(np.floor(density * area + 0.5))
        if count == 0 and area > MIN_TRIANGLE_AREA:
            count = 1
        if count == 0:
            continue
        rng = BoxcertUtilities.seeded_generator(seed, index)
        batches.append(_sample_triangles(np.repeat(triangle[None], count, axis=0), rng.random((count, 2))))
    points = np.concatenate(batches) if batches else np.empty((0, 2))
    logger.debug(f"Adaptive sampling placed {len(points)} points over {len(poly.vertices) - 2} triangles")
    return SampleBatch(points, ADAPTIVE_SIMPLEX, seed)


def sample(poly: ConvexPolygon, strategy: str, n: int, seed: int) -> SampleBatch:
    """
    Dispatches to a sampling strategy. The adaptive strategy receives the density that yields about ``n`` samples.
    """
    if strategy == AXIS_ALIGNED:
        return sample_axis_aligned(poly, n, seed)
    if strategy == UNIFORM_SIMPLEX:
        return sample_uniform_simplex(poly, n, seed)
    if strategy == ADAPTIVE_SIMPLEX:
        _check_count(n)
        return sample_adaptive_simplex(poly, n / poly.area, seed)
    raise BoxcertValidationError(
        f"Unsupported sampling strategy [{strategy}]. Supported values are [{','.join(SUPPORTED_STRATEGIES)}]"
    )
