import itertools
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .utilities import (
    BoxcertValidationError,
    DegenerateBaseline,
    DegenerateMatrix,
    PointBehindCamera,
)

logger = logging.getLogger(__name__)

ORTHONORMALITY_TOLERANCE = 1e-9
DEFAULT_DEPTH_MIN = 1e-6
MIN_BASELINE = 1e-9
EDGE_TOLERANCE = 1e-9

LEFT = "left"
RIGHT = "right"
VIEWS = (LEFT, RIGHT)


def _readonly_array(values, shape: tuple, name: str) -> np.ndarray:
    array = np.array(values, dtype=float)
    if array.shape != shape:
        raise BoxcertValidationError(f"'{name}' must have shape {shape}, got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise BoxcertValidationError(f"'{name}' must be finite, got {array.tolist()}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Rotation3(object):
    """
    Proper rotation matrix.

    :ivar m: 3x3 orthonormal matrix with determinant +1
    """

    m: np.ndarray

    def __post_init__(self):
        m = _readonly_array(self.m, (3, 3), "rotation")
        if np.max(np.abs(m @ m.T - np.eye(3))) > ORTHONORMALITY_TOLERANCE:
            raise BoxcertValidationError(f"Rotation matrix is not orthonormal: {m.tolist()}")
        if abs(np.linalg.det(m) - 1.0) > ORTHONORMALITY_TOLERANCE:
            raise BoxcertValidationError(f"Rotation matrix determinant must be +1: {m.tolist()}")
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Rotation3":
        return cls(np.eye(3))

    @classmethod
    def about_axis(cls, axis: Sequence[float], angle: float) -> "Rotation3":
        """
        Builds a rotation of ``angle`` radians about ``axis`` with the Rodrigues formula.

        :param axis: Rotation axis, normalized internally
        :param angle: Rotation angle in radians
        :return: Rotation3 instance
        """
        axis = np.asarray(axis, dtype=float)
        norm = np.linalg.norm(axis)
        if norm == 0.0:
            raise BoxcertValidationError("Rotation axis must be non-zero")
        k = axis / norm
        skew = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
        m = np.eye(3) + np.sin(angle) * skew + (1.0 - np.cos(angle)) * (skew @ skew)
        return cls(m)

    def compose(self, other: "Rotation3") -> "Rotation3":
        return Rotation3(self.m @ other.m)

    def inverse(self) -> "Rotation3":
        return Rotation3(self.m.T)


@dataclass(frozen=True, eq=False)
class Pose(object):
    """
    Rigid transform mapping points from a source frame into a target frame, ``p' = R p + t``.

    :ivar rotation: Rotation part
    :ivar translation: Translation in meters
    """

    rotation: Rotation3
    translation: np.ndarray

    def __post_init__(self):
        if not isinstance(self.rotation, Rotation3):
            object.__setattr__(self, "rotation", Rotation3(self.rotation))
        object.__setattr__(self, "translation", _readonly_array(self.translation, (3,), "translation"))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(Rotation3.identity(), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix) -> "Pose":
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != (4, 4):
            raise BoxcertValidationError(f"Homogeneous transform must be 4x4, got {matrix.shape}")
        if not np.allclose(matrix[3], [0.0, 0.0, 0.0, 1.0]):
            raise BoxcertValidationError(f"Homogeneous transform last row must be [0, 0, 0, 1]: {matrix[3].tolist()}")
        return cls(Rotation3(matrix[:3, :3]), matrix[:3, 3])

    def as_matrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation.m
        matrix[:3, 3] = self.translation
        return matrix

    def compose(self, other: "Pose") -> "Pose":
        """ Returns ``self ∘ other``: ``other`` is applied first """
        return Pose(
            Rotation3(self.rotation.m @ other.rotation.m),
            self.rotation.m @ other.translation + self.translation
        )

    def inverse(self) -> "Pose":
        rotation_t = self.rotation.m.T
        return Pose(Rotation3(rotation_t), -rotation_t @ self.translation)

    def transform(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.m.T + self.translation


@dataclass(frozen=True, eq=False)
class Shape(object):
    """
    Anisotropic scale factors (a, b, c) turning the unit cube into a cuboid.

    :ivar dims: Edge lengths in meters, all strictly positive
    """

    dims: np.ndarray

    def __post_init__(self):
        dims = _readonly_array(self.dims, (3,), "dims")
        if np.any(dims <= 0.0):
            raise BoxcertValidationError(f"Shape dimensions must be positive, got {dims.tolist()}")
        object.__setattr__(self, "dims", dims)


@dataclass(frozen=True, eq=False)
class PinholeCamera(object):
    """
    Ideal pinhole camera. Pixel coordinates are anchored at pixel centers: (0, 0) is the
    center of the top-left pixel, so the image spans [-0.5, width - 0.5] x [-0.5, height - 0.5].
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise BoxcertValidationError(f"Camera parameter '{name}' must be finite")
            object.__setattr__(self, name, value)
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise BoxcertValidationError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if int(self.width) != self.width or int(self.height) != self.height or self.width <= 0 or self.height <= 0:
            raise BoxcertValidationError(f"Image size must be positive integers, got {self.width}x{self.height}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.array([
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0]
        ])

    def contains(self, pixels) -> np.ndarray:
        pixels = np.atleast_2d(np.asarray(pixels, dtype=float))
        return (
            (pixels[:, 0] >= -0.5) & (pixels[:, 0] <= self.width - 0.5) &
            (pixels[:, 1] >= -0.5) & (pixels[:, 1] <= self.height - 0.5)
        )


@dataclass(frozen=True, eq=False)
class StereoRig(object):
    """
    Calibrated stereo pair. The left camera frame is the reference frame of the rig.

    :ivar left: Left camera intrinsics
    :ivar right: Right camera intrinsics
    :ivar t_right_from_left: Transform mapping left-frame points into the right camera frame
    """

    left: PinholeCamera
    right: PinholeCamera
    t_right_from_left: Pose

    def __post_init__(self):
        if not np.any(self.t_right_from_left.translation != 0.0):
            raise BoxcertValidationError("Stereo rig baseline must be non-zero")

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.t_right_from_left.translation))

    def camera(self, view: str) -> PinholeCamera:
        if view == LEFT:
            return self.left
        if view == RIGHT:
            return self.right
        raise BoxcertValidationError(f"Unknown view [{view}]. Supported values are [{','.join(VIEWS)}]")

    def view_pose(self, pose: Pose, view: str) -> Pose:
        """ Expresses an object-to-left pose in the frame of the requested camera """
        if view == LEFT:
            return pose
        self.camera(view)
        return self.t_right_from_left.compose(pose)


@dataclass(frozen=True, eq=False)
class CanonicalCube(object):
    """
    Corners of the unit cube centered at the origin, ``corners[i]`` with
    ``i = 4 * z_bit + 2 * y_bit + x_bit`` (bit 0 -> -0.5, bit 1 -> +0.5).
    """

    corners: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "corners", _readonly_array(self.corners, (8, 3), "corners"))


@dataclass(frozen=True, eq=False)
class CubeSymmetry(object):
    """
    One of the 24 rotations mapping the unit cube onto itself.

    :ivar rotation: Signed permutation matrix with determinant +1
    :ivar axis_permutation: ``pi`` with ``g e_j = ±e_pi(j)``; ``(R g, dims[pi])`` is the same cuboid as ``(R, dims)``
    :ivar corner_permutation: ``sigma`` with ``g u_i = u_sigma(i)``
    """

    rotation: Rotation3
    axis_permutation: Tuple[int, int, int]
    corner_permutation: Tuple[int, ...]

    def permute_dims(self, dims) -> np.ndarray:
        return np.asarray(dims, dtype=float)[list(self.axis_permutation)]


def canonical_cube_corners() -> CanonicalCube:
    corners = np.empty((8, 3))
    for index in range(8):
        bits = (index & 1, (index >> 1) & 1, (index >> 2) & 1)
        corners[index] = [0.5 if bit else -0.5 for bit in bits]
    return CanonicalCube(corners)


def corner_index(u) -> int:
    """ Inverse of the canonical ordering for a point with coordinates ±0.5 """
    u = np.asarray(u, dtype=float)
    return int(4 * (u[2] > 0) + 2 * (u[1] > 0) + (u[0] > 0))


def transform_corner(pose: Pose, shape: Shape, u) -> np.ndarray:
    """
    Maps object-frame points of the unit cube into the target frame of ``pose``: ``R (S u) + t``.

    :param pose: Object pose
    :param shape: Box shape, applied componentwise before the rotation
    :param u: One point (3,) or a stack of points (N, 3)
    :return: Transformed point(s) with the same leading shape as ``u``
    """
    u = np.asarray(u, dtype=float)
    return (u * shape.dims) @ pose.rotation.m.T + pose.translation


def box_corners(pose: Pose, shape: Shape) -> np.ndarray:
    return transform_corner(pose, shape, canonical_cube_corners().corners)


def project_points(
        camera: PinholeCamera,
        points,
        depth_min: float = DEFAULT_DEPTH_MIN,
        view: str = "camera"
) -> np.ndarray:
    """
    Projects a stack of camera-frame points.

    :param camera: Pinhole camera
    :param points: (N, 3) points in the camera frame
    :param depth_min: Minimum accepted depth in meters
    :param view: View name reported in errors
    :return: (N, 2) pixel coordinates
    :raises PointBehindCamera: if any point has depth <= ``depth_min``; ``corner_index`` is the row index
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    depth = points[:, 2]
    behind = np.flatnonzero(~(depth > depth_min))
    if behind.size:
        index = int(behind[0])
        raise PointBehindCamera(
            f"Point {index} in the {view} view has depth {depth[index]:.3g} m <= {depth_min:.3g} m",
            view=view,
            corner_index=index
        )
    return np.column_stack((
        camera.fx * points[:, 0] / depth + camera.cx,
        camera.fy * points[:, 1] / depth + camera.cy
    ))


def project(camera: PinholeCamera, p, depth_min: float = DEFAULT_DEPTH_MIN) -> np.ndarray:
    return project_points(camera, np.asarray(p, dtype=float).reshape(1, 3), depth_min)[0]


def project_to_so3(m) -> Rotation3:
    """
    Returns the rotation closest to ``m`` in Frobenius norm, ``U diag(1, 1, det(U V^T)) V^T``.

    :param m: 3x3 matrix
    :return: Rotation3 instance
    :raises DegenerateMatrix: if ``m`` is not finite or its two smallest singular values vanish
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise DegenerateMatrix(f"Cannot project a non-finite or non-3x3 matrix onto SO(3): {m.tolist()}")
    u, singular_values, vt = np.linalg.svd(m)
    if singular_values[1] < 1e-12 and singular_values[2] < 1e-12:
        raise DegenerateMatrix(f"Matrix rank is below 2, singular values {singular_values.tolist()}")
    correction = np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt))])
    return Rotation3(u @ correction @ vt)


def geodesic_distance(r1: Rotation3, r2: Rotation3) -> float:
    """
    Angle of the relative rotation ``r1^T r2`` in radians.

    Computed from the chordal distances ``|r1 - r2| = 2√2 sin(θ/2)`` and ``|r1 + r2|² - 4 = 8 cos²(θ/2)``,
    which is exactly symmetric in its arguments and keeps full precision for small angles.
    """
    half_sin = np.linalg.norm(r1.m - r2.m)
    half_cos = np.sqrt(max(np.sum((r1.m + r2.m) ** 2) - 4.0, 0.0))
    return float(np.clip(2.0 * np.arctan2(half_sin, half_cos), 0.0, np.pi))


def cube_rotation_group() -> List[CubeSymmetry]:
    """
    Enumerates the 24 proper rotations of the cube, identity first.

    :return: List of CubeSymmetry instances
    """
    corners = canonical_cube_corners().corners
    group = []
    for permutation in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            g = np.zeros((3, 3))
            for column, row in enumerate(permutation):
                g[row, column] = signs[column]
            if np.linalg.det(g) < 0.0:
                continue
            corner_permutation = tuple(corner_index(g @ u) for u in corners)
            group.append(CubeSymmetry(Rotation3(g), tuple(permutation), corner_permutation))
    group.sort(key=lambda sym: (not np.array_equal(sym.rotation.m, np.eye(3))))
    return group


def rectifying_homographies(rig: StereoRig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Builds the pixel homographies of a rectified pair sharing the left intrinsics.

    The rectified frame has its x-axis along the baseline, its y-axis orthogonal to the baseline and to
    the mean optical axis, and both rectified cameras keep their optical centers.

    :param rig: Calibrated stereo rig
    :return: ``(H_left, H_right)`` mapping homogeneous pixels into the rectified image
    :raises DegenerateBaseline: if the baseline is shorter than 1e-9 m or parallel to the mean optical axis
    """
    rotation_rl = rig.t_right_from_left.rotation.m
    baseline = -rotation_rl.T @ rig.t_right_from_left.translation
    length = np.linalg.norm(baseline)
    if length < MIN_BASELINE:
        raise DegenerateBaseline(f"Stereo baseline {length:.3g} m is too short to rectify")
    e1 = baseline / length
    mean_axis = 0.5 * (np.array([0.0, 0.0, 1.0]) + rotation_rl[2])
    e2 = np.cross(mean_axis, e1)
    if np.linalg.norm(e2) < MIN_BASELINE:
        raise DegenerateBaseline("Stereo baseline is parallel to the optical axis")
    e2 /= np.linalg.norm(e2)
    e3 = np.cross(e1, e2)
    rectified_from_left = np.vstack((e1, e2, e3))
    intrinsics = rig.left.matrix
    h_left = intrinsics @ rectified_from_left @ rig.left.inverse_matrix
    h_right = intrinsics @ rectified_from_left @ rotation_rl.T @ rig.right.inverse_matrix
    return h_left, h_right


def _apply_homography(homography: np.ndarray, pixel, view: str) -> np.ndarray:
    point = homography @ np.array([pixel[0], pixel[1], 1.0])
    if point[2] <= 0.0:
        raise PointBehindCamera(f"Keypoint {list(pixel)} maps behind the rectified {view} camera", view=view)
    return point[:2] / point[2]


def rectify(rig: StereoRig, kp_left, kp_right) -> Tuple[np.ndarray, np.ndarray]:
    """
    Maps a left/right keypoint pair into the common rectified frame, where corresponding points share
    their y-coordinate.

    :param rig: Calibrated stereo rig
    :param kp_left: Left keypoint in pixels
    :param kp_right: Right keypoint in pixels
    :return: Rectified left and right keypoints
    :raises DegenerateBaseline: if the rig cannot be rectified
    """
    h_left, h_right = rectifying_homographies(rig)
    return _apply_homography(h_left, kp_left, LEFT), _apply_homography(h_right, kp_right, RIGHT)


def triangulate_midpoint(rig: StereoRig, kp_left, kp_right) -> np.ndarray:
    """
    Midpoint of the shortest segment joining the two back-projected rays.

    :param rig: Calibrated stereo rig
    :param kp_left: Left keypoint in pixels
    :param kp_right: Right keypoint in pixels
    :return: 3D point in the left camera frame
    :raises DegenerateBaseline: if the rays are parallel
    """
    rotation_rl = rig.t_right_from_left.rotation.m
    center_right = -rotation_rl.T @ rig.t_right_from_left.translation
    ray_left = rig.left.inverse_matrix @ np.array([kp_left[0], kp_left[1], 1.0])
    ray_right = rotation_rl.T @ rig.right.inverse_matrix @ np.array([kp_right[0], kp_right[1], 1.0])
    w0 = -center_right
    a, b, c = ray_left @ ray_left, ray_left @ ray_right, ray_right @ ray_right
    d, e = ray_left @ w0, ray_right @ w0
    denominator = a * c - b * b
    if denominator <= 1e-12 * a * c:
        raise DegenerateBaseline(f"Rays through {list(kp_left)} and {list(kp_right)} are parallel")
    s = (b * e - c * d) / denominator
    q = (a * e - b * d) / denominator
    return 0.5 * (s * ray_left + center_right + q * ray_right)


def edge_function(ax: float, ay: float, bx: float, by: float, px, py):
    """ Signed doubled area of (a, b, p); positive when p lies left of the directed edge a -> b """
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def signed_area(vertices) -> float:
    vertices = np.asarray(vertices, dtype=float)
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def convex_hull(points) -> np.ndarray:
    """
    Convex hull by Andrew's monotone chain; collinear points are dropped.

    :param points: (N, 2) points
    :return: (K, 2) hull vertices with positive signed area; fewer than 3 rows for degenerate input
    """
    points = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(points) < 3:
        return points
    lower, upper = [], []
    for point in points:
        while len(lower) >= 2 and edge_function(*lower[-2], *lower[-1], *point) <= 0.0:
            lower.pop()
        lower.append(tuple(point))
    for point in points[::-1]:
        while len(upper) >= 2 and edge_function(*upper[-2], *upper[-1], *point) <= 0.0:
            upper.pop()
        upper.append(tuple(point))
    return np.array(lower[:-1] + upper[:-1], dtype=float)


def inside_convex(vertices, px, py, tolerance: float = EDGE_TOLERANCE):
    """
    Boundary-inclusive point-in-convex-polygon test for a polygon with positive signed area.

    :param vertices: (K, 2) polygon vertices
    :param px: x-coordinate(s)
    :param py: y-coordinate(s)
    :return: Boolean (array) broadcast from ``px`` and ``py``
    """
    vertices = np.asarray(vertices, dtype=float)
    inside = np.ones(np.broadcast(np.asarray(px), np.asarray(py)).shape, dtype=bool)
    for index in range(len(vertices)):
        ax, ay = vertices[index]
        bx, by = vertices[(index + 1) % len(vertices)]
        inside &= edge_function(ax, ay, bx, by, px, py) >= -tolerance
    return inside
