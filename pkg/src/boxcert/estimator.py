import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import (
    DEFAULT_DEPTH_MIN,
    LEFT,
    RIGHT,
    VIEWS,
    Pose,
    Rotation3,
    Shape,
    StereoRig,
    box_corners,
    canonical_cube_corners,
    cube_rotation_group,
    project_to_so3,
    triangulate_midpoint,
)
from .utilities import (
    BoxcertUtilities,
    BoxcertValidationError,
    DegenerateBaseline,
    DegenerateMatrix,
    DuplicateCorner,
    InsufficientObservations,
    NonFiniteObjective,
    PointBehindCamera,
)

logger = logging.getLogger(__name__)

MIN_OBSERVATIONS = 6
PARAMETER_COUNT = 15
ARMIJO_FRACTION = 1e-4
DAMPING = 1e-4
STALL_TOLERANCE = 1e-10
_SO3_GENERATORS = tuple(
    np.array(generator, dtype=float) / np.sqrt(2.0) for generator in (
        ((0, 0, 0), (0, 0, -1), (0, 1, 0)),
        ((0, 0, 1), (0, 0, 0), (-1, 0, 0)),
        ((0, -1, 0), (1, 0, 0), (0, 0, 0)),
    )
)


@dataclass(frozen=True, eq=False)
class KeypointObservation(object):
    """
    Detected corner keypoint.

    :ivar corner_index: Canonical corner label in [0, 7]
    :ivar pixel: Pixel coordinates
    :ivar confidence: Detector confidence in [0, 1]
    """

    corner_index: int
    pixel: np.ndarray
    confidence: float = 1.0

    def __post_init__(self):
        if not isinstance(self.corner_index, (int, np.integer)) or not 0 <= self.corner_index <= 7:
            raise BoxcertValidationError(f"Corner index must be an integer in [0, 7], got {self.corner_index}")
        pixel = np.array(self.pixel, dtype=float)
        if pixel.shape != (2,) or not np.all(np.isfinite(pixel)):
            raise BoxcertValidationError(f"Keypoint pixel must be two finite numbers, got {self.pixel}")
        pixel.setflags(write=False)
        if not 0.0 <= float(self.confidence) <= 1.0:
            raise BoxcertValidationError(f"Keypoint confidence must be in [0, 1], got {self.confidence}")
        object.__setattr__(self, "corner_index", int(self.corner_index))
        object.__setattr__(self, "pixel", pixel)
        object.__setattr__(self, "confidence", float(self.confidence))


@dataclass(frozen=True, eq=False)
class FrameObservation(object):
    """
    Keypoints of one stereo frame, at most one per corner and view.
    """

    left: Tuple[KeypointObservation, ...] = ()
    right: Tuple[KeypointObservation, ...] = ()
    frame_id: str = ""

    def __post_init__(self):
        for view in VIEWS:
            keypoints = tuple(getattr(self, view))
            seen = set()
            for keypoint in keypoints:
                if keypoint.corner_index in seen:
                    raise DuplicateCorner(
                        f"Corner {keypoint.corner_index} is observed twice in the {view} view of frame '{self.frame_id}'",
                        field_path=view
                    )
                seen.add(keypoint.corner_index)
            object.__setattr__(self, view, keypoints)

    @property
    def count(self) -> int:
        return len(self.left) + len(self.right)

    @property
    def is_solvable(self) -> bool:
        return self.count >= MIN_OBSERVATIONS and bool(self.stereo_corners())

    def view(self, view: str) -> Tuple[KeypointObservation, ...]:
        if view not in VIEWS:
            raise BoxcertValidationError(f"Unknown view [{view}]. Supported values are [{','.join(VIEWS)}]")
        return getattr(self, view)

    def get(self, view: str, corner: int) -> Optional[KeypointObservation]:
        for keypoint in self.view(view):
            if keypoint.corner_index == corner:
                return keypoint
        return None

    def stereo_corners(self) -> List[int]:
        left = {keypoint.corner_index for keypoint in self.left}
        return sorted(left.intersection(keypoint.corner_index for keypoint in self.right))

    def filter_confidence(self, eps_conf: float) -> "FrameObservation":
        """ Keeps keypoints whose confidence is strictly greater than ``eps_conf`` """
        return FrameObservation(
            left=tuple(keypoint for keypoint in self.left if keypoint.confidence > eps_conf),
            right=tuple(keypoint for keypoint in self.right if keypoint.confidence > eps_conf),
            frame_id=self.frame_id
        )


@dataclass(frozen=True, eq=False)
class BoxState(object):
    pose: Pose
    shape: Shape

    def corners(self) -> np.ndarray:
        return box_corners(self.pose, self.shape)


@dataclass(frozen=True)
class RobustLossConfig(object):
    """
    :ivar kind: `squared` or `geman_mcclure`
    :ivar scale_c: Geman-McClure scale in pixels
    """

    SUPPORTED_KINDS = ("squared", "geman_mcclure")

    kind: str = "squared"
    scale_c: float = 10.0

    def __post_init__(self):
        if self.kind not in self.SUPPORTED_KINDS:
            raise BoxcertValidationError(
                f"Unsupported robust loss [{self.kind}]. Supported values are [{','.join(self.SUPPORTED_KINDS)}]"
            )
        if not self.scale_c > 0.0:
            raise BoxcertValidationError(f"Robust loss scale must be positive, got {self.scale_c}")


@dataclass(frozen=True)
class SolverConfig(object):
    """
    :ivar max_iters: Iteration cap
    :ivar step_size: Initial trial step of the backtracking line search
    :ivar grad_tol: Convergence threshold on the norm of the manifold-projected gradient
    :ivar shape_floor: Lower bound applied to every dimension after each step
    :ivar loss: Robust loss applied to the squared reprojection residual norm
    :ivar depth_min: Minimum accepted depth of a corner in either camera
    :ivar metric: `gauss_newton` (damped, iteratively reweighted) or `gradient` (plain steepest descent)
    :ivar min_step: Smallest trial step before the line search gives up
    """

    SUPPORTED_METRICS = ("gauss_newton", "gradient")

    max_iters: int = 2000
    step_size: float = 1e-2
    grad_tol: float = 1e-8
    shape_floor: float = 1e-3
    loss: RobustLossConfig = field(default_factory=RobustLossConfig)
    depth_min: float = DEFAULT_DEPTH_MIN
    metric: str = "gauss_newton"
    min_step: float = 1e-12

    def __post_init__(self):
        if self.metric not in self.SUPPORTED_METRICS:
            raise BoxcertValidationError(
                f"Unsupported solver metric [{self.metric}]. Supported values are [{','.join(self.SUPPORTED_METRICS)}]"
            )
        if self.max_iters < 1:
            raise BoxcertValidationError(f"'max_iters' must be positive, got {self.max_iters}")
        for name in ("step_size", "shape_floor", "min_step"):
            if not getattr(self, name) > 0.0:
                raise BoxcertValidationError(f"'{name}' must be positive, got {getattr(self, name)}")
        if self.grad_tol < 0.0 or self.depth_min < 0.0:
            raise BoxcertValidationError("'grad_tol' and 'depth_min' must be non-negative")


@dataclass(frozen=True, eq=False)
class ResidualEntry(object):
    view: str
    corner_index: int
    delta: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.delta))


@dataclass(frozen=True, eq=False)
class SolveResult(object):
    """
    :ivar state: Final box state
    :ivar residuals: Per-observation residual ``predicted - observed``, left view first
    :ivar objective: Final objective value under the configured loss
    :ivar iterations: Number of iterations performed
    :ivar converged: True if the projected gradient dropped below ``grad_tol`` or progress hit float precision
    :ivar history: Objective after every accepted step, starting with the initial value
    """

    state: BoxState
    residuals: Tuple[ResidualEntry, ...]
    objective: float
    iterations: int
    converged: bool
    history: Tuple[float, ...] = ()

    def residual(self, view: str, corner: int) -> Optional[ResidualEntry]:
        for entry in self.residuals:
            if entry.view == view and entry.corner_index == corner:
                return entry
        return None


class _ObservationArrays(object):
    """ Observations of one frame flattened into arrays for vectorized evaluation """

    def __init__(self, obs: FrameObservation, rig: StereoRig):
        cube = canonical_cube_corners().corners
        labels, units, pixels, intrinsics, right = [], [], [], [], []
        for view in VIEWS:
            camera = rig.camera(view)
            for keypoint in obs.view(view):
                labels.append((view, keypoint.corner_index))
                units.append(cube[keypoint.corner_index])
                pixels.append(keypoint.pixel)
                intrinsics.append((camera.fx, camera.fy, camera.cx, camera.cy))
                right.append(view == RIGHT)
        self.labels = labels
        self.units = np.array(units, dtype=float).reshape(-1, 3)
        self.pixels = np.array(pixels, dtype=float).reshape(-1, 2)
        self.intrinsics = np.array(intrinsics, dtype=float).reshape(-1, 4)
        self.right = np.array(right, dtype=bool)
        self.rotation_rl = rig.t_right_from_left.rotation.m
        self.translation_rl = rig.t_right_from_left.translation

    def __len__(self):
        return len(self.labels)


def _pack(state: BoxState) -> np.ndarray:
    return np.concatenate((state.pose.rotation.m.ravel(), state.pose.translation, state.shape.dims))


def _unpack(params: np.ndarray) -> BoxState:
    return BoxState(Pose(Rotation3(params[:9].reshape(3, 3)), params[9:12]), Shape(params[12:15]))


def _evaluate(params: np.ndarray, arrays: _ObservationArrays, depth_min: float, with_jacobian: bool):
    m = params[:9].reshape(3, 3)
    scaled = arrays.units * params[12:15]
    points = scaled @ m.T + params[9:12]
    camera_points = points.copy()
    camera_points[arrays.right] = points[arrays.right] @ arrays.rotation_rl.T + arrays.translation_rl
    depth = camera_points[:, 2]
    behind = np.flatnonzero(~(depth > depth_min))
    if behind.size:
        view, corner = arrays.labels[int(behind[0])]
        raise PointBehindCamera(
            f"Corner {corner} has depth {depth[behind[0]]:.3g} m in the {view} view", view=view, corner_index=corner
        )
    fx, fy, cx, cy = arrays.intrinsics.T
    predicted = np.column_stack((fx * camera_points[:, 0] / depth + cx, fy * camera_points[:, 1] / depth + cy))
    residuals = predicted - arrays.pixels
    if not with_jacobian:
        return residuals, None

    count = len(arrays)
    projection = np.zeros((count, 2, 3))
    projection[:, 0, 0] = fx / depth
    projection[:, 0, 2] = -fx * camera_points[:, 0] / depth ** 2
    projection[:, 1, 1] = fy / depth
    projection[:, 1, 2] = -fy * camera_points[:, 1] / depth ** 2
    projection[arrays.right] = projection[arrays.right] @ arrays.rotation_rl

    jacobian = np.zeros((count, 2, PARAMETER_COUNT))
    jacobian[:, :, :9] = (projection[:, :, :, None] * scaled[:, None, None, :]).reshape(count, 2, 9)
    jacobian[:, :, 9:12] = projection
    jacobian[:, :, 12:15] = np.einsum("nra,ab->nrb", projection, m) * arrays.units[:, None, :]
    return residuals, jacobian


def _loss_terms(squared_norms: np.ndarray, loss: RobustLossConfig) -> Tuple[np.ndarray, np.ndarray]:
    """ Returns the per-observation loss and its derivative with respect to the squared residual norm """
    if loss.kind == "squared":
        return squared_norms, np.ones_like(squared_norms)
    c2 = loss.scale_c ** 2
    return c2 * squared_norms / (squared_norms + c2), c2 ** 2 / (squared_norms + c2) ** 2


def geman_mcclure(residual, scale_c: float) -> float:
    """ Geman-McClure penalty ``c² |r|² / (|r|² + c²)`` of one residual vector """
    squared = float(np.sum(np.asarray(residual, dtype=float) ** 2))
    return scale_c ** 2 * squared / (squared + scale_c ** 2)


def _objective_terms(params, arrays, loss, depth_min, with_derivatives):
    residuals, jacobian = _evaluate(params, arrays, depth_min, with_derivatives)
    values, weights = _loss_terms(np.sum(residuals ** 2, axis=1), loss)
    value = float(np.sum(values))
    if not with_derivatives:
        return value, None, None
    gradient = 2.0 * np.einsum("n,nrk,nr->k", weights, jacobian, residuals)
    metric = 2.0 * np.einsum("n,nrk,nrl->kl", weights, jacobian, jacobian)
    return value, gradient, metric


def _check_inputs(obs: FrameObservation):
    if obs.count < MIN_OBSERVATIONS:
        raise InsufficientObservations(
            f"Frame '{obs.frame_id}' has {obs.count} keypoints, at least {MIN_OBSERVATIONS} are required"
        )
    if not obs.stereo_corners():
        raise InsufficientObservations(f"Frame '{obs.frame_id}' has no corner observed in both views")


def residuals(
        state: BoxState,
        obs: FrameObservation,
        rig: StereoRig,
        depth_min: float = DEFAULT_DEPTH_MIN
) -> Tuple[ResidualEntry, ...]:
    """
    Reprojection residuals ``project(corner) - observed`` for every observation, left view first.

    :raises PointBehindCamera: if an observed corner lies at depth <= ``depth_min``
    """
    arrays = _ObservationArrays(obs, rig)
    deltas, _ = _evaluate(_pack(state), arrays, depth_min, False)
    return tuple(ResidualEntry(view, corner, delta) for (view, corner), delta in zip(arrays.labels, deltas))


def objective(
        state: BoxState,
        obs: FrameObservation,
        rig: StereoRig,
        loss: Optional[RobustLossConfig] = None,
        depth_min: float = DEFAULT_DEPTH_MIN
) -> float:
    """
    Sum of the loss applied to every squared residual norm.

    :raises PointBehindCamera: if an observed corner lies at depth <= ``depth_min``
    """
    arrays = _ObservationArrays(obs, rig)
    value, _, _ = _objective_terms(_pack(state), arrays, loss or RobustLossConfig(), depth_min, False)
    return value


def objective_and_gradient(
        params: Sequence[float],
        obs: FrameObservation,
        rig: StereoRig,
        loss: Optional[RobustLossConfig] = None,
        depth_min: float = DEFAULT_DEPTH_MIN
) -> Tuple[float, np.ndarray]:
    """
    Objective and its analytic gradient over the relaxed parameters
    ``(M row-major, t, d)``, where corners are ``M (d * u) + t`` and ``M`` is any 3x3 matrix.

    :param params: 15 parameters
    :return: Objective value and (15,) gradient
    """
    params = np.asarray(params, dtype=float)
    if params.shape != (PARAMETER_COUNT,):
        raise BoxcertValidationError(f"Expected {PARAMETER_COUNT} parameters, got shape {params.shape}")
    value, gradient, _ = _objective_terms(
        params, _ObservationArrays(obs, rig), loss or RobustLossConfig(), depth_min, True
    )
    return value, gradient


def gauss_newton_metric(
        params: Sequence[float],
        obs: FrameObservation,
        rig: StereoRig,
        loss: Optional[RobustLossConfig] = None,
        depth_min: float = DEFAULT_DEPTH_MIN
) -> np.ndarray:
    """ Reweighted Gauss-Newton approximation ``2 Σ w J^T J`` of the objective Hessian """
    params = np.asarray(params, dtype=float)
    _, _, metric = _objective_terms(params, _ObservationArrays(obs, rig), loss or RobustLossConfig(), depth_min, True)
    return metric


def _feasible_basis(params: np.ndarray, gradient: np.ndarray, shape_floor: float) -> np.ndarray:
    """
    Orthonormal basis of the directions the retraction preserves: the tangent space of SO(3) at the
    current rotation, the translation and every dimension not pinned at the floor by the gradient.
    """
    rotation = params[:9].reshape(3, 3)
    basis = np.zeros((PARAMETER_COUNT, 9))
    for axis, generator in enumerate(_SO3_GENERATORS):
        basis[:9, axis] = (rotation @ generator).ravel()
    basis[9:, 3:] = np.eye(6)
    pinned = (params[12:15] <= shape_floor) & (gradient[12:15] > 0.0)
    return basis[:, np.concatenate((np.ones(6, dtype=bool), ~pinned))]


def _projected_gradient_norm(params: np.ndarray, gradient: np.ndarray, shape_floor: float) -> float:
    return float(np.linalg.norm(_feasible_basis(params, gradient, shape_floor).T @ gradient))


def _descent_direction(gradient: np.ndarray, metric: np.ndarray, basis: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    """ Descent direction restricted to the span of ``basis``, returned in relaxed coordinates """
    reduced = basis.T @ gradient
    if cfg.metric == "gradient":
        return basis @ reduced
    local = basis.T @ metric @ basis
    diagonal = np.diag(local)
    damped = local + np.diag(DAMPING * diagonal + 1e-12 * max(float(np.mean(diagonal)), 1e-12))
    try:
        step = np.linalg.solve(damped, reduced)
    except np.linalg.LinAlgError:
        logger.debug("Gauss-Newton system is singular, falling back to the gradient")
        return basis @ reduced
    if not np.all(np.isfinite(step)) or step @ reduced <= 0.0:
        return basis @ reduced
    return basis @ step


def _retract(params: np.ndarray, shape_floor: float) -> np.ndarray:
    """ Projects the rotation block onto SO(3) and clamps the dimensions at the floor """
    retracted = params.copy()
    retracted[:9] = project_to_so3(params[:9].reshape(3, 3)).m.ravel()
    retracted[12:15] = np.maximum(params[12:15], shape_floor)
    return retracted


def _affine_seed(units: np.ndarray, points: np.ndarray, shape_floor: float) -> Optional[Tuple[Rotation3, np.ndarray, np.ndarray]]:
    design = np.column_stack((units, np.ones(len(units))))
    if np.linalg.matrix_rank(design) < 4:
        return None
    solution, *_ = np.linalg.lstsq(design, points, rcond=None)
    linear = solution[:3].T
    try:
        rotation = project_to_so3(linear)
    except DegenerateMatrix:
        return None
    dims = np.maximum(np.abs(np.diag(rotation.m.T @ linear)), shape_floor)
    return rotation, solution[3], dims


def initialize(obs: FrameObservation, rig: StereoRig, cfg: Optional[SolverConfig] = None) -> BoxState:
    """
    Builds a starting state from the stereo-triangulated corners.

    Seeds are an identity-rotation box spanning the triangulated extent, an affine fit of the unit
    cube to the triangulated corners and, with five or more corners, every leave-one-out affine fit.
    Each seed is expanded over the 24 cube symmetries and the candidate with the lowest objective wins.

    :param obs: Frame observation
    :param rig: Calibrated stereo rig
    :param cfg: Solver configuration; supplies the loss, the depth bound and the shape floor
    :return: Initial box state
    :raises InsufficientObservations: if no corner can be triangulated
    """
    cfg = cfg or SolverConfig()
    cube = canonical_cube_corners().corners
    corners, points = [], []
    for corner in obs.stereo_corners():
        try:
            points.append(triangulate_midpoint(rig, obs.get(LEFT, corner).pixel, obs.get(RIGHT, corner).pixel))
            corners.append(corner)
        except DegenerateBaseline as err:
            logger.debug(f"Skipping corner {corner} of frame '{obs.frame_id}': {err.msg}")
    if not points:
        raise InsufficientObservations(f"Frame '{obs.frame_id}' has no triangulable corner")
    points = np.array(points)
    units = cube[corners]

    extent = np.ptp(points, axis=0) if len(points) >= 4 else np.full(3, 0.2)
    seeds = [(Rotation3.identity(), points.mean(axis=0), np.maximum(extent, cfg.shape_floor))]
    fits = [_affine_seed(units, points, cfg.shape_floor)]
    if len(points) >= 5:
        for dropped in range(len(points)):
            keep = np.arange(len(points)) != dropped
            fits.append(_affine_seed(units[keep], points[keep], cfg.shape_floor))
    seeds.extend(fit for fit in fits if fit is not None)
    logger.debug(f"Initializing frame '{obs.frame_id}' from {len(points)} triangulated corners and {len(seeds)} seeds")

    arrays = _ObservationArrays(obs, rig)
    best, best_value = None, np.inf
    for rotation, translation, dims in seeds:
        for symmetry in cube_rotation_group():
            params = np.concatenate((
                (rotation.m @ symmetry.rotation.m).ravel(), translation, symmetry.permute_dims(dims)
            ))
            try:
                value, _, _ = _objective_terms(params, arrays, cfg.loss, cfg.depth_min, False)
            except PointBehindCamera:
                continue
            if value < best_value:
                best, best_value = params, value
    if best is None:
        raise InsufficientObservations(f"Every initial candidate of frame '{obs.frame_id}' lies behind a camera")
    return _unpack(_retract(best, cfg.shape_floor))


@BoxcertUtilities.timed_operation
def solve(
        obs: FrameObservation,
        rig: StereoRig,
        cfg: Optional[SolverConfig] = None,
        init: Optional[BoxState] = None
) -> SolveResult:
    """
    Minimizes the robust reprojection objective over pose and shape.

    Each iteration takes a step along the (damped Gauss-Newton or plain) descent direction of the
    relaxed parameters, re-projects the rotation block onto SO(3), clamps the dimensions at
    ``shape_floor`` and accepts the step under an Armijo backtracking rule. The direction is
    restricted to the tangent space of SO(3) at the current rotation and to the dimensions free to
    move, so the Armijo slope matches the step the projection keeps. Steps that push a corner
    behind a camera are rejected like any other non-decreasing step.

    :param obs: Frame observation with at least 6 keypoints and one corner seen in both views
    :param rig: Calibrated stereo rig
    :param cfg: Solver configuration
    :param init: Optional starting state; :func:`initialize` is used otherwise
    :return: SolveResult instance
    :raises InsufficientObservations: if the frame is under-constrained
    :raises NonFiniteObjective: if the objective or its gradient is not finite
    :raises PointBehindCamera: if the starting state puts an observed corner behind a camera
    """
    cfg = cfg or SolverConfig()
    _check_inputs(obs)
    state = init if init is not None else initialize(obs, rig, cfg)
    arrays = _ObservationArrays(obs, rig)
    params = _retract(_pack(state), cfg.shape_floor)

    value, gradient, metric = _objective_terms(params, arrays, cfg.loss, cfg.depth_min, True)
    history = [value]
    converged = False
    iterations = 0
    step = cfg.step_size
    max_step = 1.0 if cfg.metric == "gauss_newton" else np.inf
    while iterations < cfg.max_iters:
        if not np.isfinite(value) or not np.all(np.isfinite(gradient)):
            raise NonFiniteObjective(f"Objective of frame '{obs.frame_id}' is not finite at iteration {iterations}")
        if _projected_gradient_norm(params, gradient, cfg.shape_floor) <= cfg.grad_tol:
            converged = True
            break
        iterations += 1
        direction = _descent_direction(gradient, metric, _feasible_basis(params, gradient, cfg.shape_floor), cfg)
        slope = float(gradient @ direction)
        accepted = None
        while step >= cfg.min_step:
            try:
                candidate = _retract(params - step * direction, cfg.shape_floor)
                candidate_value, _, _ = _objective_terms(candidate, arrays, cfg.loss, cfg.depth_min, False)
            except (PointBehindCamera, DegenerateMatrix):
                candidate_value = np.inf
            if np.isfinite(candidate_value) and candidate_value <= value - ARMIJO_FRACTION * step * slope:
                accepted = candidate
                break
            step *= 0.5
        exhausted = slope <= STALL_TOLERANCE * max(value, 1.0)
        if accepted is None or (exhausted and candidate_value >= value):
            # No representable decrease left along the direction
            converged = exhausted
            logger.debug(f"Line search stalled for frame '{obs.frame_id}' at iteration {iterations}")
            break
        params = accepted
        value, gradient, metric = _objective_terms(params, arrays, cfg.loss, cfg.depth_min, True)
        history.append(value)
        step = min(2.0 * step, max_step)

    final_state = _unpack(params)
    deltas, _ = _evaluate(params, arrays, cfg.depth_min, False)
    entries = tuple(ResidualEntry(view, corner, delta) for (view, corner), delta in zip(arrays.labels, deltas))
    logger.verbose(
        f"Frame '{obs.frame_id}': objective {history[0]:.6g} -> {value:.6g} after {iterations} iterations"
        f"{'' if converged else ' (not converged)'}"
    )
    return SolveResult(final_state, entries, value, iterations, converged, tuple(history))


def pseudo_ground_truth(obs: FrameObservation, rig: StereoRig, cfg: Optional[SolverConfig] = None) -> BoxState:
    """
    Fits a box to clean keypoints under the squared loss, for datasets that only provide annotated keypoints.
    """
    cfg = cfg or SolverConfig()
    squared = SolverConfig(
        max_iters=cfg.max_iters,
        step_size=cfg.step_size,
        grad_tol=cfg.grad_tol,
        shape_floor=cfg.shape_floor,
        loss=RobustLossConfig("squared", cfg.loss.scale_c),
        depth_min=cfg.depth_min,
        metric=cfg.metric,
        min_step=cfg.min_step
    )
    return solve(obs, rig, squared).state


def residual_map(result: SolveResult) -> Dict[Tuple[str, int], np.ndarray]:
    return {(entry.view, entry.corner_index): entry.delta for entry in result.residuals}
