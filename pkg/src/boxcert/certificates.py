import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .estimator import BoxState, FrameObservation, SolveResult, residual_map
from .geometry import (
    DEFAULT_DEPTH_MIN,
    LEFT,
    RIGHT,
    VIEWS,
    PinholeCamera,
    Pose,
    Shape,
    StereoRig,
    box_corners,
    convex_hull,
    inside_convex,
    project_points,
    rectify,
    signed_area,
)
from .utilities import BoxcertValidationError, DimensionMismatch

logger = logging.getLogger(__name__)

MIN_SILHOUETTE_AREA = 1.0
SOURCE_PREDICTED = "predicted"
SOURCE_REPROJECTED = "reprojected"
NO_LABEL_REASON = "no keypoint passed the epipolar certificate"


@dataclass(frozen=True, eq=False)
class BitMask(object):
    """
    Binary image, ``bits[row, column]``.
    """

    width: int
    height: int
    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool)
        if bits.shape != (self.height, self.width):
            raise DimensionMismatch(f"Mask bits have shape {bits.shape}, expected {(self.height, self.width)}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def empty(cls, width: int, height: int) -> "BitMask":
        return cls(width, height, np.zeros((height, width), dtype=bool))

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    @property
    def is_empty(self) -> bool:
        return self.count == 0


@dataclass(frozen=True, eq=False)
class ViewMasks(object):
    left: BitMask
    right: BitMask

    def view(self, view: str) -> BitMask:
        if view not in VIEWS:
            raise BoxcertValidationError(f"Unknown view [{view}]. Supported values are [{','.join(VIEWS)}]")
        return getattr(self, view)


@dataclass(frozen=True)
class CertificateThresholds(object):
    """
    :ivar eps_2d: A frame passes when the minimum IoU over both views exceeds ``1 - eps_2d``
    :ivar eps_res: A keypoint keeps its prediction when its residual norm is below ``eps_res`` pixels
    :ivar eps_epi: A stereo pair passes when its rectified y-disparity is below ``eps_epi`` pixels
    """

    eps_2d: float = 0.05
    eps_res: float = 42.0
    eps_epi: float = 20.0

    def __post_init__(self):
        if not 0.0 < self.eps_2d < 1.0:
            raise BoxcertValidationError(f"'eps_2d' must be in (0, 1), got {self.eps_2d}")
        if not (self.eps_res > 0.0 and self.eps_epi > 0.0):
            raise BoxcertValidationError(f"'eps_res' and 'eps_epi' must be positive, got {self.eps_res}, {self.eps_epi}")


@dataclass(frozen=True, eq=False)
class PseudoLabel(object):
    """
    :ivar source: `predicted` when the detector keypoint is kept, `reprojected` when it is replaced
    :ivar stereo_verified: True if the corner was seen in both views and passed the epipolar check
    """

    view: str
    corner_index: int
    pixel: np.ndarray
    source: str
    stereo_verified: bool = False


@dataclass(frozen=True, eq=False)
class KeypointCertificate(object):
    view: str
    corner_index: int
    predicted: np.ndarray
    reprojected: np.ndarray
    residual_norm: float
    pass_res: bool
    source: str

    @property
    def chosen(self) -> np.ndarray:
        return self.predicted if self.source == SOURCE_PREDICTED else self.reprojected


@dataclass(frozen=True)
class EpipolarCheck(object):
    corner_index: int
    ydiff: float
    passed: bool


@dataclass(frozen=True, eq=False)
class CertificateReport(object):
    """
    Certification outcome of one frame.

    ``candidates`` lists the labels the frame would contribute if its 2D certificate passed; ``labels``
    equals ``candidates`` for accepted frames and is empty otherwise.
    """

    frame_id: str
    accepted: bool
    iou_left: Optional[float] = None
    iou_right: Optional[float] = None
    pass_2d: bool = False
    keypoints: Tuple[KeypointCertificate, ...] = ()
    epipolar: Tuple[EpipolarCheck, ...] = ()
    labels: Tuple[PseudoLabel, ...] = ()
    candidates: Tuple[PseudoLabel, ...] = ()
    failure_reasons: Tuple[str, ...] = ()

    @classmethod
    def rejected(cls, frame_id: str, reason: str) -> "CertificateReport":
        return cls(frame_id=frame_id, accepted=False, failure_reasons=(reason,))

    @property
    def min_iou(self) -> Optional[float]:
        if self.iou_left is None or self.iou_right is None:
            return None
        return min(self.iou_left, self.iou_right)


def silhouette_mask(camera: PinholeCamera, pose: Pose, shape: Shape, depth_min: float = DEFAULT_DEPTH_MIN) -> BitMask:
    """
    Rasterizes the convex hull of the projected box corners.

    A pixel is set when its center lies inside the hull or on its boundary. Boxes whose hull covers
    less than one square pixel produce an empty mask.

    :param camera: Camera the pose is expressed in
    :param pose: Object-to-camera pose
    :param shape: Box shape
    :param depth_min: Minimum accepted corner depth
    :return: BitMask with the camera resolution
    :raises PointBehindCamera: if a corner lies at depth <= ``depth_min``
    """
    mask = np.zeros((camera.height, camera.width), dtype=bool)
    hull = convex_hull(project_points(camera, box_corners(pose, shape), depth_min))
    if len(hull) < 3 or signed_area(hull) < MIN_SILHOUETTE_AREA:
        logger.debug("Projected box covers less than one pixel, silhouette is empty")
        return BitMask(camera.width, camera.height, mask)

    first_row = max(0, math.ceil(hull[:, 1].min() - 1e-9))
    last_row = min(camera.height - 1, math.floor(hull[:, 1].max() + 1e-9))
    edges = list(zip(hull, np.roll(hull, -1, axis=0)))
    for row in range(first_row, last_row + 1):
        crossings = []
        for (ax, ay), (bx, by) in edges:
            if min(ay, by) - 1e-9 <= row <= max(ay, by) + 1e-9:
                if ay == by:
                    crossings.extend((ax, bx))
                else:
                    crossings.append(ax + (row - ay) * (bx - ax) / (by - ay))
        if not crossings:
            continue
        first_column = max(0, math.floor(min(crossings)) - 1)
        last_column = min(camera.width - 1, math.ceil(max(crossings)) + 1)
        if first_column > last_column:
            continue
        columns = np.arange(first_column, last_column + 1, dtype=float)
        mask[row, first_column:last_column + 1] = inside_convex(hull, columns, float(row))
    return BitMask(camera.width, camera.height, mask)


def render_view_masks(state: BoxState, rig: StereoRig, depth_min: float = DEFAULT_DEPTH_MIN) -> ViewMasks:
    return ViewMasks(
        silhouette_mask(rig.left, state.pose, state.shape, depth_min),
        silhouette_mask(rig.right, rig.view_pose(state.pose, RIGHT), state.shape, depth_min)
    )


def reproject_corners(state: BoxState, rig: StereoRig, depth_min: float = DEFAULT_DEPTH_MIN) -> Dict[str, np.ndarray]:
    """ Projections of the 8 box corners in both views, ``{view: (8, 2)}`` """
    corners = state.corners()
    return {
        LEFT: project_points(rig.left, corners, depth_min, LEFT),
        RIGHT: project_points(rig.right, rig.t_right_from_left.transform(corners), depth_min, RIGHT)
    }


def iou(a: BitMask, b: BitMask) -> float:
    """
    Intersection over union of two masks; two empty masks are identical and score 1.0.

    :raises DimensionMismatch: if the masks have different sizes
    """
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatch(f"Cannot compare a {a.width}x{a.height} mask with a {b.width}x{b.height} mask")
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        logger.warning("IoU of two empty masks, treating them as identical")
        return 1.0
    return int(np.count_nonzero(a.bits & b.bits)) / union


def cert_2d(
        state: BoxState,
        rig: StereoRig,
        masks: ViewMasks,
        eps_2d: float,
        depth_min: float = DEFAULT_DEPTH_MIN
) -> Tuple[bool, float, float]:
    """
    2D silhouette certificate: the minimum IoU between the rendered estimate and the reference masks
    must exceed ``1 - eps_2d``.

    :return: Pass flag, left IoU and right IoU
    :raises DimensionMismatch: if a reference mask does not match its camera resolution
    """
    rendered = render_view_masks(state, rig, depth_min)
    iou_left = iou(rendered.left, masks.left)
    iou_right = iou(rendered.right, masks.right)
    return min(iou_left, iou_right) > 1.0 - eps_2d, iou_left, iou_right


def cert_residual(residual, eps_res: float) -> Tuple[bool, str]:
    """ Keeps the detector keypoint when its residual norm is below ``eps_res`` """
    passed = float(np.linalg.norm(residual)) < eps_res
    return passed, SOURCE_PREDICTED if passed else SOURCE_REPROJECTED


def cert_epipolar(kp_left, kp_right, rig: StereoRig, eps_epi: float) -> Tuple[bool, float]:
    """ Compares the y-coordinates of a keypoint pair after rectification """
    rectified_left, rectified_right = rectify(rig, kp_left, kp_right)
    ydiff = abs(float(rectified_left[1] - rectified_right[1]))
    return ydiff < eps_epi, ydiff


def select_pseudo_labels(
        result: SolveResult,
        obs: FrameObservation,
        rig: StereoRig,
        masks: ViewMasks,
        thresholds: CertificateThresholds,
        depth_min: float = DEFAULT_DEPTH_MIN
) -> CertificateReport:
    """
    Runs the three certificates on one solved frame and selects its pseudo-labels.

    Every observed keypoint keeps its detection when it passes the residual certificate and is replaced
    by the reprojected corner otherwise. Corners seen in both views must then pass the epipolar check,
    and labels falling outside the image are dropped. The frame is accepted when the 2D certificate
    passes and at least one label remains.

    :param result: Solver output for the frame
    :param obs: Observations the solver consumed
    :param rig: Calibrated stereo rig
    :param masks: Reference masks of the frame
    :param thresholds: Certificate thresholds
    :param depth_min: Minimum accepted corner depth
    :return: CertificateReport instance
    """
    pass_2d, iou_left, iou_right = cert_2d(result.state, rig, masks, thresholds.eps_2d, depth_min)
    reprojected = reproject_corners(result.state, rig, depth_min)
    deltas = residual_map(result)

    keypoints = []
    for view in VIEWS:
        for keypoint in obs.view(view):
            residual = deltas.get((view, keypoint.corner_index))
            if residual is None:
                residual = reprojected[view][keypoint.corner_index] - keypoint.pixel
            passed, source = cert_residual(residual, thresholds.eps_res)
            keypoints.append(KeypointCertificate(
                view=view,
                corner_index=keypoint.corner_index,
                predicted=keypoint.pixel,
                reprojected=reprojected[view][keypoint.corner_index],
                residual_norm=float(np.linalg.norm(residual)),
                pass_res=passed,
                source=source
            ))
    chosen = {(certificate.view, certificate.corner_index): certificate.chosen for certificate in keypoints}

    epipolar = {}
    for corner in obs.stereo_corners():
        passed, ydiff = cert_epipolar(chosen[(LEFT, corner)], chosen[(RIGHT, corner)], rig, thresholds.eps_epi)
        epipolar[corner] = EpipolarCheck(corner, ydiff, passed)

    candidates = []
    for certificate in keypoints:
        check = epipolar.get(certificate.corner_index)
        if check is not None and not check.passed:
            continue
        if not rig.camera(certificate.view).contains(certificate.chosen)[0]:
            logger.debug(
                f"Dropping {certificate.view} label of corner {certificate.corner_index} in frame '{obs.frame_id}': "
                f"{certificate.chosen.tolist()} is outside the image"
            )
            continue
        candidates.append(PseudoLabel(
            view=certificate.view,
            corner_index=certificate.corner_index,
            pixel=certificate.chosen,
            source=certificate.source,
            stereo_verified=check is not None
        ))

    reasons = []
    if not pass_2d:
        reasons.append(
            f"2D certificate failed: min IoU {min(iou_left, iou_right):.4f} <= {1.0 - thresholds.eps_2d:.4f}"
        )
    if not candidates:
        reasons.append(NO_LABEL_REASON)
    accepted = not reasons
    logger.verbose(
        f"Frame '{obs.frame_id}' {'accepted' if accepted else 'rejected'}: IoU {iou_left:.4f}/{iou_right:.4f}, "
        f"{len(candidates)} candidate labels"
    )
    return CertificateReport(
        frame_id=obs.frame_id,
        accepted=accepted,
        iou_left=iou_left,
        iou_right=iou_right,
        pass_2d=pass_2d,
        keypoints=tuple(keypoints),
        epipolar=tuple(epipolar[corner] for corner in sorted(epipolar)),
        labels=tuple(candidates) if accepted else (),
        candidates=tuple(candidates),
        failure_reasons=tuple(reasons)
    )
