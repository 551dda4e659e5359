import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from . import formats
from .certificates import ViewMasks, render_view_masks, reproject_corners
from .estimator import BoxState, FrameObservation, KeypointObservation
from .geometry import (
    LEFT,
    RIGHT,
    VIEWS,
    PinholeCamera,
    Pose,
    Rotation3,
    Shape,
    StereoRig,
)
from .utilities import BoxcertUtilities, BoxcertValidationError, PointBehindCamera, SamplingExhausted

logger = logging.getLogger(__name__)

CONFIDENCE_SCALE = 20.0
DETECTIONS_DIRECTORY = "detections"
MASKS_DIRECTORY = "masks"
CALIBRATION_FILE = "calibration.json"

# Stream keys of BoxcertUtilities.seeded_generator
_RIG_STREAM = 0
_SCENE_STREAM = 1
_CORRUPTION_STREAM = 2


def default_camera() -> PinholeCamera:
    return PinholeCamera(fx=1000.0, fy=1000.0, cx=819.5, cy=615.5, width=1640, height=1232)


@dataclass(frozen=True)
class SceneConfig(object):
    """
    Synthetic scene generator settings.

    :ivar dims_range: Min/max box edge length in meters
    :ivar depth_range: Min/max depth of the box center in meters
    :ivar rotation: `uniform` over SO(3) or `axis_limited` about ``rotation_axis`` up to ``max_angle_deg``
    :ivar baseline: Stereo baseline in meters, the right camera sits on the left camera's +x axis
    :ivar camera: Intrinsics template shared by both cameras
    :ivar noise_sigma: Keypoint noise standard deviation in pixels
    :ivar noise_model: `isotropic` or `heteroscedastic` (per-keypoint sigma drawn log-uniformly in [σ/4, 4σ])
    :ivar outlier_rate: Fraction of keypoints replaced by an outlier
    :ivar outlier_magnitude: Outlier offset in pixels
    :ivar dropout_rate: Fraction of keypoints dropped
    :ivar rig_toe_in_deg: Angle of a random rotation applied to the right camera
    :ivar seed: Root seed
    :ivar max_attempts: Rejection-sampling budget per scene
    """

    SUPPORTED_ROTATIONS = ("uniform", "axis_limited")
    SUPPORTED_NOISE_MODELS = ("isotropic", "heteroscedastic")

    dims_range: Tuple[float, float] = (0.1, 0.4)
    depth_range: Tuple[float, float] = (1.5, 3.0)
    rotation: str = "uniform"
    rotation_axis: Tuple[float, float, float] = (0.0, 1.0, 0.0)
    max_angle_deg: float = 180.0
    baseline: float = 0.12
    camera: PinholeCamera = field(default_factory=default_camera)
    noise_sigma: float = 0.0
    noise_model: str = "isotropic"
    outlier_rate: float = 0.0
    outlier_magnitude: float = 50.0
    dropout_rate: float = 0.0
    rig_toe_in_deg: float = 0.0
    seed: int = 0
    max_attempts: int = 1000

    def __post_init__(self):
        for name in ("dims_range", "depth_range"):
            low, high = getattr(self, name)
            if not 0.0 < low <= high:
                raise BoxcertValidationError(f"'{name}' must be a non-empty positive range, got {(low, high)}")
        if self.rotation not in self.SUPPORTED_ROTATIONS:
            raise BoxcertValidationError(
                f"Unsupported rotation sampling [{self.rotation}]. Supported values are [{','.join(self.SUPPORTED_ROTATIONS)}]"
            )
        if self.noise_model not in self.SUPPORTED_NOISE_MODELS:
            raise BoxcertValidationError(
                f"Unsupported noise model [{self.noise_model}]. "
                f"Supported values are [{','.join(self.SUPPORTED_NOISE_MODELS)}]"
            )
        for name in ("outlier_rate", "dropout_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise BoxcertValidationError(f"'{name}' must be in [0, 1], got {getattr(self, name)}")
        if not self.baseline > 0.0:
            raise BoxcertValidationError(f"Baseline must be positive, got {self.baseline}")
        if self.noise_sigma < 0.0 or self.outlier_magnitude < 0.0 or self.rig_toe_in_deg < 0.0:
            raise BoxcertValidationError("Noise sigma, outlier magnitude and toe-in angle must be non-negative")
        if self.seed < 0 or self.max_attempts <= 0:
            raise BoxcertValidationError("Seed must be non-negative and max_attempts positive")


@dataclass(frozen=True, eq=False)
class SyntheticScene(object):
    """
    :ivar clean_keypoints: Noise-free projections of the 8 corners, ``{view: (8, 2)}``
    """

    frame_id: str
    index: int
    truth: BoxState
    rig: StereoRig
    clean_keypoints: Dict[str, np.ndarray]
    masks: ViewMasks


def frame_id_for(index: int) -> str:
    return f"scene_{index:06d}"


def build_rig(cfg: SceneConfig) -> StereoRig:
    """
    Stereo rig of a scene configuration. The right camera center is ``baseline`` meters along the left x-axis,
    optionally toed in by a seeded random rotation shared by every scene of the configuration.
    """
    rotation = np.eye(3)
    if cfg.rig_toe_in_deg > 0.0:
        rng = BoxcertUtilities.seeded_generator(cfg.seed, _RIG_STREAM)
        axis = rng.normal(size=3)
        rotation = Rotation.from_rotvec(np.deg2rad(cfg.rig_toe_in_deg) * axis / np.linalg.norm(axis)).as_matrix()
    center_right = np.array([cfg.baseline, 0.0, 0.0])
    return StereoRig(cfg.camera, cfg.camera, Pose(Rotation3(rotation), -rotation @ center_right))


def _sample_rotation(cfg: SceneConfig, rng: np.random.Generator) -> Rotation3:
    if cfg.rotation == "uniform":
        return Rotation3(Rotation.random(1, rng).as_matrix()[0])
    axis = np.asarray(cfg.rotation_axis, dtype=float)
    angle = np.deg2rad(rng.uniform(-cfg.max_angle_deg, cfg.max_angle_deg))
    return Rotation3(Rotation.from_rotvec(angle * axis / np.linalg.norm(axis)).as_matrix())


def generate_scene(cfg: SceneConfig, index: int) -> SyntheticScene:
    """
    Draws a box whose 16 corner projections are in front of both cameras and inside both images.

    :param cfg: Scene configuration
    :param index: Scene index, combined with the seed into the scene's own random stream
    :return: SyntheticScene instance
    :raises SamplingExhausted: if no valid box is found within ``max_attempts`` draws
    """
    rng = BoxcertUtilities.seeded_generator(cfg.seed, _SCENE_STREAM, index)
    rig = build_rig(cfg)
    camera = rig.left
    for attempt in range(cfg.max_attempts):
        dims = rng.uniform(*cfg.dims_range, size=3)
        rotation = _sample_rotation(cfg, rng)
        depth = rng.uniform(*cfg.depth_range)
        pixel = rng.uniform([-0.5, -0.5], [camera.width - 0.5, camera.height - 0.5])
        translation = depth * (camera.inverse_matrix @ np.array([pixel[0], pixel[1], 1.0]))
        truth = BoxState(Pose(rotation, translation), Shape(dims))
        try:
            clean = reproject_corners(truth, rig)
        except PointBehindCamera:
            continue
        if all(rig.camera(view).contains(clean[view]).all() for view in VIEWS):
            logger.debug(f"Scene {index} accepted after {attempt + 1} draws")
            return SyntheticScene(
                frame_id=frame_id_for(index),
                index=index,
                truth=truth,
                rig=rig,
                clean_keypoints=clean,
                masks=_render_masks(truth, rig)
            )
    raise SamplingExhausted(f"No box of scene {index} fits in both views after {cfg.max_attempts} attempts")


def perturb_keypoints(
        clean: np.ndarray,
        cfg: SceneConfig,
        rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Applies the detector noise model to clean keypoints.

    Every random draw is made for every keypoint whatever the rates, so a configuration change never
    shifts the stream of the other keypoints.

    :param clean: (N, 2) clean pixels
    :param cfg: Scene configuration
    :param rng: Random generator
    :return: Perturbed pixels, kept flags and confidences
    """
    clean = np.asarray(clean, dtype=float)
    count = len(clean)
    kept = rng.random(count) >= cfg.dropout_rate
    sigma = np.full(count, cfg.noise_sigma)
    spread = rng.uniform(-2.0, 2.0, count)
    if cfg.noise_model == "heteroscedastic":
        sigma = sigma * 2.0 ** spread
    noise = rng.normal(size=(count, 2)) * sigma[:, None]
    outlier = rng.random(count) < cfg.outlier_rate
    angle = rng.uniform(0.0, 2.0 * np.pi, count)
    offset = cfg.outlier_magnitude * np.column_stack((np.cos(angle), np.sin(angle)))
    perturbation = np.where(outlier[:, None], offset, noise)
    confidence = np.exp(-np.linalg.norm(perturbation, axis=1) / CONFIDENCE_SCALE)
    return clean + perturbation, kept, confidence


def corrupt_observations(scene: SyntheticScene, cfg: SceneConfig) -> FrameObservation:
    """
    Simulates detector output for a scene: dropout, Gaussian noise, outliers and a confidence proxy
    that decays with the size of the perturbation.
    """
    rng = BoxcertUtilities.seeded_generator(cfg.seed, _CORRUPTION_STREAM, scene.index)
    clean = np.concatenate([scene.clean_keypoints[view] for view in VIEWS])
    pixels, kept, confidence = perturb_keypoints(clean, cfg, rng)
    views = {}
    for offset, view in enumerate(VIEWS):
        views[view] = tuple(
            KeypointObservation(corner, pixels[8 * offset + corner], confidence[8 * offset + corner])
            for corner in range(8) if kept[8 * offset + corner]
        )
    return FrameObservation(left=views[LEFT], right=views[RIGHT], frame_id=scene.frame_id)


def _render_masks(truth: BoxState, rig: StereoRig) -> ViewMasks:
    masks = render_view_masks(truth, rig)
    for view in VIEWS:
        if masks.view(view).is_empty:
            logger.warning(f"Ground-truth silhouette of the {view} view is empty, the box projects below one pixel")
    return masks


def clean_observation(scene: SyntheticScene) -> FrameObservation:
    """ Noise-free observation of all 16 corners with confidence 1 """
    return FrameObservation(
        left=tuple(KeypointObservation(i, scene.clean_keypoints[LEFT][i]) for i in range(8)),
        right=tuple(KeypointObservation(i, scene.clean_keypoints[RIGHT][i]) for i in range(8)),
        frame_id=scene.frame_id
    )


def render_gt_masks(scene: SyntheticScene) -> ViewMasks:
    """ Silhouettes of the true box in both views; the right view uses ``T_right_from_left · pose`` """
    return _render_masks(scene.truth, scene.rig)


def write_scene(scene: SyntheticScene, observation: FrameObservation, out_dir: str) -> None:
    """
    Dumps a scene as a detection file carrying the truth and clean keypoints, plus one PGM mask per view.

    Layout: ``<out_dir>/detections/<frame_id>.json`` and ``<out_dir>/masks/<frame_id>_<view>.pgm``.
    """
    formats.write_detection(
        os.path.join(out_dir, DETECTIONS_DIRECTORY, f"{scene.frame_id}.json"),
        observation,
        truth=scene.truth,
        clean=scene.clean_keypoints
    )
    for view in VIEWS:
        formats.write_mask(formats.mask_path(os.path.join(out_dir, MASKS_DIRECTORY), scene.frame_id, view),
                           scene.masks.view(view))
