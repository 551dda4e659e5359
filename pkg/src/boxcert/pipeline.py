import functools
import glob
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import spearmanr

from . import formats, sampling
from .certificates import (
    CertificateReport,
    CertificateThresholds,
    KeypointCertificate,
    ViewMasks,
    render_view_masks,
    reproject_corners,
    select_pseudo_labels,
)
from .estimator import BoxState, FrameObservation, KeypointObservation, SolveResult, SolverConfig, pseudo_ground_truth, solve
from .geometry import LEFT, RIGHT, VIEWS, Pose, Shape, StereoRig, cube_rotation_group, geodesic_distance
from .utilities import (
    BoxcertError,
    BoxcertUtilities,
    BoxcertValidationError,
    DegeneratePolygon,
    MissingTruth,
    ParseError,
    PointBehindCamera,
)

logger = logging.getLogger(__name__)

STAGE_INGEST = "ingest"
STAGE_ESTIMATE = "estimate"
STAGE_CERTIFY = "certify"
DEFAULT_CDF_THRESHOLDS = tuple(float(value) for value in range(0, 51))


@dataclass(frozen=True)
class RunConfig(object):
    """
    :ivar eps_conf: Keypoints with confidence <= eps_conf are dropped at ingestion
    :ivar mask_source: `ground_truth` (rendered or dumped GT silhouettes) or `external_files` (segmentation output)
    :ivar parallelism: Number of worker processes, 1 runs inline
    """

    SUPPORTED_MASK_SOURCES = ("ground_truth", "external_files")

    eps_conf: float
    solver: SolverConfig = field(default_factory=SolverConfig)
    thresholds: CertificateThresholds = field(default_factory=CertificateThresholds)
    mask_source: str = "ground_truth"
    parallelism: int = 1

    def __post_init__(self):
        if not 0.0 <= self.eps_conf <= 1.0:
            raise BoxcertValidationError(f"'eps_conf' must be in [0, 1], got {self.eps_conf}")
        if self.mask_source not in self.SUPPORTED_MASK_SOURCES:
            raise BoxcertValidationError(
                f"Unsupported mask source [{self.mask_source}]. "
                f"Supported values are [{','.join(self.SUPPORTED_MASK_SOURCES)}]"
            )
        if int(self.parallelism) != self.parallelism or self.parallelism < 1:
            raise BoxcertValidationError(f"'parallelism' must be a positive integer, got {self.parallelism}")


@dataclass(frozen=True)
class FrameError(object):
    frame_id: str
    stage: str
    kind: str
    message: str

    @classmethod
    def from_exception(cls, frame_id: str, stage: str, err: Exception) -> "FrameError":
        message = str(err) if isinstance(err, ParseError) else getattr(err, "msg", "") or str(err)
        return cls(frame_id, stage, type(err).__name__, message)

    def to_dict(self) -> dict:
        return {"stage": self.stage, "kind": self.kind, "message": self.message}


@dataclass(frozen=True, eq=False)
class FrameRecord(object):
    frame_id: str
    observation: Optional[FrameObservation] = None
    result: Optional[SolveResult] = None
    report: Optional[CertificateReport] = None
    error: Optional[FrameError] = None


@dataclass(frozen=True, eq=False)
class FrameTruth(object):
    """
    :ivar clean_keypoints: Ground-truth projections of the 8 corners, ``{view: (8, 2)}``
    """

    frame_id: str
    state: BoxState
    clean_keypoints: Dict[str, np.ndarray]


class MaskSource(object):
    """ Callable returning the reference masks of a frame """

    name = ""

    def __call__(self, frame_id: str) -> ViewMasks:
        raise NotImplementedError


class DirectoryMaskSource(MaskSource):
    """ Reads ``<frame_id>_left.pgm`` and ``<frame_id>_right.pgm`` from a directory """

    def __init__(self, directory: str, rig: StereoRig, name: str = "external_files"):
        self.directory = directory
        self.rig = rig
        self.name = name

    def __call__(self, frame_id: str) -> ViewMasks:
        return formats.read_view_masks(self.directory, frame_id, self.rig)


class SceneMaskSource(MaskSource):
    """ Renders ground-truth silhouettes from known box states """

    name = "ground_truth"

    def __init__(self, truths: Mapping[str, BoxState], rig: StereoRig):
        self.truths = dict(truths)
        self.rig = rig

    def __call__(self, frame_id: str) -> ViewMasks:
        if frame_id not in self.truths:
            raise MissingTruth(f"No ground-truth state for frame '{frame_id}'")
        return render_view_masks(self.truths[frame_id], self.rig)


def _ordered_map(func: Callable, items: Sequence, workers: int) -> list:
    """ Maps ``func`` over ``items`` in worker processes; results keep the input order """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    chunksize = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, items, chunksize=chunksize))


def detection_files(path: str) -> List[str]:
    if os.path.isdir(path):
        return sorted(glob.glob(os.path.join(path, "*.json")))
    return [path]


def ingest_detections(
        path: str,
        eps_conf: float,
        isolate: bool = False
) -> List[Union[FrameObservation, FrameError]]:
    """
    Reads detection files and drops keypoints whose confidence is not above ``eps_conf``.

    Frames left with fewer keypoints than the solver needs are kept and reported as unsolvable.

    :param path: Detection file or directory of ``*.json`` detection files, read in name order
    :param eps_conf: Confidence gate in [0, 1]
    :param isolate: Turn unreadable files into FrameError entries instead of raising
    :return: One entry per file
    :raises ParseError: if a file violates the schema and ``isolate`` is False
    :raises DuplicateCorner: if a corner appears twice in one view and ``isolate`` is False
    """
    if not 0.0 <= eps_conf <= 1.0:
        raise BoxcertValidationError(f"'eps_conf' must be in [0, 1], got {eps_conf}")
    frames = []
    for file in detection_files(path):
        try:
            observation = formats.read_detection(file).observation.filter_confidence(eps_conf)
        except ParseError as err:
            if not isolate:
                raise
            logger.warning(f"Skipping unreadable detection file: {err}")
            frames.append(FrameError.from_exception(os.path.splitext(os.path.basename(file))[0], STAGE_INGEST, err))
            continue
        if not observation.is_solvable:
            logger.verbose(f"Frame '{observation.frame_id}' kept {observation.count} keypoints, flagged unsolvable")
        frames.append(observation)
    logger.info(f"Ingested {len(frames)} frames from [{path}]")
    return frames


def _estimate_one(frame: Union[FrameObservation, FrameError], rig: StereoRig, solver: SolverConfig) -> FrameRecord:
    if isinstance(frame, FrameError):
        return FrameRecord(frame.frame_id, error=frame)
    if not frame.is_solvable:
        return FrameRecord(frame.frame_id, frame, error=FrameError(
            frame.frame_id, STAGE_ESTIMATE, "InsufficientObservations",
            f"{frame.count} keypoints with {len(frame.stereo_corners())} stereo corners is not enough to solve"
        ))
    try:
        return FrameRecord(frame.frame_id, frame, result=solve(frame, rig, solver))
    except (BoxcertError, ArithmeticError, ValueError, np.linalg.LinAlgError) as err:
        logger.debug(f"Solving frame '{frame.frame_id}' failed with {type(err).__name__}: {err}")
        return FrameRecord(frame.frame_id, frame, error=FrameError.from_exception(frame.frame_id, STAGE_ESTIMATE, err))


def _certify_one(
        record: FrameRecord,
        rig: StereoRig,
        mask_source: MaskSource,
        thresholds: CertificateThresholds,
        depth_min: float
) -> FrameRecord:
    if record.result is None:
        reason = record.error.message if record.error is not None else "frame was not solved"
        return replace(record, report=CertificateReport.rejected(record.frame_id, reason))
    try:
        masks = mask_source(record.frame_id)
        report = select_pseudo_labels(record.result, record.observation, rig, masks, thresholds, depth_min)
    except (BoxcertError, OSError) as err:
        logger.debug(f"Certifying frame '{record.frame_id}' failed with {type(err).__name__}: {err}")
        error = FrameError.from_exception(record.frame_id, STAGE_CERTIFY, err)
        return replace(record, report=CertificateReport.rejected(record.frame_id, error.message), error=error)
    return replace(record, report=report)


@BoxcertUtilities.timed_operation
def estimate_frames(
        frames: Iterable[Union[FrameObservation, FrameError]],
        rig: StereoRig,
        cfg: RunConfig
) -> List[FrameRecord]:
    """ Solves every frame; failures become FrameError records and never abort the batch """
    records = _ordered_map(functools.partial(_estimate_one, rig=rig, solver=cfg.solver), frames, cfg.parallelism)
    solved = sum(record.result is not None for record in records)
    logger.info(f"Solved {solved} of {len(records)} frames")
    return records


@BoxcertUtilities.timed_operation
def certify_frames(
        records: Iterable[FrameRecord],
        rig: StereoRig,
        mask_source: MaskSource,
        thresholds: CertificateThresholds,
        parallelism: int = 1,
        depth_min: float = SolverConfig.depth_min
) -> List[FrameRecord]:
    """ Attaches a CertificateReport to every record; unsolved frames get a rejection report """
    certify = functools.partial(
        _certify_one, rig=rig, mask_source=mask_source, thresholds=thresholds, depth_min=depth_min
    )
    certified = _ordered_map(certify, records, parallelism)
    accepted = sum(record.report.accepted for record in certified)
    logger.info(f"Accepted {accepted} of {len(certified)} frames")
    return certified


def run_batch(
        frames: Iterable[Union[FrameObservation, FrameError]],
        rig: StereoRig,
        cfg: RunConfig,
        mask_source: MaskSource
) -> List[FrameRecord]:
    """
    Solve, certify and select pseudo-labels for every frame. The output order follows the input order
    for any worker count.
    """
    records = estimate_frames(frames, rig, cfg)
    return certify_frames(records, rig, mask_source, cfg.thresholds, cfg.parallelism, cfg.solver.depth_min)


def _encode_error(error: Optional[FrameError]) -> Optional[dict]:
    return error.to_dict() if error is not None else None


def _decode_error(frame_id: str, document: Optional[dict]) -> Optional[FrameError]:
    if document is None:
        return None
    return FrameError(frame_id, document["stage"], document["kind"], document["message"])


def write_results(path: str, rig: StereoRig, records: Sequence[FrameRecord], eps_conf: float) -> None:
    formats.write_json(path, {
        "calibration": formats.encode_rig(rig),
        "eps_conf": eps_conf,
        "frames": [
            {
                "frame_id": record.frame_id,
                "observation": formats.encode_observation(record.observation) if record.observation else None,
                "result": formats.encode_solve_result(record.result) if record.result else None,
                "error": _encode_error(record.error)
            }
            for record in records
        ]
    })


def read_results(path: str) -> Tuple[StereoRig, List[FrameRecord]]:
    document = formats.read_json(path, formats.RESULTS_SCHEMA)
    rig = formats.decode_rig(document["calibration"], path)
    records = []
    for entry in document["frames"]:
        frame_id = entry["frame_id"]
        observation = None
        if entry["observation"] is not None:
            observation = formats.decode_observation(entry["observation"], frame_id, path)
        result = formats.decode_solve_result(entry["result"], path) if entry["result"] is not None else None
        records.append(FrameRecord(frame_id, observation, result, error=_decode_error(frame_id, entry["error"])))
    return rig, records


def write_reports(
        path: str,
        rig: StereoRig,
        thresholds: CertificateThresholds,
        mask_source: str,
        records: Sequence[FrameRecord]
) -> None:
    frames = []
    for record in records:
        entry = formats.encode_report(record.report)
        entry["error"] = _encode_error(record.error)
        frames.append(entry)
    formats.write_json(path, {
        "calibration": formats.encode_rig(rig),
        "thresholds": formats.encode_thresholds(thresholds),
        "mask_source": mask_source,
        "frames": frames
    })


def read_reports(path: str) -> Tuple[StereoRig, CertificateThresholds, str, List[CertificateReport]]:
    document = formats.read_json(path, formats.REPORTS_SCHEMA)
    rig = formats.decode_rig(document["calibration"], path)
    try:
        thresholds = CertificateThresholds(**document["thresholds"])
    except (TypeError, BoxcertValidationError) as err:
        raise ParseError(f"Invalid thresholds: {err}", file=path, field_path="thresholds") from err
    reports = [formats.decode_report(entry) for entry in document["frames"]]
    return rig, thresholds, document["mask_source"], reports


def emit_pseudo_label_dataset(
        reports: Sequence[CertificateReport],
        path: str,
        thresholds: CertificateThresholds
) -> None:
    """
    Writes the pseudo-label dataset: one record per accepted frame with its labels and certificate
    scores, and the rejected frames with their failure reasons.
    """
    accepted = [report for report in reports if report.accepted]
    formats.write_json(path, {
        "thresholds": formats.encode_thresholds(thresholds),
        "accepted": [
            {
                "frame_id": report.frame_id,
                "labels": [formats.encode_label(label) for label in report.labels],
                "scores": {
                    "iou_left": report.iou_left,
                    "iou_right": report.iou_right,
                    "residual_norms": [kp.residual_norm for kp in report.keypoints],
                    "epipolar_ydiffs": [check.ydiff for check in report.epipolar]
                }
            }
            for report in accepted
        ],
        "rejected": [
            {"frame_id": report.frame_id, "failure_reasons": list(report.failure_reasons)}
            for report in reports if not report.accepted
        ]
    })
    logger.info(f"Wrote {len(accepted)} accepted and {len(reports) - len(accepted)} rejected frames to [{path}]")


def load_truths(path: str, rig: StereoRig, solver: Optional[SolverConfig] = None) -> Dict[str, FrameTruth]:
    """
    Reads ground truth from detection files. Files carrying clean keypoints but no state get a pseudo
    ground-truth state solved from those keypoints; files with neither are skipped.
    """
    truths = {}
    for file in detection_files(path):
        record = formats.read_detection(file)
        state, clean = record.truth, record.clean
        if state is None and clean is None:
            continue
        if state is None:
            labelled = FrameObservation(
                left=tuple(KeypointObservation(i, clean[LEFT][i]) for i in range(8)),
                right=tuple(KeypointObservation(i, clean[RIGHT][i]) for i in range(8)),
                frame_id=record.frame_id
            )
            state = pseudo_ground_truth(labelled, rig, solver)
        if clean is None:
            clean = reproject_corners(state, rig)
        truths[record.frame_id] = FrameTruth(record.frame_id, state, clean)
    logger.debug(f"Loaded ground truth of {len(truths)} frames from [{path}]")
    return truths


@dataclass(frozen=True)
class FrameMetrics(object):
    frame_id: str
    position_error: float
    rotation_error: float
    shape_error: float
    symmetry: int


@dataclass(frozen=True, eq=False)
class EvalSummary(object):
    """
    :ivar rmse_cdf: ``(threshold px, fraction)`` over the pixel errors of emitted pseudo-labels
    :ivar rmse_cdf_all: Same over every retained predicted keypoint
    """

    ape: float
    are: float
    ase: float
    rmse_cdf: Tuple[Tuple[float, float], ...]
    rmse_cdf_all: Tuple[Tuple[float, float], ...]
    frames: Tuple[FrameMetrics, ...]


def align_to_truth(estimate: BoxState, truth: BoxState) -> Tuple[BoxState, int]:
    """
    Re-expresses ``estimate`` under the cube symmetry whose labelled corners are closest to the truth.

    :return: Aligned state and the index of the symmetry in :func:`cube_rotation_group`
    """
    target = truth.corners()
    best, best_index, best_error = estimate, 0, np.inf
    for index, symmetry in enumerate(cube_rotation_group()):
        candidate = BoxState(
            Pose(estimate.pose.rotation.compose(symmetry.rotation), estimate.pose.translation),
            Shape(symmetry.permute_dims(estimate.shape.dims))
        )
        error = float(np.mean(np.sum((candidate.corners() - target) ** 2, axis=1)))
        if error < best_error:
            best, best_index, best_error = candidate, index, error
    return best, best_index


def _cdf(errors: Sequence[float], thresholds: Sequence[float]) -> Tuple[Tuple[float, float], ...]:
    errors = np.sort(np.asarray(errors, dtype=float))
    if errors.size == 0:
        return tuple((float(threshold), 0.0) for threshold in thresholds)
    return tuple(
        (float(threshold), float(np.searchsorted(errors, threshold, side="right")) / errors.size)
        for threshold in thresholds
    )


def _truth(truths: Mapping[str, FrameTruth], frame_id: str) -> FrameTruth:
    if frame_id not in truths:
        raise MissingTruth(f"No ground truth for frame '{frame_id}'")
    return truths[frame_id]


def _pixel_error(pixel, truth: FrameTruth, view: str, corner: int) -> float:
    return float(np.linalg.norm(np.asarray(pixel) - truth.clean_keypoints[view][corner]))


def evaluate(
        estimates: Mapping[str, BoxState],
        truths: Mapping[str, FrameTruth],
        reports: Sequence[CertificateReport] = (),
        observations: Sequence[FrameObservation] = (),
        cdf_thresholds: Sequence[float] = DEFAULT_CDF_THRESHOLDS
) -> EvalSummary:
    """
    Pose and shape errors after symmetry alignment, plus keypoint error CDFs.

    :param estimates: Estimated state per frame id
    :param truths: Ground truth per frame id
    :param reports: Certificate reports whose labels feed ``rmse_cdf``
    :param observations: Retained detections that feed ``rmse_cdf_all``
    :param cdf_thresholds: Pixel thresholds of the CDFs
    :return: EvalSummary instance
    :raises MissingTruth: if a frame has no ground truth
    """
    metrics = []
    for frame_id, estimate in estimates.items():
        truth = _truth(truths, frame_id)
        aligned, symmetry = align_to_truth(estimate, truth.state)
        metrics.append(FrameMetrics(
            frame_id=frame_id,
            position_error=float(np.linalg.norm(aligned.pose.translation - truth.state.pose.translation)),
            rotation_error=geodesic_distance(aligned.pose.rotation, truth.state.pose.rotation),
            shape_error=float(np.linalg.norm(aligned.shape.dims - truth.state.shape.dims)),
            symmetry=symmetry
        ))
    label_errors = [
        _pixel_error(label.pixel, _truth(truths, report.frame_id), label.view, label.corner_index)
        for report in reports for label in report.labels
    ]
    detection_errors = [
        _pixel_error(keypoint.pixel, _truth(truths, obs.frame_id), view, keypoint.corner_index)
        for obs in observations for view in VIEWS for keypoint in obs.view(view)
    ]
    if not metrics:
        logger.warning("No solved frame to evaluate")

    def mean(name):
        return float(np.mean([getattr(metric, name) for metric in metrics])) if metrics else float("nan")

    summary = EvalSummary(
        ape=mean("position_error"),
        are=mean("rotation_error"),
        ase=mean("shape_error"),
        rmse_cdf=_cdf(label_errors, cdf_thresholds),
        rmse_cdf_all=_cdf(detection_errors, cdf_thresholds),
        frames=tuple(metrics)
    )
    logger.info(f"APE {summary.ape:.6f} m, ARE {summary.are:.6f} rad, ASE {summary.ase:.6f} m over {len(metrics)} frames")
    return summary


@dataclass(frozen=True)
class Binning(object):
    """
    :ivar count: Number of bins
    :ivar kind: `quantile` (equal-count bins) or `uniform` (equal-width bins)
    """

    SUPPORTED_KINDS = ("quantile", "uniform")

    count: int = 6
    kind: str = "uniform"

    def __post_init__(self):
        if self.kind not in self.SUPPORTED_KINDS:
            raise BoxcertValidationError(
                f"Unsupported binning [{self.kind}]. Supported values are [{','.join(self.SUPPORTED_KINDS)}]"
            )
        if self.count < 1:
            raise BoxcertValidationError(f"Bin count must be positive, got {self.count}")

    def edges(self, values: Sequence[float]) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if self.kind == "quantile":
            edges = np.unique(np.quantile(values, np.linspace(0.0, 1.0, self.count + 1)))
        else:
            edges = np.unique(np.linspace(values.min(), values.max(), self.count + 1))
        if len(edges) < 2:
            edges = np.array([values.min(), values.max()])
        return edges

    def assign(self, values: Sequence[float], edges: np.ndarray) -> np.ndarray:
        indices = np.searchsorted(edges, np.asarray(values, dtype=float), side="right") - 1
        return np.clip(indices, 0, len(edges) - 2)


@dataclass(frozen=True, eq=False)
class CorrelationReport(object):
    """
    Certificate scores against ground-truth label quality.

    :ivar iou_table: ``(bin_low, bin_high, frames, mean_rmse)`` over frame minimum IoU
    :ivar residual_table: ``(bin_low, bin_high, predicted_better, reprojected_better)`` over keypoint residuals
    :ivar epipolar_table: ``(bin_low, bin_high, corners, mean_rmse)`` over rectified y-differences
    :ivar crossover_residual: Lower edge of the first residual bin where reprojected keypoints become the
        majority after a predicted-majority bin, None without crossover
    :ivar accepted_rmse: Mean label RMSE of accepted frames
    :ivar rejected_rmse: Mean would-be label RMSE of rejected frames
    """

    IOU_HEADER = ("iou_low", "iou_high", "frames", "mean_rmse")
    RESIDUAL_HEADER = ("residual_low", "residual_high", "predicted_better", "reprojected_better")
    EPIPOLAR_HEADER = ("ydiff_low", "ydiff_high", "corners", "mean_rmse")

    iou_table: Tuple[tuple, ...]
    residual_table: Tuple[tuple, ...]
    epipolar_table: Tuple[tuple, ...]
    iou_spearman: float
    epipolar_spearman: float
    crossover_residual: Optional[float]
    accepted_rmse: float
    rejected_rmse: float


def _mean_table(values, targets, binning: Binning) -> Tuple[tuple, ...]:
    if not len(values):
        return ()
    edges = binning.edges(values)
    indices = binning.assign(values, edges)
    targets = np.asarray(targets, dtype=float)
    rows = []
    for index in range(len(edges) - 1):
        selected = targets[indices == index]
        rows.append((
            float(edges[index]), float(edges[index + 1]), int(selected.size),
            float(np.mean(selected)) if selected.size else None
        ))
    return tuple(rows)


def _spearman(table: Sequence[tuple]) -> float:
    rows = [row for row in table if row[3] is not None]
    if len(rows) < 3:
        return float("nan")
    rho, _ = spearmanr([0.5 * (row[0] + row[1]) for row in rows], [row[3] for row in rows])
    return float(rho)


def _crossover(table: Sequence[tuple]) -> Optional[float]:
    seen_predicted = False
    for low, _, predicted, reprojected in table:
        if predicted > reprojected:
            seen_predicted = True
        elif reprojected > predicted and seen_predicted:
            return low
    return None


def _rmse(errors: Sequence[float]) -> float:
    return float(np.sqrt(np.mean(np.square(errors))))


def certificate_correlation_report(
        reports: Sequence[CertificateReport],
        truths: Mapping[str, FrameTruth],
        binning: Binning = Binning(),
        residual_binning: Binning = Binning(8, "quantile")
) -> CorrelationReport:
    """
    Bins every certificate score against the ground-truth error of the labels it gates.

    :param reports: Certificate reports, rejected frames included
    :param truths: Ground truth per frame id
    :param binning: Bin layout of the IoU and epipolar tables
    :param residual_binning: Bin layout of the residual table
    :return: CorrelationReport instance
    :raises MissingTruth: if a reported frame has no ground truth
    """
    frame_iou, frame_rmse, accepted, rejected = [], [], [], []
    residuals, predicted_better = [], []
    ydiffs, corner_rmse = [], []
    for report in reports:
        if not report.candidates and not report.keypoints:
            continue
        truth = _truth(truths, report.frame_id)
        if report.candidates:
            rmse = _rmse([
                _pixel_error(label.pixel, truth, label.view, label.corner_index) for label in report.candidates
            ])
            (accepted if report.accepted else rejected).append(rmse)
            if report.min_iou is not None:
                frame_iou.append(report.min_iou)
                frame_rmse.append(rmse)
        chosen: Dict[Tuple[str, int], KeypointCertificate] = {}
        for certificate in report.keypoints:
            chosen[(certificate.view, certificate.corner_index)] = certificate
            predicted_error = _pixel_error(certificate.predicted, truth, certificate.view, certificate.corner_index)
            reprojected_error = _pixel_error(certificate.reprojected, truth, certificate.view, certificate.corner_index)
            if predicted_error != reprojected_error:
                residuals.append(certificate.residual_norm)
                predicted_better.append(predicted_error < reprojected_error)
        for check in report.epipolar:
            errors = [
                _pixel_error(chosen[(view, check.corner_index)].chosen, truth, view, check.corner_index)
                for view in VIEWS
            ]
            ydiffs.append(check.ydiff)
            corner_rmse.append(_rmse(errors))

    iou_table = _mean_table(frame_iou, frame_rmse, binning)
    epipolar_table = _mean_table(ydiffs, corner_rmse, binning)
    residual_table = ()
    if residuals:
        edges = residual_binning.edges(residuals)
        indices = residual_binning.assign(residuals, edges)
        better = np.asarray(predicted_better, dtype=bool)
        residual_table = tuple(
            (float(edges[i]), float(edges[i + 1]), int(np.sum(better[indices == i])), int(np.sum(~better[indices == i])))
            for i in range(len(edges) - 1)
        )
    report = CorrelationReport(
        iou_table=iou_table,
        residual_table=residual_table,
        epipolar_table=epipolar_table,
        iou_spearman=_spearman(iou_table),
        epipolar_spearman=_spearman(epipolar_table),
        crossover_residual=_crossover(residual_table),
        accepted_rmse=float(np.mean(accepted)) if accepted else float("nan"),
        rejected_rmse=float(np.mean(rejected)) if rejected else float("nan")
    )
    logger.info(
        f"Spearman IoU/RMSE {report.iou_spearman:.3f}, epipolar/RMSE {report.epipolar_spearman:.3f}, "
        f"residual crossover {report.crossover_residual}, label RMSE accepted {report.accepted_rmse:.3f} px "
        f"vs rejected {report.rejected_rmse:.3f} px"
    )
    return report


def write_correlation_tables(report: CorrelationReport, out_dir: str) -> List[str]:
    paths = [
        os.path.join(out_dir, "iou_vs_rmse.csv"),
        os.path.join(out_dir, "residual_crossover.csv"),
        os.path.join(out_dir, "epipolar_vs_rmse.csv")
    ]
    formats.write_csv(paths[0], CorrelationReport.IOU_HEADER, report.iou_table)
    formats.write_csv(paths[1], CorrelationReport.RESIDUAL_HEADER, report.residual_table)
    formats.write_csv(paths[2], CorrelationReport.EPIPOLAR_HEADER, report.epipolar_table)
    return paths


def write_evaluation(summary: EvalSummary, path: str) -> List[str]:
    """ Writes per-frame metrics with a trailing mean row, and the two CDFs next to it """
    rows = [
        (metric.frame_id, metric.position_error, metric.rotation_error, metric.shape_error, metric.symmetry)
        for metric in summary.frames
    ]
    rows.append(("mean", summary.ape, summary.are, summary.ase, None))
    formats.write_csv(path, ("frame_id", "position_error_m", "rotation_error_rad", "shape_error_m", "symmetry"), rows)
    cdf_path = f"{os.path.splitext(path)[0]}_cdf.csv"
    formats.write_csv(
        cdf_path,
        ("threshold_px", "certified_fraction", "all_fraction"),
        [(threshold, certified, every) for (threshold, certified), (_, every) in zip(summary.rmse_cdf, summary.rmse_cdf_all)]
    )
    return [path, cdf_path]


def prompt_path(directory: str, frame_id: str, view: str) -> str:
    return os.path.join(directory, f"{frame_id}_{view}.json")


def emit_prompts(
        records: Sequence[FrameRecord],
        rig: StereoRig,
        strategy: str,
        n: int,
        seed: int,
        out_dir: str
) -> List[str]:
    """
    Writes segmentation point prompts inside the silhouette polygon of every solved frame, one file per
    frame and view.

    The sampling seed of a polygon is drawn from the ``(seed, frame position, view)`` stream, so a file
    only depends on the root seed and the frame's position in the results.

    :param records: Estimation records, unsolved frames are skipped
    :param rig: Stereo rig the states were solved in
    :param strategy: One of :data:`sampling.SUPPORTED_STRATEGIES`
    :param n: Samples per polygon
    :param seed: Root seed
    :param out_dir: Output directory
    :return: Written file paths
    """
    if strategy not in sampling.SUPPORTED_STRATEGIES:
        raise BoxcertValidationError(
            f"Unsupported sampling strategy [{strategy}]. "
            f"Supported values are [{','.join(sampling.SUPPORTED_STRATEGIES)}]"
        )
    paths = []
    for position, record in enumerate(records):
        if record.result is None:
            continue
        try:
            corners = reproject_corners(record.result.state, rig)
        except PointBehindCamera as err:
            logger.warning(f"No prompts for frame '{record.frame_id}': {err}")
            continue
        for view_index, view in enumerate(VIEWS):
            polygon_seed = int(BoxcertUtilities.seeded_generator(seed, position, view_index).integers(2 ** 63))
            try:
                polygon = sampling.ConvexPolygon.from_points(corners[view])
                batch = sampling.sample(polygon, strategy, n, polygon_seed)
            except DegeneratePolygon as err:
                logger.warning(f"No prompts for the {view} view of frame '{record.frame_id}': {err}")
                continue
            path = prompt_path(out_dir, record.frame_id, view)
            formats.write_json(path, {
                "frame_id": record.frame_id,
                "view": view,
                "strategy": strategy,
                "seed": polygon_seed,
                "points": batch.points.tolist()
            })
            paths.append(path)
    logger.info(f"Wrote {len(paths)} prompt files to [{out_dir}]")
    return paths
