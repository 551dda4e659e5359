import csv
import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import cv2
import numpy as np
from jsonschema import ValidationError, validate

from .certificates import (
    BitMask,
    CertificateReport,
    CertificateThresholds,
    EpipolarCheck,
    KeypointCertificate,
    PseudoLabel,
    ViewMasks,
)
from .estimator import BoxState, FrameObservation, KeypointObservation, ResidualEntry, SolveResult
from .geometry import (
    ORTHONORMALITY_TOLERANCE,
    VIEWS,
    PinholeCamera,
    Pose,
    Rotation3,
    Shape,
    StereoRig,
    project_to_so3,
)
from .utilities import BoxcertError, BoxcertValidationError, DimensionMismatch, ParseError

logger = logging.getLogger(__name__)

CALIBRATION_REPROJECTION_TOLERANCE = 1e-6
MASK_FOREGROUND_LEVEL = 128

_NUMBER = {"type": "number"}
_PIXEL = {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2}
_VECTOR3 = {"type": "array", "items": _NUMBER, "minItems": 3, "maxItems": 3}
_CAMERA = {
    "type": "object",
    "required": ["fx", "fy", "cx", "cy", "width", "height"],
    "properties": {
        "fx": {"type": "number", "exclusiveMinimum": 0},
        "fy": {"type": "number", "exclusiveMinimum": 0},
        "cx": _NUMBER,
        "cy": _NUMBER,
        "width": {"type": "integer", "minimum": 1},
        "height": {"type": "integer", "minimum": 1}
    }
}
_KEYPOINT = {
    "type": "object",
    "required": ["corner_index", "x", "y", "confidence"],
    "properties": {
        "corner_index": {"type": "integer", "minimum": 0, "maximum": 7},
        "x": _NUMBER,
        "y": _NUMBER,
        "confidence": {"type": "number", "minimum": 0, "maximum": 1}
    }
}
_STATE = {
    "type": "object",
    "required": ["rotation", "translation", "dims"],
    "properties": {
        "rotation": {"type": "array", "items": _VECTOR3, "minItems": 3, "maxItems": 3},
        "translation": _VECTOR3,
        "dims": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 3, "maxItems": 3}
    }
}

CALIBRATION_SCHEMA = {
    "type": "object",
    "required": ["left", "right", "t_right_from_left"],
    "properties": {
        "left": _CAMERA,
        "right": _CAMERA,
        "t_right_from_left": {
            "type": "array",
            "items": {"type": "array", "items": _NUMBER, "minItems": 4, "maxItems": 4},
            "minItems": 4,
            "maxItems": 4
        }
    }
}

DETECTION_SCHEMA = {
    "type": "object",
    "required": ["frame_id", "left", "right"],
    "properties": {
        "frame_id": {"type": "string", "minLength": 1},
        "left": {"type": "array", "items": _KEYPOINT},
        "right": {"type": "array", "items": _KEYPOINT},
        "truth": _STATE,
        "clean": {
            "type": "object",
            "required": list(VIEWS),
            "properties": {
                view: {"type": "array", "items": _PIXEL, "minItems": 8, "maxItems": 8} for view in VIEWS
            }
        }
    }
}

RESULTS_SCHEMA = {
    "type": "object",
    "required": ["calibration", "frames"],
    "properties": {
        "calibration": CALIBRATION_SCHEMA,
        "frames": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["frame_id", "observation", "result", "error"],
                "properties": {"frame_id": {"type": "string"}}
            }
        }
    }
}

REPORTS_SCHEMA = {
    "type": "object",
    "required": ["calibration", "thresholds", "mask_source", "frames"],
    "properties": {
        "calibration": CALIBRATION_SCHEMA,
        "frames": {
            "type": "array",
            "items": {"type": "object", "required": ["frame_id", "accepted"]}
        }
    }
}


@dataclass(frozen=True, eq=False)
class DetectionRecord(object):
    """
    Content of one detection file. ``truth`` and ``clean`` are only present in synthetic dumps or
    annotated datasets.
    """

    frame_id: str
    observation: FrameObservation
    truth: Optional[BoxState] = None
    clean: Optional[Dict[str, np.ndarray]] = None


def _field_path(err: ValidationError) -> str:
    return "/".join(str(part) for part in err.absolute_path)


def read_json(path: str, schema: Optional[dict] = None) -> dict:
    """
    Loads a JSON document and validates it against ``schema``.

    :raises ParseError: if the file is not valid JSON or violates the schema
    """
    try:
        with open(path, "r", encoding="utf-8") as stream:
            document = json.load(stream)
    except json.JSONDecodeError as err:
        logger.debug(f"JSON decoding of [{path}] failed: {err}")
        raise ParseError(f"Invalid JSON: {err.msg} at line {err.lineno}", file=path) from err
    if schema is not None:
        try:
            validate(instance=document, schema=schema)
        except ValidationError as err:
            logger.debug(f"Schema validation of [{path}] failed: {err}")
            raise ParseError(err.message, file=path, field_path=_field_path(err)) from err
    return document


def write_json(path: str, document) -> None:
    """ Writes ``document`` with a fixed layout so identical content yields identical bytes """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as stream:
        stream.write(json.dumps(document, indent=2, allow_nan=False))
        stream.write("\n")


def write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if value is None else value for value in row])


def _floats(values) -> list:
    return np.asarray(values, dtype=float).tolist()


def encode_camera(camera: PinholeCamera) -> dict:
    return {
        "fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy,
        "width": camera.width, "height": camera.height
    }


def encode_rig(rig: StereoRig) -> dict:
    return {
        "left": encode_camera(rig.left),
        "right": encode_camera(rig.right),
        "t_right_from_left": _floats(rig.t_right_from_left.as_matrix())
    }


def _decode_camera(document: dict) -> PinholeCamera:
    return PinholeCamera(**{key: document[key] for key in ("fx", "fy", "cx", "cy", "width", "height")})


def decode_rig(document: dict, path: str = "") -> StereoRig:
    """
    Builds a rig from a calibration document. Rotations off SO(3) by at most 1e-6 are re-projected.

    :raises ParseError: if the document is inconsistent
    """
    try:
        validate(instance=document, schema=CALIBRATION_SCHEMA)
    except ValidationError as err:
        raise ParseError(err.message, file=path, field_path=_field_path(err)) from err
    matrix = np.array(document["t_right_from_left"], dtype=float)
    if not np.all(np.isfinite(matrix)) or not np.allclose(matrix[3], [0.0, 0.0, 0.0, 1.0]):
        raise ParseError("Transform must be finite with last row [0, 0, 0, 1]", file=path, field_path="t_right_from_left")
    rotation = matrix[:3, :3]
    deviation = max(np.max(np.abs(rotation @ rotation.T - np.eye(3))), abs(np.linalg.det(rotation) - 1.0))
    if deviation > CALIBRATION_REPROJECTION_TOLERANCE:
        raise ParseError(f"Rotation is off SO(3) by {deviation:.3g}", file=path, field_path="t_right_from_left")
    if deviation > ORTHONORMALITY_TOLERANCE:
        logger.warning(f"Calibration rotation in [{path}] is off SO(3) by {deviation:.3g}, re-projecting it")
        rotation = project_to_so3(rotation).m
    try:
        return StereoRig(
            _decode_camera(document["left"]),
            _decode_camera(document["right"]),
            Pose(Rotation3(rotation), matrix[:3, 3])
        )
    except BoxcertValidationError as err:
        raise ParseError(err.msg, file=path) from err


def read_calibration(path: str) -> StereoRig:
    return decode_rig(read_json(path, CALIBRATION_SCHEMA), path)


def write_calibration(path: str, rig: StereoRig) -> None:
    write_json(path, encode_rig(rig))


def encode_keypoints(keypoints: Sequence[KeypointObservation]) -> List[dict]:
    return [
        {"corner_index": kp.corner_index, "x": float(kp.pixel[0]), "y": float(kp.pixel[1]), "confidence": kp.confidence}
        for kp in keypoints
    ]


def encode_observation(obs: FrameObservation) -> dict:
    return {view: encode_keypoints(obs.view(view)) for view in VIEWS}


def decode_observation(document: dict, frame_id: str, path: str = "") -> FrameObservation:
    try:
        views = {
            view: tuple(
                KeypointObservation(entry["corner_index"], (entry["x"], entry["y"]), entry["confidence"])
                for entry in document[view]
            )
            for view in VIEWS
        }
        return FrameObservation(left=views["left"], right=views["right"], frame_id=frame_id)
    except ParseError as err:
        err.file = path
        raise
    except BoxcertValidationError as err:
        raise ParseError(f"Frame '{frame_id}': {err.msg}", file=path) from err


def encode_state(state: BoxState) -> dict:
    return {
        "rotation": _floats(state.pose.rotation.m),
        "translation": _floats(state.pose.translation),
        "dims": _floats(state.shape.dims)
    }


def decode_state(document: dict, path: str = "", field_path: str = "") -> BoxState:
    try:
        return BoxState(
            Pose(Rotation3(document["rotation"]), document["translation"]),
            Shape(document["dims"])
        )
    except BoxcertValidationError as err:
        raise ParseError(err.msg, file=path, field_path=field_path) from err


def read_detection(path: str) -> DetectionRecord:
    """
    Reads one detection (or scene dump) file.

    :raises ParseError: if the file violates the detection schema; the message names the frame
    :raises DuplicateCorner: if a corner appears twice in one view
    """
    try:
        document = read_json(path, DETECTION_SCHEMA)
    except ParseError as err:
        frame_id = _peek_frame_id(path)
        if frame_id:
            err.msg = f"Frame '{frame_id}': {err.msg}"
            err.args = (err.msg,)
        raise
    frame_id = document["frame_id"]
    observation = decode_observation(document, frame_id, path)
    truth = decode_state(document["truth"], path, "truth") if "truth" in document else None
    clean = None
    if "clean" in document:
        clean = {view: np.array(document["clean"][view], dtype=float) for view in VIEWS}
    return DetectionRecord(frame_id, observation, truth, clean)


def _peek_frame_id(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as stream:
            document = json.load(stream)
        return str(document.get("frame_id", "")) if isinstance(document, dict) else ""
    except (OSError, ValueError):
        return ""


def write_detection(
        path: str,
        obs: FrameObservation,
        truth: Optional[BoxState] = None,
        clean: Optional[Dict[str, np.ndarray]] = None
) -> None:
    document = {"frame_id": obs.frame_id}
    document.update(encode_observation(obs))
    if truth is not None:
        document["truth"] = encode_state(truth)
    if clean is not None:
        document["clean"] = {view: _floats(clean[view]) for view in VIEWS}
    write_json(path, document)


def mask_path(directory: str, frame_id: str, view: str) -> str:
    return os.path.join(directory, f"{frame_id}_{view}.pgm")


def read_mask(path: str) -> BitMask:
    """
    Reads an 8-bit binary PGM; values >= 128 are foreground.

    :raises ParseError: if the file cannot be decoded as an 8-bit single-channel image
    """
    if not os.path.isfile(path):
        raise ParseError("Mask file does not exist", file=path)
    image = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if image is None or image.ndim != 2 or image.dtype != np.uint8:
        raise ParseError("Mask must be an 8-bit single-channel PGM", file=path)
    return BitMask(image.shape[1], image.shape[0], image >= MASK_FOREGROUND_LEVEL)


def write_mask(path: str, mask: BitMask) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    if not cv2.imwrite(path, mask.bits.astype(np.uint8) * 255):
        raise BoxcertError(f"OpenCV could not write mask [{path}]")


def read_view_masks(directory: str, frame_id: str, rig: StereoRig) -> ViewMasks:
    """
    :raises DimensionMismatch: if a mask does not match the resolution of its camera
    """
    masks = {}
    for view in VIEWS:
        mask = read_mask(mask_path(directory, frame_id, view))
        camera = rig.camera(view)
        if (mask.width, mask.height) != (camera.width, camera.height):
            raise DimensionMismatch(
                f"Mask of the {view} view of frame '{frame_id}' is {mask.width}x{mask.height}, "
                f"camera is {camera.width}x{camera.height}"
            )
        masks[view] = mask
    return ViewMasks(masks["left"], masks["right"])


def encode_solve_result(result: SolveResult) -> dict:
    return {
        "state": encode_state(result.state),
        "residuals": [
            {"view": entry.view, "corner_index": entry.corner_index, "delta": _floats(entry.delta)}
            for entry in result.residuals
        ],
        "objective": float(result.objective),
        "iterations": result.iterations,
        "converged": result.converged,
        "history_length": len(result.history)
    }


def decode_solve_result(document: dict, path: str = "") -> SolveResult:
    return SolveResult(
        state=decode_state(document["state"], path, "state"),
        residuals=tuple(
            ResidualEntry(entry["view"], entry["corner_index"], np.array(entry["delta"], dtype=float))
            for entry in document["residuals"]
        ),
        objective=document["objective"],
        iterations=document["iterations"],
        converged=document["converged"],
        history=(document["objective"],)
    )


def encode_thresholds(thresholds: CertificateThresholds) -> dict:
    return {"eps_2d": thresholds.eps_2d, "eps_res": thresholds.eps_res, "eps_epi": thresholds.eps_epi}


def encode_label(label: PseudoLabel) -> dict:
    return {
        "view": label.view,
        "corner_index": label.corner_index,
        "pixel": _floats(label.pixel),
        "source": label.source,
        "stereo_verified": label.stereo_verified
    }


def _decode_label(entry: dict) -> PseudoLabel:
    return PseudoLabel(
        entry["view"], entry["corner_index"], np.array(entry["pixel"], dtype=float), entry["source"],
        entry["stereo_verified"]
    )


def encode_report(report: CertificateReport) -> dict:
    return {
        "frame_id": report.frame_id,
        "accepted": report.accepted,
        "pass_2d": report.pass_2d,
        "iou_left": report.iou_left,
        "iou_right": report.iou_right,
        "failure_reasons": list(report.failure_reasons),
        "keypoints": [
            {
                "view": kp.view,
                "corner_index": kp.corner_index,
                "predicted": _floats(kp.predicted),
                "reprojected": _floats(kp.reprojected),
                "residual_norm": kp.residual_norm,
                "pass_res": kp.pass_res,
                "source": kp.source
            }
            for kp in report.keypoints
        ],
        "epipolar": [
            {"corner_index": check.corner_index, "ydiff": check.ydiff, "passed": check.passed}
            for check in report.epipolar
        ],
        "candidates": [encode_label(label) for label in report.candidates],
        "labels": [encode_label(label) for label in report.labels]
    }


def decode_report(document: dict) -> CertificateReport:
    return CertificateReport(
        frame_id=document["frame_id"],
        accepted=document["accepted"],
        iou_left=document.get("iou_left"),
        iou_right=document.get("iou_right"),
        pass_2d=document.get("pass_2d", False),
        keypoints=tuple(
            KeypointCertificate(
                view=entry["view"],
                corner_index=entry["corner_index"],
                predicted=np.array(entry["predicted"], dtype=float),
                reprojected=np.array(entry["reprojected"], dtype=float),
                residual_norm=entry["residual_norm"],
                pass_res=entry["pass_res"],
                source=entry["source"]
            )
            for entry in document.get("keypoints", [])
        ),
        epipolar=tuple(
            EpipolarCheck(entry["corner_index"], entry["ydiff"], entry["passed"])
            for entry in document.get("epipolar", [])
        ),
        labels=tuple(_decode_label(entry) for entry in document.get("labels", [])),
        candidates=tuple(_decode_label(entry) for entry in document.get("candidates", [])),
        failure_reasons=tuple(document.get("failure_reasons", []))
    )
