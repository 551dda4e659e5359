import unittest
import logging

import numpy as np

from .common import TestBaseGeometry
from src.boxcert.certificates import (
    NO_LABEL_REASON,
    SOURCE_PREDICTED,
    SOURCE_REPROJECTED,
    BitMask,
    CertificateThresholds,
    ViewMasks,
    cert_2d,
    cert_epipolar,
    cert_residual,
    iou,
    render_view_masks,
    reproject_corners,
    select_pseudo_labels,
    silhouette_mask,
)
from src.boxcert.estimator import BoxState, FrameObservation, KeypointObservation, SolveResult, residuals
from src.boxcert.geometry import (
    RIGHT,
    PinholeCamera,
    Pose,
    Rotation3,
    Shape,
    box_corners,
    convex_hull,
    inside_convex,
    project_points,
)
from src.boxcert.utilities import BoxcertValidationError, DimensionMismatch

logging.basicConfig(format='%(levelname)s:%(message)s', level=logging.INFO)
logger = logging.getLogger()


class SilhouetteTest(unittest.TestCase, TestBaseGeometry):

    def brute_force_mask(self, camera, pose, shape) -> np.ndarray:
        hull = convex_hull(project_points(camera, box_corners(pose, shape)))
        columns, rows = np.meshgrid(np.arange(camera.width, dtype=float), np.arange(camera.height, dtype=float))
        return inside_convex(hull, columns, rows)

    def test_silhouette_mask(self):
        logger.info("Executing unit tests for 'silhouette_mask' method")

        rng = np.random.default_rng(3)
        camera = self.TEST_SMALL_CAMERA
        for index in range(50):
            state = BoxState(
                Pose(
                    Rotation3.about_axis(rng.normal(size=3), rng.uniform(0.0, np.pi)),
                    [rng.uniform(-1.0, 1.0), rng.uniform(-0.8, 0.8), rng.uniform(1.5, 3.0)]
                ),
                Shape(rng.uniform(0.1, 0.6, size=3))
            )
            logger.debug(f"Testing random state {index} against the brute-force rasterization")
            mask = silhouette_mask(camera, state.pose, state.shape)
            np.testing.assert_array_equal(mask.bits, self.brute_force_mask(camera, state.pose, state.shape))

    def test_silhouette_pixel_centers(self):
        logger.info("Executing unit tests for 'silhouette_mask' pixel center coverage")

        camera = PinholeCamera(fx=1000.0, fy=1000.0, cx=50.0, cy=50.0, width=100, height=100)
        thin = Shape([0.01, 0.01, 1e-6])
        mask = silhouette_mask(camera, Pose(Rotation3.identity(), [0.0, 0.0, 1.0]), thin)
        self.assertEqual(mask.count, 121)
        rows, columns = np.nonzero(mask.bits)
        self.assertEqual((rows.min(), rows.max(), columns.min(), columns.max()), (45, 55, 45, 55))

        logger.debug("Testing a box covering less than one pixel")
        tiny = silhouette_mask(camera, Pose(Rotation3.identity(), [0.0, 0.0, 10.0]), Shape([1e-4, 1e-4, 1e-4]))
        self.assertTrue(tiny.is_empty)

        logger.debug("Testing a box outside the image")
        outside = silhouette_mask(camera, Pose(Rotation3.identity(), [5.0, 0.0, 1.0]), Shape([0.1, 0.1, 0.1]))
        self.assertTrue(outside.is_empty)

    def test_iou(self):
        logger.info("Executing unit tests for 'iou' method")

        mask = silhouette_mask(self.TEST_CAMERA, self.TEST_STATE.pose, self.TEST_STATE.shape)
        self.assertEqual(iou(mask, mask), 1.0)

        half = np.zeros((4, 4), dtype=bool)
        half[:, :2] = True
        quarter = np.zeros((4, 4), dtype=bool)
        quarter[:, :1] = True
        self.assertEqual(iou(BitMask(4, 4, half), BitMask(4, 4, quarter)), 0.5)
        self.assertEqual(iou(BitMask(4, 4, half), BitMask(4, 4, ~half)), 0.0)

        logger.debug("Testing empty masks")
        with self.assertLogs(level=logging.WARNING):
            self.assertEqual(iou(BitMask.empty(4, 4), BitMask.empty(4, 4)), 1.0)

        logger.debug("Testing mismatched sizes")
        with self.assertRaises(DimensionMismatch):
            iou(BitMask.empty(4, 4), BitMask.empty(4, 5))
        with self.assertRaises(DimensionMismatch):
            BitMask(4, 4, np.zeros((5, 4)))


class CertificateTest(unittest.TestCase, TestBaseGeometry):

    def solved(self, obs: FrameObservation, state: BoxState = None) -> SolveResult:
        state = state or self.TEST_STATE
        return SolveResult(state, residuals(state, obs, self.TEST_RIG), 0.0, 0, True)

    def shifted(self, obs: FrameObservation, corner: int, offset) -> FrameObservation:
        return FrameObservation(
            left=obs.left,
            right=tuple(
                KeypointObservation(kp.corner_index, kp.pixel + (np.asarray(offset) if kp.corner_index == corner else 0.0))
                for kp in obs.right
            ),
            frame_id=obs.frame_id
        )

    def test_cert_2d(self):
        logger.info("Executing unit tests for 'cert_2d' method")

        masks = render_view_masks(self.TEST_STATE, self.TEST_RIG)
        self.assertEqual(cert_2d(self.TEST_STATE, self.TEST_RIG, masks, 0.05), (True, 1.0, 1.0))

        logger.debug("Testing a shifted estimate")
        moved = BoxState(Pose(self.TEST_STATE.pose.rotation, self.TEST_STATE.pose.translation + [0.05, 0.0, 0.0]),
                         self.TEST_STATE.shape)
        passed, iou_left, iou_right = cert_2d(moved, self.TEST_RIG, masks, 0.05)
        self.assertFalse(passed)
        self.assertLess(min(iou_left, iou_right), 0.95)

        logger.debug("Testing mismatched reference masks")
        with self.assertRaises(DimensionMismatch):
            cert_2d(self.TEST_STATE, self.TEST_RIG, ViewMasks(BitMask.empty(8, 8), BitMask.empty(8, 8)), 0.05)

    def test_cert_residual(self):
        logger.info("Executing unit tests for 'cert_residual' method")

        self.assertEqual(cert_residual([3.0, 4.0], 5.0), (True, SOURCE_PREDICTED))
        self.assertEqual(cert_residual([3.0, 4.0], 4.9), (False, SOURCE_REPROJECTED))

        logger.debug("Testing the residual threshold boundary")
        self.assertEqual(cert_residual([10.0, 0.0], 42.0), (True, SOURCE_PREDICTED))
        self.assertEqual(cert_residual([42.0, 0.0], 42.0), (False, SOURCE_REPROJECTED))
        self.assertEqual(cert_residual([0.0, 50.0], 42.0), (False, SOURCE_REPROJECTED))

    def test_cert_epipolar(self):
        logger.info("Executing unit tests for 'cert_epipolar' method")

        passed, ydiff = cert_epipolar([100.0, 200.0], [80.0, 230.0], self.TEST_RIG, 20.0)
        self.assertFalse(passed)
        self.assertAlmostEqual(ydiff, 30.0, places=9)
        passed, ydiff = cert_epipolar([100.0, 200.0], [80.0, 190.0], self.TEST_RIG, 20.0)
        self.assertTrue(passed)
        self.assertAlmostEqual(ydiff, 10.0, places=9)

        logger.debug("Testing a y-difference equal to the threshold")
        _, ydiff = cert_epipolar([100.0, 200.0], [80.0, 220.0], self.TEST_RIG, 20.0)
        self.assertAlmostEqual(ydiff, 20.0, places=9)
        self.assertEqual(cert_epipolar([100.0, 200.0], [80.0, 220.0], self.TEST_RIG, ydiff), (False, ydiff))
        passed, _ = cert_epipolar([100.0, 200.0], [80.0, 220.0], self.TEST_RIG, float(np.nextafter(ydiff, np.inf)))
        self.assertTrue(passed)

    def test_select_pseudo_labels(self):
        logger.info("Executing unit tests for 'select_pseudo_labels' method")

        obs = self.observe(self.TEST_STATE, self.TEST_RIG)
        masks = render_view_masks(self.TEST_STATE, self.TEST_RIG)
        thresholds = CertificateThresholds()

        logger.debug("Testing a clean frame")
        report = select_pseudo_labels(self.solved(obs), obs, self.TEST_RIG, masks, thresholds)
        self.assertTrue(report.accepted)
        self.assertEqual(len(report.labels), 16)
        self.assertTrue(all(label.source == SOURCE_PREDICTED and label.stereo_verified for label in report.labels))
        self.assertEqual(report.failure_reasons, ())

        logger.debug("Testing a keypoint replaced by its reprojection")
        far = self.shifted(obs, 2, [0.0, 60.0])
        report = select_pseudo_labels(self.solved(far), far, self.TEST_RIG, masks, thresholds)
        self.assertTrue(report.accepted)
        self.assertEqual(len(report.labels), 16)
        replaced = [label for label in report.labels if label.source == SOURCE_REPROJECTED]
        self.assertEqual([(label.view, label.corner_index) for label in replaced], [(RIGHT, 2)])
        np.testing.assert_allclose(replaced[0].pixel, reproject_corners(self.TEST_STATE, self.TEST_RIG)[RIGHT][2])

        logger.debug("Testing a corner failing the epipolar certificate")
        near = self.shifted(obs, 5, [0.0, 30.0])
        report = select_pseudo_labels(self.solved(near), near, self.TEST_RIG, masks, thresholds)
        self.assertTrue(report.accepted)
        self.assertEqual(len(report.labels), 14)
        self.assertNotIn(5, {label.corner_index for label in report.labels})
        self.assertEqual([check.corner_index for check in report.epipolar if not check.passed], [5])

        logger.debug("Testing a frame failing the 2D certificate")
        empty = ViewMasks(BitMask.empty(1640, 1232), BitMask.empty(1640, 1232))
        report = select_pseudo_labels(self.solved(obs), obs, self.TEST_RIG, empty, thresholds)
        self.assertFalse(report.accepted)
        self.assertEqual(report.labels, ())
        self.assertEqual(len(report.candidates), 16)
        self.assertTrue(report.failure_reasons[0].startswith("2D certificate failed"))

        logger.debug("Testing labels of mono corners")
        mono = FrameObservation(left=obs.left, right=obs.right[:1], frame_id=obs.frame_id)
        report = select_pseudo_labels(self.solved(mono), mono, self.TEST_RIG, masks, thresholds)
        self.assertTrue(report.accepted)
        self.assertEqual(len(report.labels), 9)
        self.assertEqual(sum(label.stereo_verified for label in report.labels), 2)

        logger.debug("Testing a frame without any passing stereo corner")
        strict = CertificateThresholds(eps_res=1e3, eps_epi=1.0)
        skewed = FrameObservation(
            left=obs.left[:1],
            right=tuple(KeypointObservation(kp.corner_index, kp.pixel + [0.0, 5.0]) for kp in obs.right[:1]),
            frame_id=obs.frame_id
        )
        report = select_pseudo_labels(self.solved(skewed), skewed, self.TEST_RIG, masks, strict)
        self.assertFalse(report.accepted)
        self.assertEqual(report.failure_reasons, (NO_LABEL_REASON,))

    def test_thresholds(self):
        logger.info("Executing unit tests for 'CertificateThresholds' validation")

        self.assertEqual((CertificateThresholds().eps_2d, CertificateThresholds().eps_res,
                          CertificateThresholds().eps_epi), (0.05, 42.0, 20.0))
        with self.assertRaises(BoxcertValidationError):
            CertificateThresholds(eps_2d=1.5)
        with self.assertRaises(BoxcertValidationError):
            CertificateThresholds(eps_epi=-1.0)
        for bounds in ({"eps_2d": 0.0}, {"eps_2d": 1.0}, {"eps_res": 0.0}, {"eps_epi": 0.0}):
            logger.debug(f"Testing rejection of the thresholds {bounds}")
            with self.assertRaises(BoxcertValidationError):
                CertificateThresholds(**bounds)


if __name__ == '__main__':
    unittest.main()
