import unittest
import logging

import numpy as np

from .common import TestBaseGeometry
from src.boxcert.estimator import (
    PARAMETER_COUNT,
    FrameObservation,
    KeypointObservation,
    RobustLossConfig,
    SolverConfig,
    _pack,
    geman_mcclure,
    initialize,
    objective,
    objective_and_gradient,
    pseudo_ground_truth,
    residuals,
    solve,
)
from src.boxcert.geometry import LEFT, RIGHT, Pose, Shape, cube_rotation_group
from src.boxcert.pipeline import align_to_truth
from src.boxcert.utilities import BoxcertValidationError, DuplicateCorner, InsufficientObservations

logging.basicConfig(format='%(levelname)s:%(message)s', level=logging.INFO)
logger = logging.getLogger()


class ObservationTest(unittest.TestCase, TestBaseGeometry):

    def test_keypoint_observation(self):
        logger.info("Executing unit tests for 'KeypointObservation' class")

        with self.assertRaises(BoxcertValidationError):
            KeypointObservation(8, [1.0, 2.0])
        with self.assertRaises(BoxcertValidationError):
            KeypointObservation(0, [1.0, 2.0], confidence=1.5)
        with self.assertRaises(BoxcertValidationError):
            KeypointObservation(0, [np.nan, 2.0])

    def test_frame_observation(self):
        logger.info("Executing unit tests for 'FrameObservation' class")

        logger.debug("Testing duplicate corners")
        with self.assertRaises(DuplicateCorner) as err:
            FrameObservation(right=(KeypointObservation(3, [1.0, 1.0]), KeypointObservation(3, [2.0, 2.0])))
        self.assertEqual(err.exception.field_path, RIGHT)

        logger.debug("Testing confidence filtering")
        frame = FrameObservation(left=(KeypointObservation(0, [1.0, 1.0], 0.9), KeypointObservation(1, [2.0, 1.0], 0.4)))
        self.assertEqual(frame.filter_confidence(0.5).count, 1)
        self.assertEqual(frame.filter_confidence(0.0).count, 2)
        self.assertEqual(frame.filter_confidence(0.9).count, 0)

        logger.debug("Testing solvability")
        full = self.observe(self.TEST_STATE, self.TEST_RIG)
        self.assertTrue(full.is_solvable)
        self.assertEqual(full.stereo_corners(), list(range(8)))
        mono = FrameObservation(left=full.left, frame_id="mono")
        self.assertFalse(mono.is_solvable)
        with self.assertRaises(InsufficientObservations):
            solve(mono, self.TEST_RIG)
        few = FrameObservation(left=full.left[:3], right=full.right[:2])
        self.assertFalse(few.is_solvable)


class ObjectiveTest(unittest.TestCase, TestBaseGeometry):

    def test_residuals(self):
        logger.info("Executing unit tests for 'residuals' method")

        obs = self.observe(self.TEST_STATE, self.TEST_RIG)
        entries = residuals(self.TEST_STATE, obs, self.TEST_RIG)
        self.assertEqual(len(entries), 16)
        self.assertEqual([entry.view for entry in entries], [LEFT] * 8 + [RIGHT] * 8)
        self.assertLess(max(entry.norm for entry in entries), 1e-9)
        self.assertLess(objective(self.TEST_STATE, obs, self.TEST_RIG), 1e-15)

    def test_geman_mcclure(self):
        logger.info("Executing unit tests for 'geman_mcclure' method")

        self.assertAlmostEqual(geman_mcclure([3.0, 4.0], 10.0), 20.0)
        self.assertEqual(geman_mcclure([0.0, 0.0], 10.0), 0.0)
        self.assertLess(geman_mcclure([1e6, 0.0], 10.0), 100.0)

        logger.debug("Testing the loss configuration")
        with self.assertRaises(BoxcertValidationError):
            RobustLossConfig("huber")
        with self.assertRaises(BoxcertValidationError):
            RobustLossConfig("geman_mcclure", 0.0)

    def test_objective_and_gradient(self):
        logger.info("Executing unit tests for 'objective_and_gradient' method")

        rng = np.random.default_rng(5)
        step = 1e-6
        for loss in (RobustLossConfig("squared"), RobustLossConfig("geman_mcclure", 10.0)):
            logger.debug(f"Testing analytic gradients of the {loss.kind} loss against central differences")
            for _ in range(20):
                state = self.random_state(rng)
                obs = self.observe(state, self.TEST_RIG)
                noisy = FrameObservation(
                    left=tuple(KeypointObservation(kp.corner_index, kp.pixel + rng.normal(0.0, 3.0, 2)) for kp in obs.left),
                    right=tuple(KeypointObservation(kp.corner_index, kp.pixel + rng.normal(0.0, 3.0, 2)) for kp in obs.right)
                )
                params = _pack(state) + rng.normal(0.0, 1e-3, PARAMETER_COUNT)
                _, gradient = objective_and_gradient(params, noisy, self.TEST_RIG, loss)
                numeric = np.zeros(PARAMETER_COUNT)
                for k in range(PARAMETER_COUNT):
                    offset = np.zeros(PARAMETER_COUNT)
                    offset[k] = step
                    upper, _ = objective_and_gradient(params + offset, noisy, self.TEST_RIG, loss)
                    lower, _ = objective_and_gradient(params - offset, noisy, self.TEST_RIG, loss)
                    numeric[k] = (upper - lower) / (2.0 * step)
                self.assertLess(np.linalg.norm(numeric - gradient) / np.linalg.norm(gradient), 1e-5)

        logger.debug("Testing parameter validation")
        with self.assertRaises(BoxcertValidationError):
            objective_and_gradient(np.zeros(12), obs, self.TEST_RIG)

    def test_objective_symmetry(self):
        logger.info("Executing unit tests for the cube symmetry invariance of 'objective'")

        rng = np.random.default_rng(2)
        state = self.TEST_STATE
        obs = self.observe(state, self.TEST_RIG)
        noisy = FrameObservation(
            left=tuple(KeypointObservation(kp.corner_index, kp.pixel + rng.normal(0.0, 2.0, 2)) for kp in obs.left),
            right=tuple(KeypointObservation(kp.corner_index, kp.pixel + rng.normal(0.0, 2.0, 2)) for kp in obs.right)
        )
        reference = objective(state, noisy, self.TEST_RIG)
        for symmetry in cube_rotation_group():
            relabel = {corner: position for position, corner in enumerate(symmetry.corner_permutation)}
            relabelled = FrameObservation(
                left=tuple(KeypointObservation(relabel[kp.corner_index], kp.pixel) for kp in noisy.left),
                right=tuple(KeypointObservation(relabel[kp.corner_index], kp.pixel) for kp in noisy.right)
            )
            equivalent = type(state)(
                Pose(state.pose.rotation.compose(symmetry.rotation), state.pose.translation),
                Shape(symmetry.permute_dims(state.shape.dims))
            )
            self.assertAlmostEqual(objective(equivalent, relabelled, self.TEST_RIG), reference, delta=1e-9 * reference)


class SolverTest(unittest.TestCase, TestBaseGeometry):

    def assert_recovered(self, estimate, truth, tolerance):
        aligned, _ = align_to_truth(estimate, truth)
        self.assertLess(np.linalg.norm(aligned.pose.translation - truth.pose.translation), tolerance)
        self.assertLess(np.max(np.abs(aligned.pose.rotation.m - truth.pose.rotation.m)), tolerance)
        self.assertLess(np.linalg.norm(aligned.shape.dims - truth.shape.dims), tolerance)

    def test_solve_noiseless(self):
        logger.info("Executing unit tests for 'solve' method on noiseless observations")

        for rig in (self.TEST_RIG, self.TEST_TOED_IN_RIG):
            logger.debug("Testing recovery from every corner")
            result = solve(self.observe(self.TEST_STATE, rig), rig)
            self.assertTrue(result.converged)
            self.assert_recovered(result.state, self.TEST_STATE, 1e-6)
            self.assertLess(max(entry.norm for entry in result.residuals), 1e-6)

            logger.debug("Testing recovery from four stereo corners and two mono corners")
            partial = self.observe(self.TEST_STATE, rig, corners=(0, 1, 2, 4))
            partial = FrameObservation(
                left=partial.left + self.observe(self.TEST_STATE, rig, corners=(7,)).left,
                right=partial.right + self.observe(self.TEST_STATE, rig, corners=(3,)).right
            )
            result = solve(partial, rig)
            self.assert_recovered(result.state, self.TEST_STATE, 1e-6)

    def noisy(self, obs: FrameObservation, rng: np.random.Generator, sigma: float) -> FrameObservation:
        return FrameObservation(
            left=tuple(KeypointObservation(kp.corner_index, kp.pixel + rng.normal(0.0, sigma, 2)) for kp in obs.left),
            right=tuple(KeypointObservation(kp.corner_index, kp.pixel + rng.normal(0.0, sigma, 2)) for kp in obs.right),
            frame_id=obs.frame_id
        )

    def test_solve_noisy(self):
        logger.info("Executing unit tests for 'solve' method on noisy observations")

        rng = np.random.default_rng(0)
        for loss in (RobustLossConfig(), RobustLossConfig("geman_mcclure", 10.0)):
            cfg = SolverConfig(loss=loss)
            for trial in range(10):
                state = self.random_state(rng)
                obs = self.noisy(self.observe(state, self.TEST_RIG, frame_id=f"noisy_{trial}"), rng, 2.0)
                reference = objective(state, obs, self.TEST_RIG, loss)

                logger.debug(f"Testing trial {trial} with the {loss.kind} loss")
                result = solve(obs, self.TEST_RIG, cfg)
                self.assertTrue(result.converged)
                self.assertLessEqual(result.objective, reference + 1e-6)

                logger.debug(f"Testing trial {trial} started at the ground truth")
                result = solve(obs, self.TEST_RIG, cfg, init=state)
                self.assertTrue(result.converged)
                self.assertLessEqual(result.objective, reference + 1e-6)

        logger.debug("Testing a noiseless frame started at the ground truth")
        result = solve(self.observe(self.TEST_STATE, self.TEST_RIG), self.TEST_RIG, init=self.TEST_STATE)
        self.assertTrue(result.converged)
        self.assertLessEqual(result.objective, 1e-10)

    def test_solve_reprojection_accuracy(self):
        logger.info("Executing unit tests for the reprojection accuracy of 'solve'")

        rng = np.random.default_rng(4)
        detected, reprojected = [], []
        for _ in range(10):
            clean = self.observe(self.random_state(rng), self.TEST_RIG)
            obs = self.noisy(clean, rng, 2.0)
            result = solve(obs, self.TEST_RIG)
            detected.extend(
                np.linalg.norm(noisy.pixel - exact.pixel)
                for noisy, exact in zip(obs.left + obs.right, clean.left + clean.right)
            )
            reprojected.extend(entry.norm for entry in residuals(result.state, clean, self.TEST_RIG))
        self.assertLess(np.mean(reprojected), np.mean(detected))

    def test_solve_history(self):
        logger.info("Executing unit tests for the objective history of 'solve'")

        rng = np.random.default_rng(9)
        noisy = self.noisy(self.observe(self.TEST_STATE, self.TEST_RIG), rng, 2.0)
        for metric in SolverConfig.SUPPORTED_METRICS:
            logger.debug(f"Testing a non-increasing objective with the {metric} metric")
            result = solve(noisy, self.TEST_RIG, SolverConfig(metric=metric, max_iters=200))
            self.assertLessEqual(len(result.history), result.iterations + 1)
            self.assertTrue(all(b <= a for a, b in zip(result.history, result.history[1:])))
            self.assertEqual(result.objective, result.history[-1])
            self.assertTrue(np.all(result.state.shape.dims >= SolverConfig().shape_floor))

        logger.debug("Testing that a single iteration starts from the initial state")
        start = initialize(noisy, self.TEST_RIG)
        result = solve(noisy, self.TEST_RIG, SolverConfig(max_iters=1), init=start)
        self.assertLessEqual(result.iterations, 1)
        self.assertAlmostEqual(result.history[0], objective(start, noisy, self.TEST_RIG), delta=1e-9 * result.history[0])
        self.assertLessEqual(result.objective, result.history[0])

    def test_robust_loss(self):
        logger.info("Executing unit tests for 'solve' with a single outlier corner")

        rng = np.random.default_rng(21)
        robust_cfg = SolverConfig(loss=RobustLossConfig("geman_mcclure", 10.0))
        wins = 0
        trials = 100
        for trial in range(trials):
            state = self.random_state(rng)
            obs = self.observe(state, self.TEST_RIG)
            corner = int(rng.integers(8))
            angle = rng.uniform(0.0, 2.0 * np.pi)
            left = tuple(
                KeypointObservation(kp.corner_index, kp.pixel + (50.0 * np.array([np.cos(angle), np.sin(angle)])
                                                                 if kp.corner_index == corner else 0.0))
                for kp in obs.left
            )
            corrupted = FrameObservation(left=left, right=obs.right, frame_id=f"outlier_{trial}")
            squared_error = np.linalg.norm(
                solve(corrupted, self.TEST_RIG).state.pose.translation - state.pose.translation
            )
            robust_error = np.linalg.norm(
                solve(corrupted, self.TEST_RIG, robust_cfg).state.pose.translation - state.pose.translation
            )
            logger.debug(f"Trial {trial}: squared {squared_error:.3g} m, Geman-McClure {robust_error:.3g} m")
            wins += robust_error < squared_error
        self.assertGreaterEqual(wins, 90)

    def test_pseudo_ground_truth(self):
        logger.info("Executing unit tests for 'pseudo_ground_truth' method")

        robust = SolverConfig(loss=RobustLossConfig("geman_mcclure", 5.0))
        state = pseudo_ground_truth(self.observe(self.TEST_STATE, self.TEST_RIG), self.TEST_RIG, robust)
        self.assert_recovered(state, self.TEST_STATE, 1e-6)

    def test_solver_config(self):
        logger.info("Executing unit tests for 'SolverConfig' validation")

        with self.assertRaises(BoxcertValidationError):
            SolverConfig(metric="newton")
        with self.assertRaises(BoxcertValidationError):
            SolverConfig(step_size=0.0)
        with self.assertRaises(BoxcertValidationError):
            SolverConfig(max_iters=-1)
        with self.assertRaises(BoxcertValidationError):
            SolverConfig(max_iters=0)


if __name__ == '__main__':
    unittest.main()
