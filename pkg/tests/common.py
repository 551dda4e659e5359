import numpy as np

from src.boxcert.certificates import reproject_corners
from src.boxcert.estimator import BoxState, FrameObservation, KeypointObservation
from src.boxcert.geometry import LEFT, RIGHT, PinholeCamera, Pose, Rotation3, Shape, StereoRig
from src.boxcert.pipeline import FrameTruth
from src.boxcert.synthetic import SceneConfig, clean_observation, generate_scene


class TestBaseGeometry(object):
    TEST_CAMERA = PinholeCamera(fx=1000.0, fy=1000.0, cx=819.5, cy=615.5, width=1640, height=1232)

    TEST_SMALL_CAMERA = PinholeCamera(fx=100.0, fy=100.0, cx=79.5, cy=59.5, width=160, height=120)

    TEST_RIG = StereoRig(TEST_CAMERA, TEST_CAMERA, Pose(Rotation3.identity(), [-0.12, 0.0, 0.0]))

    TEST_TOED_IN_ROTATION = Rotation3.about_axis([0.1, 1.0, 0.05], 0.05)

    TEST_TOED_IN_RIG = StereoRig(
        TEST_CAMERA,
        PinholeCamera(fx=990.0, fy=1010.0, cx=810.0, cy=620.0, width=1640, height=1232),
        Pose(TEST_TOED_IN_ROTATION, -TEST_TOED_IN_ROTATION.m @ np.array([0.12, 0.0, 0.0]))
    )

    TEST_STATE = BoxState(
        Pose(Rotation3.about_axis([0.3, 1.0, 0.2], 0.7), [0.1, -0.05, 2.0]),
        Shape([0.3, 0.2, 0.25])
    )

    @staticmethod
    def observe(state: BoxState, rig: StereoRig, frame_id: str = "test_frame", corners=range(8)) -> FrameObservation:
        """ Noise-free observation of the given corners in both views """
        pixels = reproject_corners(state, rig)
        return FrameObservation(
            left=tuple(KeypointObservation(i, pixels[LEFT][i]) for i in corners),
            right=tuple(KeypointObservation(i, pixels[RIGHT][i]) for i in corners),
            frame_id=frame_id
        )

    @staticmethod
    def random_state(rng: np.random.Generator) -> BoxState:
        axis = rng.normal(size=3)
        return BoxState(
            Pose(
                Rotation3.about_axis(axis, rng.uniform(0.0, np.pi)),
                [rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.2), rng.uniform(1.5, 3.0)]
            ),
            Shape(rng.uniform(0.1, 0.4, size=3))
        )


class TestBaseScenes(object):
    TEST_SCENE_CONFIG = SceneConfig(seed=7)

    TEST_NOISY_SCENE_CONFIG = SceneConfig(seed=7, noise_sigma=2.0, dropout_rate=0.2)

    TEST_SWEEP_SIGMAS = (0.0, 1.0, 2.0, 4.0, 8.0, 16.0)

    @staticmethod
    def scenes(cfg: SceneConfig, count: int, start: int = 0) -> list:
        return [generate_scene(cfg, index) for index in range(start, start + count)]

    @staticmethod
    def truths(scenes) -> dict:
        return {
            scene.frame_id: FrameTruth(scene.frame_id, scene.truth, scene.clean_keypoints)
            for scene in scenes
        }

    @staticmethod
    def clean_frames(scenes) -> list:
        return [clean_observation(scene) for scene in scenes]


class TestBaseConfig(object):
    TEST_RUN_CONFIG = {
        "eps_conf": 0.3,
        "solver": {
            "max_iters": 500,
            "loss": {
                "kind": "geman_mcclure",
                "scale_c": 8.0
            }
        },
        "thresholds": {
            "eps_epi": 15.0
        },
        "parallelism": 2
    }

    TEST_SCENE_CONFIG = {
        "dims_range": [0.2, 0.3],
        "noise_sigma": 1.5,
        "camera": {
            "fx": 500.0,
            "fy": 500.0,
            "cx": 319.5,
            "cy": 239.5,
            "width": 640,
            "height": 480
        },
        "seed": 3
    }

    TEST_THRESHOLDS_CONFIG = {
        "eps_2d": 0.1,
        "eps_res": 30.0,
        "eps_epi": 10.0
    }
