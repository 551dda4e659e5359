import copy
import json
import logging
import os

import yaml
from jsonschema import validate
from jsonschema.exceptions import ValidationError
from yaml.loader import SafeLoader

from .certificates import CertificateThresholds
from .estimator import RobustLossConfig, SolverConfig
from .geometry import PinholeCamera
from .pipeline import RunConfig
from .synthetic import SceneConfig
from .utilities import BoxcertValidationError

logger = logging.getLogger(__name__)


def _range_schema(minimum_exclusive: float = 0) -> dict:
    return {
        "type": "array",
        "items": {"type": "number", "exclusiveMinimum": minimum_exclusive},
        "minItems": 2,
        "maxItems": 2
    }


class ConfigParser(object):
    """
    Backend to handle JSON or YAML based boxcert configuration files.

    A configuration file has one of three kinds:
        * `run`: ingestion gate, solver settings, certificate thresholds, mask source and parallelism
        * `scene`: synthetic scene generator settings
        * `thresholds`: certificate thresholds alone, consumed by `boxcert certify`

    Files ending in `.json` are read and written as JSON, anything else as YAML.

    Example:

    .. code-block:: python

        run_config = ConfigParser(
            config_path=args.config,
            kind="run"
        )
        run_config.read_config()
        cfg = run_config.get_run_config()

    :cvar SUPPORTED_KINDS: Supported configuration kinds
    :cvar SUPPORTED_CONFIG_SCHEMAS: JSON schema of every configuration kind
    :cvar DEFAULT_CONFIGS: Default configuration of every kind; `run` has no default `eps_conf`
    """

    SUPPORTED_KINDS: list = [
        "run",
        "scene",
        "thresholds"
    ]

    THRESHOLDS_SCHEMA: dict = {
        "additionalProperties": False,
        "type": "object",
        "properties": {
            "eps_2d": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "eps_res": {"type": "number", "exclusiveMinimum": 0},
            "eps_epi": {"type": "number", "exclusiveMinimum": 0}
        }
    }

    SUPPORTED_CONFIG_SCHEMAS: dict = {
        "run": {
            "additionalProperties": False,
            "type": "object",
            "required": [
                "eps_conf"
            ],
            "properties": {
                "eps_conf": {"type": "number", "minimum": 0, "maximum": 1},
                "solver": {
                    "additionalProperties": False,
                    "type": "object",
                    "properties": {
                        "max_iters": {"type": "integer", "minimum": 1},
                        "step_size": {"type": "number", "exclusiveMinimum": 0},
                        "grad_tol": {"type": "number", "minimum": 0},
                        "shape_floor": {"type": "number", "exclusiveMinimum": 0},
                        "depth_min": {"type": "number", "minimum": 0},
                        "metric": {"type": "string", "enum": list(SolverConfig.SUPPORTED_METRICS)},
                        "min_step": {"type": "number", "exclusiveMinimum": 0},
                        "loss": {
                            "additionalProperties": False,
                            "type": "object",
                            "properties": {
                                "kind": {"type": "string", "enum": list(RobustLossConfig.SUPPORTED_KINDS)},
                                "scale_c": {"type": "number", "exclusiveMinimum": 0}
                            }
                        }
                    }
                },
                "thresholds": THRESHOLDS_SCHEMA,
                "mask_source": {"type": "string", "enum": list(RunConfig.SUPPORTED_MASK_SOURCES)},
                "parallelism": {"type": "integer", "minimum": 1}
            }
        },
        "scene": {
            "additionalProperties": False,
            "type": "object",
            "properties": {
                "dims_range": _range_schema(),
                "depth_range": _range_schema(),
                "rotation": {"type": "string", "enum": list(SceneConfig.SUPPORTED_ROTATIONS)},
                "rotation_axis": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                "max_angle_deg": {"type": "number", "minimum": 0},
                "baseline": {"type": "number", "exclusiveMinimum": 0},
                "camera": {
                    "additionalProperties": False,
                    "type": "object",
                    "required": ["fx", "fy", "cx", "cy", "width", "height"],
                    "properties": {
                        "fx": {"type": "number", "exclusiveMinimum": 0},
                        "fy": {"type": "number", "exclusiveMinimum": 0},
                        "cx": {"type": "number"},
                        "cy": {"type": "number"},
                        "width": {"type": "integer", "minimum": 1},
                        "height": {"type": "integer", "minimum": 1}
                    }
                },
                "noise_sigma": {"type": "number", "minimum": 0},
                "noise_model": {"type": "string", "enum": list(SceneConfig.SUPPORTED_NOISE_MODELS)},
                "outlier_rate": {"type": "number", "minimum": 0, "maximum": 1},
                "outlier_magnitude": {"type": "number", "minimum": 0},
                "dropout_rate": {"type": "number", "minimum": 0, "maximum": 1},
                "rig_toe_in_deg": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "max_attempts": {"type": "integer", "minimum": 1}
            }
        },
        "thresholds": THRESHOLDS_SCHEMA
    }

    DEFAULT_CONFIGS: dict = {
        "run": {
            "solver": {
                "max_iters": 2000,
                "step_size": 1e-2,
                "grad_tol": 1e-8,
                "shape_floor": 1e-3,
                "depth_min": 1e-6,
                "metric": "gauss_newton",
                "min_step": 1e-12,
                "loss": {
                    "kind": "squared",
                    "scale_c": 10.0
                }
            },
            "thresholds": {
                "eps_2d": 0.05,
                "eps_res": 42.0,
                "eps_epi": 20.0
            },
            "mask_source": "ground_truth",
            "parallelism": 1
        },
        "scene": {
            "dims_range": [0.1, 0.4],
            "depth_range": [1.5, 3.0],
            "rotation": "uniform",
            "rotation_axis": [0.0, 1.0, 0.0],
            "max_angle_deg": 180.0,
            "baseline": 0.12,
            "camera": {
                "fx": 1000.0,
                "fy": 1000.0,
                "cx": 819.5,
                "cy": 615.5,
                "width": 1640,
                "height": 1232
            },
            "noise_sigma": 0.0,
            "noise_model": "isotropic",
            "outlier_rate": 0.0,
            "outlier_magnitude": 50.0,
            "dropout_rate": 0.0,
            "rig_toe_in_deg": 0.0,
            "seed": 0,
            "max_attempts": 1000
        },
        "thresholds": {
            "eps_2d": 0.05,
            "eps_res": 42.0,
            "eps_epi": 20.0
        }
    }

    def __init__(
            self,
            config_path: str = "boxcert.yml",
            kind: str = "run"
    ) -> None:
        """
        Initialize a new ConfigParser class object.

        :param config_path: Configuration file path
        :param kind: Configuration kind, one of :attr:`SUPPORTED_KINDS`
        :return: None
        :raises BoxcertValidationError: if the kind is not supported
        """
        if kind not in self.SUPPORTED_KINDS:
            raise BoxcertValidationError(
                f"Unsupported configuration kind [{kind}]. Supported values are [{','.join(self.SUPPORTED_KINDS)}]"
            )
        self.config_path: str = config_path
        self.kind: str = kind
        self.config: dict = {}

    @property
    def is_json(self) -> bool:
        return os.path.splitext(self.config_path)[1].lower() == ".json"

    def _validate_config_schema(self) -> None:
        """
        Validates :attr:`config` against the schema of its kind.

        :return: None
        :raises BoxcertValidationError: if the configuration schema validation fails
        """
        try:
            validate(instance=self.config, schema=self.SUPPORTED_CONFIG_SCHEMAS[self.kind])
            logger.debug(f"Configuration schema of kind [{self.kind}] successfully validated")
        except ValidationError as err:
            logger.debug(err)
            field_path = "/".join(str(part) for part in err.absolute_path)
            raise BoxcertValidationError(
                f"Configuration [{self.config_path}] schema validation failed at [{field_path}]. {err.message}"
            )

    @staticmethod
    def _merge(defaults: dict, overrides: dict) -> dict:
        merged = copy.deepcopy(defaults)
        for key, value in overrides.items():
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                merged[key] = ConfigParser._merge(merged[key], value)
            else:
                merged[key] = copy.deepcopy(value)
        return merged

    def _resolved(self) -> dict:
        return self._merge(self.DEFAULT_CONFIGS[self.kind], self.config)

    def read_config(self, validate: bool = True) -> None:
        """
        Reads the configuration file and stores it as :attr:`config`.

        :param validate: Optionally executes schema validation. Default is set to `True`.
        :return: None
        :raises BoxcertValidationError: if the file is missing, unreadable or invalid
        """
        if not os.path.exists(self.config_path):
            raise BoxcertValidationError(f"Unable to find the configuration file [{self.config_path}]")
        try:
            with open(self.config_path) as f:
                if self.is_json:
                    self.config = json.load(f)
                else:
                    self.config = yaml.load(f, Loader=SafeLoader)
        except (ValueError, yaml.YAMLError) as err:
            logger.debug(err)
            raise BoxcertValidationError(f"Failed to parse the configuration file [{self.config_path}]")
        if self.config is None:
            self.config = {}
        if validate:
            self._validate_config_schema()

    def write_config(self) -> None:
        """
        Writes :attr:`config` to :attr:`config_path`, as JSON for `.json` paths and YAML otherwise.

        :return: None
        :raises BoxcertValidationError: if the file cannot be written
        """
        try:
            directory = os.path.dirname(self.config_path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(self.config_path, "w") as file:
                if self.is_json:
                    file.write(json.dumps(self.config, indent=2))
                    file.write("\n")
                else:
                    yaml.dump(self.config, file, sort_keys=False)
        except OSError as err:
            logger.debug(err)
            raise BoxcertValidationError(f"Failed to write the configuration file [{self.config_path}]")

    def initialize_config(self, **overrides) -> None:
        """
        Initializes :attr:`config` with the defaults of its kind updated with ``overrides``.

        A `run` configuration has no default keypoint confidence gate: when ``eps_conf`` is not
        given, it is requested interactively.

        :param overrides: Top-level keys to override; nested dictionaries are merged
        :return: None
        :raises BoxcertValidationError: if the initialized configuration is invalid
        """
        config = self._merge(self.DEFAULT_CONFIGS[self.kind], overrides)
        if self.kind == "run" and config.get("eps_conf") is None:
            answer = input("Enter the keypoint confidence threshold eps_conf in [0, 1]: ")
            try:
                config["eps_conf"] = float(answer)
            except ValueError:
                raise BoxcertValidationError(f"Invalid keypoint confidence threshold [{answer}]")
        self.config = config
        self._validate_config_schema()

    def get_thresholds(self) -> CertificateThresholds:
        config = self._resolved()
        if self.kind == "run":
            config = config["thresholds"]
        return CertificateThresholds(**config)

    def get_run_config(self) -> RunConfig:
        """
        :return: RunConfig built from :attr:`config` and the defaults
        :raises BoxcertValidationError: if this is not a `run` configuration or `eps_conf` is missing
        """
        if self.kind != "run":
            raise BoxcertValidationError(f"A [{self.kind}] configuration has no run settings")
        config = self._resolved()
        if "eps_conf" not in config:
            raise BoxcertValidationError(f"Configuration [{self.config_path}] does not set 'eps_conf'")
        solver = dict(config["solver"])
        solver["loss"] = RobustLossConfig(**solver["loss"])
        return RunConfig(
            eps_conf=config["eps_conf"],
            solver=SolverConfig(**solver),
            thresholds=CertificateThresholds(**config["thresholds"]),
            mask_source=config["mask_source"],
            parallelism=config["parallelism"]
        )

    def get_scene_config(self) -> SceneConfig:
        """
        :return: SceneConfig built from :attr:`config` and the defaults
        :raises BoxcertValidationError: if this is not a `scene` configuration
        """
        if self.kind != "scene":
            raise BoxcertValidationError(f"A [{self.kind}] configuration has no scene settings")
        config = self._resolved()
        config["camera"] = PinholeCamera(**config["camera"])
        for key in ("dims_range", "depth_range", "rotation_axis"):
            config[key] = tuple(config[key])
        return SceneConfig(**config)
