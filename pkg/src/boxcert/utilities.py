import functools
import logging
import time

import numpy as np

logger = logging.getLogger(__name__)


class BoxcertError(Exception):
    """Base class for every error raised by boxcert."""

    def __init__(self, msg: str = ""):
        super().__init__(msg)
        self.msg = msg


class BoxcertValidationError(BoxcertError):
    pass


class PointBehindCamera(BoxcertError):
    """
    Raised when a point projects with depth below the configured ``depth_min``.

    :ivar view: Camera view name (`left`, `right` or `camera` for single-camera calls)
    :ivar corner_index: Offending canonical corner index, if known
    """

    def __init__(self, msg: str = "", view: [str, None] = None, corner_index: [int, None] = None):
        super().__init__(msg)
        self.view = view
        self.corner_index = corner_index


class DegenerateMatrix(BoxcertError):
    pass


class DegenerateBaseline(BoxcertError):
    pass


class InsufficientObservations(BoxcertError):
    pass


class NonFiniteObjective(BoxcertError):
    pass


class DimensionMismatch(BoxcertError):
    pass


class DegeneratePolygon(BoxcertError):
    pass


class SamplingExhausted(BoxcertError):
    pass


class ParseError(BoxcertError):
    """
    Raised when an input file does not follow its schema.

    :ivar file: Path of the offending file
    :ivar field_path: Slash separated path of the offending field inside the document
    """

    def __init__(self, msg: str = "", file: str = "", field_path: str = ""):
        super().__init__(msg)
        self.file = file
        self.field_path = field_path

    def __str__(self):
        location = f"{self.file}:{self.field_path}" if self.field_path else self.file
        return f"[{location}] {self.msg}"


class DuplicateCorner(ParseError):
    pass


class MissingTruth(BoxcertError):
    pass


class BoxcertUtilities(object):

    @staticmethod
    def timed_operation(func):
        """ Decorator that logs the wall time of the decorated function at debug level """
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                logger.debug(f"'{func.__qualname__}' finished in {time.perf_counter() - start:.3f}s")
        return wrapper

    @staticmethod
    def seeded_generator(seed: int, *stream: int) -> np.random.Generator:
        """
        Creates a PCG64 generator for the stream ``(seed, *stream)``.

        Streams with distinct keys are statistically independent, so a generator can be derived for every scene,
        view or triangle without depending on the order in which they are processed.

        :param seed: Non-negative 64-bit root seed
        :param stream: Optional non-negative integers identifying the sub-stream
        :return: Seeded numpy generator
        """
        if seed < 0 or any(key < 0 for key in stream):
            raise BoxcertValidationError(f"Seeds and stream keys must be non-negative, got [{seed}, {stream}]")
        sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(key) for key in stream))
        return np.random.Generator(np.random.PCG64(sequence))

    @staticmethod
    def add_custom_logging_level(level_name: str, level_number: int, method_name: [str, None] = None):
        """
        Registers ``level_name`` at ``level_number`` and exposes a ``method_name`` shortcut (``level_name.lower()``
        by default) on the ``logging`` module and on the active logger class.

        :param level_name: Name shown in log records, e.g. ``VERBOSE``
        :param level_number: Numeric severity of the level
        :param method_name: Name of the logging shortcut
        :return: None
        :raises AttributeError: If the level or shortcut is already registered
        """
        method_name = method_name or level_name.lower()
        logger_class = logging.getLoggerClass()
        clashes = [
            name for name, owner in ((level_name, logging), (method_name, logging), (method_name, logger_class))
            if hasattr(owner, name)
        ]
        if clashes:
            raise AttributeError(f"Logging attributes [{', '.join(clashes)}] are already registered")

        def emit(self, message, *args, **kwargs):
            if self.isEnabledFor(level_number):
                self._log(level_number, message, args, **kwargs)

        logging.addLevelName(level_number, level_name)
        setattr(logging, level_name, level_number)
        setattr(logger_class, method_name, emit)
        setattr(logging, method_name, functools.partial(logging.log, level_number))


# Note: Per-frame progress level, registered once per interpreter
if not hasattr(logging, "VERBOSE"):
    BoxcertUtilities.add_custom_logging_level("VERBOSE", logging.DEBUG + 5)
