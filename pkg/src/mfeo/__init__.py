"""Micro-facial expression recognition pipeline.

Adaptive median denoising, geometric/LBP/HOG descriptors, a lion
optimizer hybridised with a PSO velocity update for wrapper feature
selection, and a small convolutional classifier.
"""

__version__ = "0.1.0"


class MfeoError(Exception):
    """Base class for package errors."""


class ConfigError(MfeoError):
    pass


class DataError(MfeoError):
    pass


class StageError(MfeoError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
