"""Exceptions for pyslicer."""


class BaseSlicerError(Exception):
    """Base exception for pyslicer."""


class GraphError(BaseSlicerError):
    """Exception for invalid graphs and generator preconditions."""


class BudgetExceededError(GraphError):
    """Exception for exhaustive enumeration beyond its budget."""


class SimulationError(BaseSlicerError):
    """Exception for invalid simulation requests or inconsistent cascades."""


class ObservationError(BaseSlicerError):
    """Exception for invalid observation models or unidentifiable cascades."""


class IncompatibleModeError(BaseSlicerError):
    """Exception for observations the selected learner mode cannot use."""


class LearningError(BaseSlicerError):
    """Exception for failures during parameter learning."""


class DataFormatError(BaseSlicerError):
    """Exception for malformed input files."""


class ConfigError(BaseSlicerError):
    """Exception for invalid experiment configuration."""
