"""Learn Independent Cascade parameters with dynamic message passing."""
from .constants import __version__

__all__ = ["__version__"]
