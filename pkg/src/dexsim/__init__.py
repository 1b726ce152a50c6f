"""Language-commanded tabletop manipulation engine with a deterministic simulated world."""

from .se3 import Rotation3, Transform

__all__ = ["Rotation3", "Transform"]

__version__ = "0.1.0"
