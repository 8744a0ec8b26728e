"""Gaussian process emulators for chained simulators, linked by moment propagation."""

__version__ = "0.1.0"

from .basis import *  # noqa: F401,F403
from .design import *  # noqa: F401,F403
from .gp import *  # noqa: F401,F403
from .linked import *  # noqa: F401,F403
from .mvem import *  # noqa: F401,F403
from .sim import *  # noqa: F401,F403
