"""Group quantization and FFN invariance search (Python bindings)."""

from ._core import *  # noqa: F401,F403
from ._core import IvqError, __doc__  # noqa: F401
