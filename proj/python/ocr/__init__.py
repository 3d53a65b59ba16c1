"""Observation-conditioned reachability toolkit."""

from ._ocr import *  # noqa: F401,F403
from ._ocr import __version__  # noqa: F401
