"""Sentence-level hierarchical encoder: training, evaluation and attention saliency."""

from ._core import *  # noqa: F401,F403
from ._core import __version__  # noqa: F401
