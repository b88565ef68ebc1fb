"""Numerical checks of denoiser, score and consistency-function consistency
on Gaussian mixtures, backed by a C++ core."""

from ._core import *  # noqa: F401,F403
from ._core import __version__  # noqa: F401
