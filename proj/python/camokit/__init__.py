"""Adversarial camouflage texture toolkit."""

from camokit._core import *  # noqa: F401,F403
from camokit._core import version

__version__ = version().split()[-1]
