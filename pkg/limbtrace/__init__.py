"""Branch centerline regression and curve-fitting baselines on synthetic 2D orchard scenes."""

from limbtrace.core.config import settings

__version__ = settings.VERSION
