"""Deterministic augmentation and evaluation toolkit for paired speech and transcript corpora."""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("augkit")
except PackageNotFoundError:  # running from a source checkout
    __version__ = "0.1.0"

from .errors import AugkitError  # noqa: E402
from .seeding import derive_seed  # noqa: E402

__all__ = ["AugkitError", "derive_seed", "__version__"]
