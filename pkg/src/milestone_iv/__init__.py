"""Dose-outcome slope estimation with error-free milestones: optimal
matching plus exact rank-based instrumental-variable inference."""

__all__ = ["__version__"]

try:
    from importlib.metadata import version as _version

    __version__ = _version("milestone-iv")
except Exception:  # pragma: no cover - not installed
    __version__ = "unknown"
