"""Version information for partequiv."""

__version__ = '0.3.0'

# Bumped whenever the checkpoint container layout changes.
CHECKPOINT_FORMAT_VERSION = 2


def get_version() -> str:
    """Return the package version string."""
    return __version__
