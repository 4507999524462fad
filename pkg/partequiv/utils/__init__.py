"""Utility modules for partequiv."""
