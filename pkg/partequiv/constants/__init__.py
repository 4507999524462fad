"""Constants package for partequiv."""
from .choices import GroupKind, KernelVariant, TaskName, AnalysisName, PoolingPlacement

__all__ = ['GroupKind', 'KernelVariant', 'TaskName', 'AnalysisName', 'PoolingPlacement']
