"""Enumerated choices accepted by configuration and the command line."""


class GroupKind:
    """Point groups acting on the fiber axis."""

    SO2 = 'so2'
    MIRROR = 'mirror'
    O2 = 'o2'
    TRIVIAL = 'trivial'

    LABELS = {
        'so2': 'SE(2) base (rotations)',
        'mirror': 'translations x mirror',
        'o2': 'E(2) base (rotations and mirrors)',
        'trivial': 'T(2) base (plain CNN)',
    }

    @classmethod
    def all_kinds(cls):
        """Return list of all valid group kinds."""
        return [cls.SO2, cls.MIRROR, cls.O2, cls.TRIVIAL]

    @classmethod
    def is_valid(cls, kind):
        """Check if a group kind is valid."""
        return kind in cls.all_kinds()

    @classmethod
    def get_label(cls, kind):
        """Get a readable label for a group kind."""
        return cls.LABELS.get(kind, kind)


class KernelVariant:
    """Kernel network parameterizations."""

    SIREN = 'siren'
    RELU = 'relu'
    LEAKY_RELU = 'leakyrelu'
    SWISH = 'swish'

    @classmethod
    def all_variants(cls):
        """Return list of all kernel variants."""
        return [cls.SIREN, cls.RELU, cls.LEAKY_RELU, cls.SWISH]

    @classmethod
    def is_valid(cls, variant):
        """Check if a kernel variant is valid."""
        return variant in cls.all_variants()


class TaskName:
    """Training tasks."""

    MNIST6_180 = 'mnist6-180'
    MNIST6_M = 'mnist6-m'
    ROTMNIST = 'rotmnist'
    PROCEDURAL = 'procedural'

    @classmethod
    def all_tasks(cls):
        """Return list of all tasks."""
        return [cls.MNIST6_180, cls.MNIST6_M, cls.ROTMNIST, cls.PROCEDURAL]

    @classmethod
    def is_valid(cls, task):
        """Check if a task name is valid."""
        return task in cls.all_tasks()

    @classmethod
    def is_toy_task(cls, task):
        """Check if a task is one of the two-class MNIST6 tasks."""
        return task in (cls.MNIST6_180, cls.MNIST6_M)


class AnalysisName:
    """Analyses runnable from the command line."""

    CURVE = 'curve'
    EXPECTATION = 'expectation'
    EPS_OUT = 'eps-out'
    EPS_IN = 'eps-in'

    @classmethod
    def all_analyses(cls):
        """Return list of all analyses."""
        return [cls.CURVE, cls.EXPECTATION, cls.EPS_OUT, cls.EPS_IN]


class PoolingPlacement:
    """Where spatial max-pooling is applied in the network."""

    LIFTING = 'lifting'
    BLOCK = 'block'
    FIRST_BLOCK = 'first_block'

    # Per-task placements
    BY_TASK = {
        'mnist6-180': ('block',),
        'mnist6-m': ('block',),
        'procedural': ('block',),
        'rotmnist': ('lifting', 'first_block'),
    }

    @classmethod
    def all_placements(cls):
        """Return list of all pooling placements."""
        return [cls.LIFTING, cls.BLOCK, cls.FIRST_BLOCK]

    @classmethod
    def for_task(cls, task):
        """Get the default pooling placements for a task."""
        return cls.BY_TASK.get(task, ('block',))
