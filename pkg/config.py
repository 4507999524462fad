"""Configuration presets for partequiv training runs.

Presets:
-------
- default / Config: the full training recipe (300 epochs, batch 64, Adam at
  1e-3 with a separate 1e-4 rate for distribution parameters, 5 warmup epochs)
- development: the full recipe with DEBUG logging
- desk: a scaled-down run that finishes in minutes on a laptop CPU
  (2000 train / 500 test images, 30 epochs, 16 channels, N=4)
- testing: tiny shapes for the test suite, no log files

Select a preset with PARTEQUIV_CONFIG or `--preset`. A `key = value` file
passed with `--config` overrides the preset; command-line flags override
both. PARTEQUIV_DATA_DIR supplies the data directory when neither sets it.
"""
import os


class Config:
    """Base configuration class."""

    LOG_LEVEL = os.environ.get('PARTEQUIV_LOG_LEVEL', 'INFO').upper()
    LOG_TO_FILE = True

    # Optimisation
    EPOCHS = 300
    BATCH_SIZE = 64
    LR_MAIN = 1e-3
    LR_DIST = 1e-4
    WARMUP_EPOCHS = 5
    WEIGHT_DECAY = 0.0

    # Network
    N_ELEMENTS = 8
    CHANNELS = 32
    NUM_BLOCKS = 2
    KERNEL_SIZE_FIRST = 7
    KERNEL_SIZE = 5
    SIREN_HIDDEN = 32
    SIREN_OMEGA0 = 30.0
    TEMPERATURE = 1.0
    POOLING = None  # per-task default

    # Data
    SEED = 0
    TRAIN_SIZE = None
    TEST_SIZE = None
    ALLOW_FALLBACK = True


class DevelopmentConfig(Config):
    """Full recipe with verbose logging."""
    LOG_LEVEL = 'DEBUG'


class DeskConfig(Config):
    """Desk-scale preset sized to reproduce the toy-task separation in minutes."""
    EPOCHS = 30
    TRAIN_SIZE = 2000
    TEST_SIZE = 500
    CHANNELS = 16
    N_ELEMENTS = 4
    POOLING = ('lifting', 'block')


class TestingConfig(Config):
    """Testing configuration."""
    TESTING = True
    LOG_TO_FILE = False
    LOG_LEVEL = 'WARNING'
    EPOCHS = 1
    BATCH_SIZE = 8
    WARMUP_EPOCHS = 0
    TRAIN_SIZE = 16
    TEST_SIZE = 8
    CHANNELS = 4
    NUM_BLOCKS = 1
    N_ELEMENTS = 4
    KERNEL_SIZE_FIRST = 5
    KERNEL_SIZE = 3
    SIREN_HIDDEN = 8
    POOLING = ('lifting', 'block')


config = {
    'development': DevelopmentConfig,
    'desk': DeskConfig,
    'testing': TestingConfig,
    'default': Config
}
