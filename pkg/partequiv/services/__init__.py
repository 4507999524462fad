"""Services: datasets, configuration, training, checkpoints and analyses."""
