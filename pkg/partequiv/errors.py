"""Error message catalogue for partequiv."""

# Group-core errors
GROUP_ERRORS = {
    'NOT_IDENTITY_COMPONENT': 'log_so2: element {element} is not in identity component',
    'EMPTY_ENUMERATION': 'enumerate_discrete requires n >= 1, got {n}',
    'BAD_ENUMERATION': 'enumerate_discrete: {kind} requires {requirement}, got n={n}',
    'UNKNOWN_GROUP': 'Unknown group kind: {kind}',
}

# Tensor engine errors
SHAPE_ERRORS = {
    'SHAPE_MISMATCH': '{op}: incompatible shapes {left} and {right}',
    'NON_SCALAR_LOSS': 'backward requires a scalar loss, got shape {shape}',
    'NO_GRAPH': 'backward called on a tensor that does not require gradients',
    'BAD_RANK': '{op}: expected a {expected}-dimensional input, got shape {shape}',
    'BAD_LR': 'learning rate must be positive, got {lr}',
}

# Sampling and kernel errors
MODEL_ERRORS = {
    'NO_ELEMENTS': 'sample_discrete requires a non-empty element list',
    'IDENTITY_FIRST': 'sample_discrete requires elements[0] to be the identity, got {element}',
    'BAD_SAMPLE_COUNT': '{op} requires n >= 1, got {n}',
    'FACTOR_MISMATCH': 'product distribution factors {factors} do not match group {kind}',
    'EVEN_KERNEL': 'kernel size must be odd, got {k}',
    'EMPTY_COORDS': '{op} requires at least one fiber coordinate',
    'BAD_POOLING': 'invalid pooling placement {placement!r}; allowed: {allowed}',
}

# Dataset errors
DATA_ERRORS = {
    'NOT_IDX': '{path}: not an IDX file (magic {magic:#010x})',
    'UNEXPECTED_EOF': '{path}: unexpected EOF (expected {expected} bytes, got {actual})',
    'COUNT_MISMATCH': 'image/label count mismatch: {images} images, {labels} labels',
    'NO_SOURCE_DIGITS': 'no images with label {digit} present',
    'MISSING_DATASET': 'dataset files for task {task} not found in {data_dir} and fallback is disabled',
    'BAD_SIZE': '{op} requires n >= {minimum}, got {n}',
}

# Checkpoint errors
CHECKPOINT_ERRORS = {
    'BAD_MAGIC': '{path}: not a partequiv checkpoint',
    'VERSION_MISMATCH': '{path}: checkpoint format version {found}, this build reads version {expected}',
    'CONFIG_MISMATCH': 'checkpoint config differs in field {field!r}: checkpoint has {found!r}, expected {expected!r}',
    'MISSING_BLOB': 'checkpoint has no entry named {name!r}',
    'BLOB_SHAPE': 'checkpoint entry {name!r} has shape {found}, model expects {expected}',
}

# Training and analysis errors
TRAINING_ERRORS = {
    'NON_FINITE_LOSS': 'non-finite loss at epoch {epoch}, step {step}; first non-finite tensor: {tensor}',
    'TOO_FEW_RESAMPLES': 'expectation test requires M >= 2, got {m}',
    'MIRROR_IN_CHART': 'boundary-strip derivation assumes one-dimensional rotation chart; got element {element}',
    'NOT_CLOSED': 'output coordinates are not closed under {element}',
    'UNKNOWN_ANALYSIS': 'unknown analysis {name!r}; allowed: {allowed}',
}


def get_error_message(error_code, **kwargs):
    """
    Get an error message by code.

    Args:
        error_code: The error code
        **kwargs: Optional parameters to format the message

    Returns:
        Formatted error message
    """
    for error_dict in [GROUP_ERRORS, SHAPE_ERRORS, MODEL_ERRORS, DATA_ERRORS,
                       CHECKPOINT_ERRORS, TRAINING_ERRORS]:
        if error_code in error_dict:
            message = error_dict[error_code]
            return message.format(**kwargs) if kwargs else message

    return 'An error occurred'
