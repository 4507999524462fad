"""Validation utilities for configuration values."""
from pathlib import Path

from partequiv.utils.error_handling import ConfigError


class ValidationError(ConfigError):
    """Raised when a configuration value fails validation."""
    pass


TRUE_VALUES = ('true', 'on', '1', 'yes')
FALSE_VALUES = ('false', 'off', '0', 'no')


def validate_integer(value, field_name="value", min_value=None, max_value=None):
    """
    Validate integer value with optional range check.

    Args:
        value: Value to validate (int or numeric string)
        field_name: Name of the field (for error messages)
        min_value: Optional minimum value
        max_value: Optional maximum value

    Returns:
        int: Validated integer

    Raises:
        ValidationError: If value is invalid
    """
    if value is None:
        raise ValidationError(f"{field_name} is required")

    if isinstance(value, bool):
        raise ValidationError(f"{field_name} must be an integer")

    try:
        int_value = int(str(value).strip())
    except (ValueError, TypeError):
        raise ValidationError(f"{field_name} must be an integer, got {value!r}")

    if min_value is not None and int_value < min_value:
        raise ValidationError(f"{field_name} must be at least {min_value}, got {int_value}")

    if max_value is not None and int_value > max_value:
        raise ValidationError(f"{field_name} must be at most {max_value}, got {int_value}")

    return int_value


def validate_float(value, field_name="value", min_value=None, max_value=None, exclusive_min=False):
    """
    Validate float value with optional range check.

    Args:
        value: Value to validate
        field_name: Name of the field (for error messages)
        min_value: Optional minimum value
        max_value: Optional maximum value
        exclusive_min: Reject values equal to min_value

    Returns:
        float: Validated float

    Raises:
        ValidationError: If value is invalid
    """
    if value is None:
        raise ValidationError(f"{field_name} is required")

    try:
        float_value = float(str(value).strip())
    except (ValueError, TypeError):
        raise ValidationError(f"{field_name} must be a number, got {value!r}")

    if min_value is not None:
        if float_value < min_value or (exclusive_min and float_value == min_value):
            bound = 'greater than' if exclusive_min else 'at least'
            raise ValidationError(f"{field_name} must be {bound} {min_value}, got {float_value}")

    if max_value is not None and float_value > max_value:
        raise ValidationError(f"{field_name} must be at most {max_value}, got {float_value}")

    return float_value


def validate_bool(value, field_name="value"):
    """
    Validate a boolean flag given as bool or as on/off style string.

    Returns:
        bool: Parsed flag

    Raises:
        ValidationError: If the value is not a recognised flag
    """
    if isinstance(value, bool):
        return value

    str_value = str(value).strip().lower()
    if str_value in TRUE_VALUES:
        return True
    if str_value in FALSE_VALUES:
        return False
    raise ValidationError(f"{field_name} must be one of: {', '.join(TRUE_VALUES + FALSE_VALUES)}")


def validate_choice(value, choices, field_name="value"):
    """
    Validate that value is one of the allowed choices.

    Args:
        value: Value to validate
        choices: List of allowed values
        field_name: Name of the field (for error messages)

    Returns:
        Value if valid

    Raises:
        ValidationError: If value not in choices
    """
    if value not in choices:
        raise ValidationError(f"{field_name} must be one of: {', '.join(map(str, choices))}")

    return value


def validate_odd(value, field_name="value"):
    """Validate a positive odd integer (kernel sizes)."""
    int_value = validate_integer(value, field_name, min_value=1)
    if int_value % 2 == 0:
        raise ValidationError(f"{field_name} must be odd, got {int_value}")
    return int_value


def validate_path(value, field_name="path", must_exist=False):
    """
    Validate a filesystem path.

    Returns:
        Path: The path object

    Raises:
        ValidationError: If the path is empty or missing when required
    """
    if value is None or not str(value).strip():
        raise ValidationError(f"{field_name} is required")

    path = Path(str(value).strip()).expanduser()
    if must_exist and not path.exists():
        raise ValidationError(f"{field_name} does not exist: {path}")
    return path
