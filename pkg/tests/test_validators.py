"""Tests for configuration validators."""
import pytest

from partequiv.utils.error_handling import ConfigError
from partequiv.utils.validators import (
    ValidationError, validate_bool, validate_choice, validate_float, validate_integer, validate_odd, validate_path,
)


class TestValidateInteger:
    """Test validate_integer function."""

    def test_valid_integer(self):
        """Test valid integer."""
        assert validate_integer(5, 'count') == 5

    def test_string_integer(self):
        """Test string that can be converted to integer."""
        assert validate_integer(' 5 ', 'count') == 5

    def test_invalid_string_raises_error(self):
        """Test non-numeric string raises error."""
        with pytest.raises(ValidationError, match='count must be an integer'):
            validate_integer('abc', 'count')

    def test_bool_is_not_an_integer(self):
        """Test booleans are rejected."""
        with pytest.raises(ValidationError):
            validate_integer(True, 'count')

    def test_min_value_validation(self):
        """Test minimum value validation."""
        with pytest.raises(ValidationError, match='at least 1'):
            validate_integer(0, 'count', min_value=1)

    def test_max_value_validation(self):
        """Test maximum value validation."""
        with pytest.raises(ValidationError, match='at most 10'):
            validate_integer(15, 'count', max_value=10)

    def test_none_raises_error(self):
        """Test None raises error."""
        with pytest.raises(ValidationError, match='is required'):
            validate_integer(None, 'count')

    def test_validation_error_is_config_error(self):
        """Test validators raise the configuration error type."""
        assert issubclass(ValidationError, ConfigError)


class TestValidateFloat:
    """Test validate_float function."""

    def test_scientific_notation(self):
        """Test strings in scientific notation."""
        assert validate_float('1e-4', 'lr') == 1e-4

    def test_exclusive_min(self):
        """Test exclusive bounds reject the bound itself."""
        with pytest.raises(ValidationError, match='greater than 0.0'):
            validate_float(0, 'lr', min_value=0.0, exclusive_min=True)
        assert validate_float(0, 'decay', min_value=0.0) == 0.0

    def test_not_a_number(self):
        """Test non-numeric values raise error."""
        with pytest.raises(ValidationError, match='lr must be a number'):
            validate_float('fast', 'lr')


class TestValidateBool:
    """Test validate_bool function."""

    @pytest.mark.parametrize('value', [True, 'true', 'ON', '1', 'yes'])
    def test_true_values(self, value):
        """Test accepted spellings of true."""
        assert validate_bool(value, 'partial') is True

    @pytest.mark.parametrize('value', [False, 'false', 'Off', '0', 'no'])
    def test_false_values(self, value):
        """Test accepted spellings of false."""
        assert validate_bool(value, 'partial') is False

    def test_invalid_flag(self):
        """Test unknown spellings raise error."""
        with pytest.raises(ValidationError, match='partial must be one of'):
            validate_bool('perhaps', 'partial')


class TestValidateChoice:
    """Test validate_choice function."""

    def test_valid_choice(self):
        """Test valid choice."""
        assert validate_choice('so2', ['so2', 'o2'], 'group') == 'so2'

    def test_invalid_choice_raises_error(self):
        """Test invalid choice raises error."""
        with pytest.raises(ValidationError, match='group must be one of: so2, o2'):
            validate_choice('se3', ['so2', 'o2'], 'group')


class TestValidateOdd:
    """Test validate_odd function."""

    def test_odd(self):
        """Test odd sizes pass."""
        assert validate_odd('7', 'kernel_size') == 7

    def test_even_raises_error(self):
        """Test even sizes raise error."""
        with pytest.raises(ValidationError, match='kernel_size must be odd'):
            validate_odd(4, 'kernel_size')


class TestValidatePath:
    """Test validate_path function."""

    def test_expands_user(self, monkeypatch, tmp_path):
        """Test '~' is expanded."""
        monkeypatch.setenv('HOME', str(tmp_path))
        assert validate_path('~/runs', 'out_dir') == tmp_path / 'runs'

    def test_empty_raises_error(self):
        """Test blank paths raise error."""
        with pytest.raises(ValidationError, match='out_dir is required'):
            validate_path('  ', 'out_dir')

    def test_must_exist(self, tmp_path):
        """Test missing paths raise error when required."""
        with pytest.raises(ValidationError, match='does not exist'):
            validate_path(tmp_path / 'absent', 'config', must_exist=True)
        assert validate_path(tmp_path, 'config', must_exist=True) == tmp_path
