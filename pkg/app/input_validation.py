"""
Input validation and sanitization for line-delimited corpus records.

This module provides:
- Required-field and type checks with line numbers
- Length limits
- Label parsing against the closed label set
"""
import logging

from app.error_handling import RecordFormatError
from app.records import SentimentLabel

logger = logging.getLogger(__name__)

# Maximum length limits for different fields
MAX_LENGTHS = {
    'id': 200,
    'source_id': 200,
    'text': 20000,
    'source_text': 20000,
    'reply': 20000,
}


def require_fields(record, fields, line_no, path=None):
    """Raise RecordFormatError naming the first missing field"""
    if not isinstance(record, dict):
        raise RecordFormatError(f"expected an object, got {type(record).__name__}", line_no, path)
    for field in fields:
        if field not in record:
            raise RecordFormatError(f"missing field '{field}'", line_no, path)


def sanitize_string(value, field, line_no, path=None, allow_empty=False):
    """
    Validate a string field.

    Args:
        value: Raw field value
        field: Field name (selects the length limit)
        line_no: 1-based line number for error messages
        allow_empty: Whether whitespace-only strings are acceptable

    Returns:
        The value unchanged (text is never rewritten)
    """
    if not isinstance(value, str):
        raise RecordFormatError(f"field '{field}' must be a string", line_no, path)

    max_length = MAX_LENGTHS.get(field)
    if max_length and len(value) > max_length:
        logger.warning(f"Field {field} exceeded max length: {len(value)} > {max_length}")
        raise RecordFormatError(f"field '{field}' longer than {max_length} characters", line_no, path)

    if not allow_empty and not value.strip():
        raise RecordFormatError(f"field '{field}' is empty", line_no, path)

    return value


def parse_label(value, line_no, path=None, field='label'):
    """Parse a label string; unknown names are a RecordFormatError"""
    try:
        return SentimentLabel.parse(value)
    except ValueError as e:
        raise RecordFormatError(f"field '{field}': {e}", line_no, path)


def validate_string_list(values, field, line_no, path=None):
    """Validate an array of strings (reply texts may be empty strings)"""
    if not isinstance(values, list):
        raise RecordFormatError(f"field '{field}' must be an array", line_no, path)
    for value in values:
        sanitize_string(value, 'reply', line_no, path, allow_empty=True)
    return values
