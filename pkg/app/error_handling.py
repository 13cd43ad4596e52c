"""
Structured error handling and logging utilities for pipeline runs.

This module provides:
- Specific exception classes with process exit codes
- Structured logging with run IDs and stage names
- Consistent error reporting for command-line use
- Performance tracking
"""
import contextvars
import logging
import sys
import time
import uuid
from contextlib import contextmanager
from functools import wraps

from config import Config

# Configure structured logging
# Note: Format includes run_id and stage which are added by RunContextFilter
# The filter must be added before any logging occurs
logging.basicConfig(
    level=getattr(logging, Config.LOG_LEVEL, logging.INFO),
    format='%(asctime)s [%(levelname)s] [%(name)s] [run_id=%(run_id)s] [stage=%(stage)s] %(message)s',
    datefmt='%Y-%m-%d %H:%M:%S',
    force=True
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

_run_id = contextvars.ContextVar('run_id', default='no-run-id')
_stage = contextvars.ContextVar('stage', default='-')


class AppError(Exception):
    """Base application error"""
    def __init__(self, message, exit_code=EXIT_INTERNAL, error_code=None, details=None):
        self.message = message
        self.exit_code = exit_code
        self.error_code = error_code
        self.details = details
        super().__init__(self.message)


class ConfigError(AppError):
    """Invalid or missing configuration"""
    def __init__(self, message, details=None):
        super().__init__(message, exit_code=EXIT_CONFIG, error_code='CONFIG_ERROR', details=details)


class DataError(AppError):
    """Input data could not be used"""
    def __init__(self, message, details=None, error_code='DATA_ERROR'):
        super().__init__(message, exit_code=EXIT_DATA, error_code=error_code, details=details)


class RecordFormatError(DataError):
    """Malformed record in a line-delimited file"""
    def __init__(self, message, line_no=None, path=None):
        self.line_no = line_no
        self.path = path
        location = f"{path}:{line_no}" if path else f"line {line_no}"
        super().__init__(
            f"{location}: {message}" if line_no is not None else message,
            details={'line_no': line_no, 'path': str(path) if path else None},
            error_code='RECORD_FORMAT_ERROR'
        )


class EmbeddingFormatError(DataError):
    """Malformed pretrained-embedding file"""
    def __init__(self, message, line_no=None):
        self.line_no = line_no
        super().__init__(
            f"line {line_no}: {message}" if line_no is not None else message,
            details={'line_no': line_no},
            error_code='EMBEDDING_FORMAT_ERROR'
        )


class ShapeError(AppError):
    """Incompatible tensor shapes"""
    def __init__(self, operation, *shapes):
        self.operation = operation
        self.shapes = shapes
        shown = ' vs '.join(str(tuple(s)) for s in shapes)
        super().__init__(
            f"{operation}: incompatible shapes {shown}",
            exit_code=EXIT_INTERNAL,
            error_code='SHAPE_ERROR'
        )


class NumericError(AppError):
    """Non-finite value produced by a numeric operation"""
    def __init__(self, operation, message="non-finite value"):
        self.operation = operation
        super().__init__(f"{operation}: {message}", exit_code=EXIT_INTERNAL, error_code='NUMERIC_ERROR')


class CheckpointError(AppError):
    """Checkpoint file could not be used"""
    def __init__(self, message, error_code='CHECKPOINT_ERROR'):
        super().__init__(message, exit_code=EXIT_DATA, error_code=error_code)


class CorruptCheckpointError(CheckpointError):
    def __init__(self, message="Checkpoint file is corrupt"):
        super().__init__(message, error_code='CHECKPOINT_CORRUPT')


class CheckpointVersionError(CheckpointError):
    def __init__(self, found, expected):
        super().__init__(
            f"Checkpoint format version {found} is not supported (expected {expected})",
            error_code='CHECKPOINT_VERSION'
        )


class ArchitectureMismatchError(CheckpointError):
    def __init__(self, found, expected):
        super().__init__(
            f"Checkpoint holds a '{found}' model, expected '{expected}'",
            error_code='CHECKPOINT_ARCHITECTURE'
        )


class CheckpointShapeError(CheckpointError):
    def __init__(self, name, found, expected):
        super().__init__(
            f"Parameter {name} has shape {tuple(found)}, config implies {tuple(expected)}",
            error_code='CHECKPOINT_SHAPE'
        )


class ClassifierError(AppError):
    """Classifier failure while labeling a specific thread"""
    def __init__(self, thread_id, cause):
        self.thread_id = thread_id
        self.cause = cause
        exit_code = cause.exit_code if isinstance(cause, AppError) else EXIT_INTERNAL
        super().__init__(
            f"Classifier failed on thread {thread_id}: {cause}",
            exit_code=exit_code,
            error_code='CLASSIFIER_ERROR'
        )


class StageError(AppError):
    """Pipeline stage failure"""
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        exit_code = cause.exit_code if isinstance(cause, AppError) else EXIT_INTERNAL
        super().__init__(
            f"Stage {stage} failed: {cause}",
            exit_code=exit_code,
            error_code='STAGE_ERROR',
            details={'stage': stage}
        )


def generate_run_id():
    """Generate unique run ID"""
    return uuid.uuid4().hex[:12]


def get_run_id():
    """Get current run ID"""
    return _run_id.get()


@contextmanager
def run_context(run_id=None, stage=None):
    """
    Bind a run ID and/or stage name to every log record emitted inside the block.

    Usage:
        with run_context(stage='stage1_train'):
            ...
    """
    tokens = []
    if run_id is not None:
        tokens.append((_run_id, _run_id.set(run_id)))
    if stage is not None:
        tokens.append((_stage, _stage.set(stage)))
    try:
        yield
    finally:
        for var, token in reversed(tokens):
            var.reset(token)


class RunContextFilter(logging.Filter):
    """Logging filter to add run ID and stage to log records"""
    def filter(self, record):
        record.run_id = _run_id.get()
        record.stage = _stage.get()
        return True


# Add filter to root logger and all existing handlers
root_logger = logging.getLogger()
filter_instance = RunContextFilter()
root_logger.addFilter(filter_instance)

for handler in root_logger.handlers:
    handler.addFilter(filter_instance)


def handle_error(error, stream=None):
    """
    Log an error and translate it into a process exit code.

    Args:
        error: Exception instance
        stream: Where the one-line user message goes (stderr by default)

    Returns:
        Exit code (1 config, 2 data, 3 internal)
    """
    stream = stream or sys.stderr
    if isinstance(error, AppError):
        logger.warning(
            f"Application error: {error.error_code} - {error.message}",
            extra={'error_code': error.error_code, 'details': error.details}
        )
        exit_code = error.exit_code
        message = error.message
    else:
        logger.error(f"Unexpected error: {type(error).__name__} - {str(error)}", exc_info=True)
        exit_code = EXIT_INTERNAL
        message = f"internal error: {type(error).__name__}: {error}"

    from app.metrics import record_error
    record_error(type(error).__name__, _stage.get())

    print(f"error: {message}", file=stream)
    return exit_code


def track_performance(func):
    """
    Decorator to track function execution time and log performance metrics.

    Usage:
        @track_performance
        def my_function():
            ...
    """
    @wraps(func)
    def wrapper(*args, **kwargs):
        from app.metrics import record_stage
        start_time = time.time()

        try:
            result = func(*args, **kwargs)
            execution_time = time.time() - start_time
            logger.info(f"Function {func.__name__} completed in {execution_time:.3f}s")
            record_stage(func.__name__, True, execution_time)
            return result
        except Exception as e:
            execution_time = time.time() - start_time
            logger.error(f"Function {func.__name__} failed after {execution_time:.3f}s: {str(e)}")
            record_stage(func.__name__, False, execution_time)
            raise

    return wrapper
