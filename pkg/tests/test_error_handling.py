import io
import logging

import pytest

from app.error_handling import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_INTERNAL,
    ClassifierError,
    ConfigError,
    CorruptCheckpointError,
    DataError,
    NumericError,
    RunContextFilter,
    StageError,
    generate_run_id,
    get_run_id,
    handle_error,
    run_context,
    track_performance,
)
from app.metrics import get_metrics_summary, record_epoch, record_examples, reset_metrics


# --- Exit codes --- #

@pytest.mark.parametrize('error, expected', [
    (ConfigError('bad flag'), EXIT_CONFIG),
    (DataError('bad record'), EXIT_DATA),
    (CorruptCheckpointError('bad magic'), EXIT_DATA),
    (NumericError('log', 'non-finite value'), EXIT_INTERNAL),
    (RuntimeError('boom'), EXIT_INTERNAL),
])
def test_handle_error_exit_codes(error, expected):
    stream = io.StringIO()
    assert handle_error(error, stream=stream) == expected
    assert stream.getvalue().startswith('error: ')


def test_handle_error_message_and_metrics():
    stream = io.StringIO()
    with run_context(stage='evaluate'):
        handle_error(DataError('thread g09 has no gold label'), stream=stream)
    assert stream.getvalue() == 'error: thread g09 has no gold label\n'
    errors = get_metrics_summary()['errors']
    assert errors['total'] == 1
    assert errors['by_type'] == {'DataError': 1}
    assert errors['by_stage'] == {'evaluate': 1}


def test_unexpected_errors_are_reported_as_internal():
    stream = io.StringIO()
    handle_error(KeyError('missing'), stream=stream)
    assert 'internal error: KeyError' in stream.getvalue()


def test_wrapped_errors_keep_the_cause_exit_code():
    assert StageError('stage1_train', ConfigError('x')).exit_code == EXIT_CONFIG
    assert StageError('stage2_autolabel', DataError('x')).exit_code == EXIT_DATA
    assert StageError('evaluate', ValueError('x')).exit_code == EXIT_INTERNAL
    error = ClassifierError('t7', DataError('empty reply'))
    assert error.exit_code == EXIT_DATA
    assert 't7' in error.message
    assert error.cause.message == 'empty reply'


def test_stage_error_names_stage_and_cause():
    error = StageError('stage2_train', DataError('no neutral examples'))
    assert error.message == 'Stage stage2_train failed: no neutral examples'
    assert error.details == {'stage': 'stage2_train'}


# --- Run context --- #

def test_run_context_sets_and_restores():
    assert get_run_id() == 'no-run-id'
    with run_context(run_id='abc123'):
        assert get_run_id() == 'abc123'
        with run_context(run_id='inner'):
            assert get_run_id() == 'inner'
        assert get_run_id() == 'abc123'
    assert get_run_id() == 'no-run-id'


def test_filter_adds_run_id_and_stage():
    record = logging.LogRecord('test', logging.INFO, __file__, 1, 'message', None, None)
    with run_context(run_id='r1', stage='stage1_train'):
        assert RunContextFilter().filter(record)
    assert (record.run_id, record.stage) == ('r1', 'stage1_train')


def test_run_ids_are_unique():
    ids = {generate_run_id() for _ in range(50)}
    assert len(ids) == 50
    assert all(len(run_id) == 12 for run_id in ids)


# --- Performance tracking --- #

def test_track_performance_records_success_and_failure():
    @track_performance
    def works():
        return 'ok'

    @track_performance
    def fails():
        raise DataError('nope')

    assert works() == 'ok'
    with pytest.raises(DataError):
        fails()

    stages = get_metrics_summary()['stages']
    assert stages['works']['calls'] == 1 and stages['works']['failures'] == 0
    assert stages['fails']['calls'] == 1 and stages['fails']['failures'] == 1
    assert works.__name__ == 'works'


def test_reset_metrics():
    record_examples('autolabel', 5)
    record_epoch('stage1_bilstm')
    assert get_metrics_summary()['examples'] == {'autolabel': 5}
    reset_metrics()
    summary = get_metrics_summary()
    assert summary['examples'] == {} and summary['epochs'] == {} and summary['stages'] == {}
