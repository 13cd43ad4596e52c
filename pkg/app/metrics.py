"""
Run telemetry collection.

This module provides:
- Stage call/failure/duration tracking
- Error counts by type and stage
- Examples processed per stage
- Epoch counts for training runs
"""
import logging
from collections import defaultdict, deque
from threading import Lock

logger = logging.getLogger(__name__)


def _empty_metrics():
    return {
        'stages': defaultdict(lambda: {'calls': 0, 'failures': 0, 'durations': deque(maxlen=100)}),
        'errors': {
            'total': 0,
            'by_type': defaultdict(int),
            'by_stage': defaultdict(int)
        },
        'examples': defaultdict(int),
        'epochs': defaultdict(int)
    }


# Thread-safe metrics storage
_metrics_lock = Lock()
_metrics = _empty_metrics()


def record_stage(stage_name, success, duration):
    """Record one execution of a stage"""
    with _metrics_lock:
        stage = _metrics['stages'][stage_name]
        stage['calls'] += 1
        stage['durations'].append(duration)
        if not success:
            stage['failures'] += 1


def record_error(error_type, stage_name):
    """Record error metrics"""
    with _metrics_lock:
        _metrics['errors']['total'] += 1
        _metrics['errors']['by_type'][error_type] += 1
        _metrics['errors']['by_stage'][stage_name] += 1


def record_examples(stage_name, count):
    """Record how many examples a stage consumed"""
    with _metrics_lock:
        _metrics['examples'][stage_name] += count


def record_epoch(model_name):
    """Record a completed training epoch"""
    with _metrics_lock:
        _metrics['epochs'][model_name] += 1


def get_metrics_summary():
    """Get metrics summary"""
    with _metrics_lock:
        stages = {}
        for name, stage in _metrics['stages'].items():
            durations = list(stage['durations'])
            stages[name] = {
                'calls': stage['calls'],
                'failures': stage['failures'],
                'total_time': sum(durations),
                'avg_time': sum(durations) / len(durations) if durations else 0
            }

        return {
            'stages': stages,
            'errors': {
                'total': _metrics['errors']['total'],
                'by_type': dict(_metrics['errors']['by_type']),
                'by_stage': dict(_metrics['errors']['by_stage'])
            },
            'examples': dict(_metrics['examples']),
            'epochs': dict(_metrics['epochs'])
        }


def reset_metrics():
    """Reset all metrics (for testing)"""
    global _metrics
    with _metrics_lock:
        _metrics = _empty_metrics()
