"""
Evaluation of classifiers against gold labels.

This module provides:
- ConfusionMatrix (rows gold, columns predicted, negative/neutral/positive order)
- Metrics: accuracy, per-class precision/recall/F1 and the positive/negative
  averages (eq1_*)
- evaluate / direct_baseline entry points
- Confusion matrix rendering (aligned text, CSV counts, optional SVG heatmap)
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.error_handling import DataError, track_performance
from app.metrics import record_examples
from app.records import LABEL_NAMES, NUM_CLASSES, LabeledTweet, SentimentLabel, ThreadRecord

logger = logging.getLogger(__name__)


def eq1(score_pos: float, score_neg: float) -> float:
    """Average of the positive-class and negative-class scores"""
    return (score_pos + score_neg) / 2


def _ratio(numerator, denominator) -> float:
    return float(numerator) / float(denominator) if denominator else 0.0


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (NUM_CLASSES, NUM_CLASSES) or np.any(counts < 0):
            raise DataError(f"confusion matrix must be a non-negative {NUM_CLASSES}x{NUM_CLASSES} table")
        object.__setattr__(self, 'counts', counts)

    @classmethod
    def from_pairs(cls, gold: Sequence[int], predicted: Sequence[int]) -> 'ConfusionMatrix':
        if len(gold) != len(predicted):
            raise DataError(f"{len(gold)} gold labels but {len(predicted)} predictions")
        counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
        np.add.at(counts, (np.asarray(gold, dtype=np.int64), np.asarray(predicted, dtype=np.int64)), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def gold_counts(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def predicted_counts(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.counts, index=LABEL_NAMES, columns=LABEL_NAMES)
        frame.index.name = 'gold'
        return frame

    def to_dict(self):
        return {'labels': list(LABEL_NAMES), 'rows_gold_columns_predicted': self.counts.tolist()}

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: Dict[str, float]
    recall: Dict[str, float]
    f1: Dict[str, float]
    eq1_precision: float
    eq1_recall: float
    eq1_f1: float
    support: int

    def to_dict(self):
        return {
            'accuracy': self.accuracy,
            'eq1_precision': self.eq1_precision,
            'eq1_recall': self.eq1_recall,
            'eq1_f1': self.eq1_f1,
            'precision': dict(self.precision),
            'recall': dict(self.recall),
            'f1': dict(self.f1),
            'support': self.support,
        }


def metrics_from_confusion(cm: ConfusionMatrix) -> Metrics:
    """
    Metrics from a confusion matrix.

    An empty denominator gives 0 for precision or recall, and F1 is 0 when
    both are 0.
    """
    counts = cm.counts
    diagonal = np.diag(counts)
    predicted = cm.predicted_counts()
    gold = cm.gold_counts()

    precision, recall, f1 = {}, {}, {}
    for label in SentimentLabel:
        name = label.label_name
        precision[name] = _ratio(diagonal[label], predicted[label])
        recall[name] = _ratio(diagonal[label], gold[label])
        f1[name] = f1_score(precision[name], recall[name])

    pos, neg = SentimentLabel.POSITIVE.label_name, SentimentLabel.NEGATIVE.label_name
    return Metrics(
        accuracy=_ratio(diagonal.sum(), cm.total),
        precision=precision,
        recall=recall,
        f1=f1,
        eq1_precision=eq1(precision[pos], precision[neg]),
        eq1_recall=eq1(recall[pos], recall[neg]),
        eq1_f1=eq1(f1[pos], f1[neg]),
        support=cm.total,
    )


def metrics_from_pairs(gold: Sequence[int], predicted: Sequence[int]) -> Metrics:
    """Metrics by streaming over (gold, predicted) pairs"""
    tp = np.zeros(NUM_CLASSES)
    n_pred = np.zeros(NUM_CLASSES)
    n_gold = np.zeros(NUM_CLASSES)
    correct = 0
    for g, p in zip(gold, predicted):
        n_gold[g] += 1
        n_pred[p] += 1
        if g == p:
            tp[g] += 1
            correct += 1

    precision, recall, f1 = {}, {}, {}
    for label in SentimentLabel:
        name = label.label_name
        precision[name] = _ratio(tp[label], n_pred[label])
        recall[name] = _ratio(tp[label], n_gold[label])
        f1[name] = f1_score(precision[name], recall[name])
    total = len(gold)
    return Metrics(
        accuracy=_ratio(correct, total),
        precision=precision,
        recall=recall,
        f1=f1,
        eq1_precision=eq1(precision['positive'], precision['negative']),
        eq1_recall=eq1(recall['positive'], recall['negative']),
        eq1_f1=eq1(f1['positive'], f1['negative']),
        support=total,
    )


def error_analysis(cm: ConfusionMatrix) -> Dict[str, Dict[str, float]]:
    """Per gold class: misclassified count and its share of all errors"""
    errors = cm.gold_counts() - np.diag(cm.counts)
    total_errors = int(errors.sum())
    return {
        label.label_name: {
            'errors': int(errors[label]),
            'share_of_errors': _ratio(errors[label], total_errors),
        }
        for label in SentimentLabel
    }


def thread_gold_pairs(threads: Sequence[ThreadRecord]) -> Tuple[List[str], List[int]]:
    """Source texts and gold labels of gold-labeled threads"""
    texts, gold = [], []
    for thread in threads:
        if thread.gold_label is None:
            raise DataError(f"thread {thread.source_id} has no gold label",
                            details={'thread_id': thread.source_id})
        texts.append(thread.source_text)
        gold.append(int(thread.gold_label))
    return texts, gold


class EvaluationService:
    """Runs a classifier over labeled texts and scores the predictions"""

    def __init__(self):
        self.logger = logger

    @track_performance
    def score(self, model, texts: Sequence[str], gold: Sequence[int]) -> Tuple[Metrics, ConfusionMatrix]:
        if not texts:
            raise DataError("cannot evaluate on an empty dataset")
        predicted = np.argmax(model.predict_texts(list(texts)), axis=1)
        cm = ConfusionMatrix.from_pairs(gold, predicted)
        metrics = metrics_from_confusion(cm)
        record_examples('evaluate', len(texts))
        self.logger.info(
            f"Evaluated {len(texts)} examples: accuracy={metrics.accuracy:.4f} eq1_f1={metrics.eq1_f1:.4f}"
        )
        return metrics, cm

    def evaluate(self, model, data: Sequence[LabeledTweet]) -> Tuple[Metrics, ConfusionMatrix]:
        return self.score(model, [example.text for example in data], [int(example.label) for example in data])

    def evaluate_threads(self, model, threads: Sequence[ThreadRecord]) -> Tuple[Metrics, ConfusionMatrix]:
        """Predictions from the source text scored against the gold reply sentiment"""
        texts, gold = thread_gold_pairs(threads)
        return self.score(model, texts, gold)

    def direct_baseline(self, stage1_model, threads: Sequence[ThreadRecord]) -> Tuple[Metrics, ConfusionMatrix]:
        """The message-level classifier's view of the source, taken as the reply sentiment"""
        return self.evaluate_threads(stage1_model, threads)


def evaluate(model, data: Sequence[LabeledTweet]) -> Tuple[Metrics, ConfusionMatrix]:
    return EvaluationService().evaluate(model, data)


def direct_baseline(model, threads: Sequence[ThreadRecord]) -> Tuple[Metrics, ConfusionMatrix]:
    return EvaluationService().direct_baseline(model, threads)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def format_confusion_table(cm: ConfusionMatrix) -> str:
    """Aligned plain-text table, gold rows and predicted columns"""
    corner = 'gold \\ predicted'
    width = max(len(corner), *(len(name) for name in LABEL_NAMES), len(str(int(cm.counts.max(initial=0)))))
    lines = [corner.ljust(width) + ''.join(f"  {name:>{width}}" for name in LABEL_NAMES)]
    for label in SentimentLabel:
        row = ''.join(f"  {int(value):>{width}}" for value in cm.counts[label])
        lines.append(label.label_name.ljust(width) + row)
    return '\n'.join(lines) + '\n'


def _svg_heatmap(cm: ConfusionMatrix, cell: int = 80) -> str:
    margin = 110
    size = margin + cell * NUM_CLASSES + 10
    peak = max(int(cm.counts.max(initial=0)), 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" '
        f'font-size="13">',
        f'<text x="{margin + cell * NUM_CLASSES / 2}" y="20" text-anchor="middle">predicted</text>',
        f'<text x="15" y="{margin + cell * NUM_CLASSES / 2}" text-anchor="middle" '
        f'transform="rotate(-90 15 {margin + cell * NUM_CLASSES / 2})">gold</text>',
    ]
    for j, name in enumerate(LABEL_NAMES):
        parts.append(f'<text x="{margin + cell * j + cell / 2}" y="{margin - 10}" text-anchor="middle">{name}</text>')
        parts.append(f'<text x="{margin - 10}" y="{margin + cell * j + cell / 2 + 4}" text-anchor="end">{name}</text>')
    for i in range(NUM_CLASSES):
        for j in range(NUM_CLASSES):
            value = int(cm.counts[i, j])
            shade = int(round(255 - 200 * value / peak))
            x, y = margin + cell * j, margin + cell * i
            parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                         f'fill="rgb({shade},{shade},255)" stroke="#333"/>')
            parts.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 5}" text-anchor="middle">{value}</text>')
    parts.append('</svg>')
    return '\n'.join(parts) + '\n'


def render_confusion(cm: ConfusionMatrix, path, svg: bool = False) -> List[Path]:
    """
    Write `<path>.txt` (aligned table) and `<path>.csv` (counts), plus
    `<path>.svg` when requested.

    Returns:
        The written paths
    """
    base = Path(path)
    if base.suffix in ('.txt', '.csv', '.svg'):
        base = base.with_suffix('')
    written = []
    try:
        text_path = base.with_name(base.name + '.txt')
        text_path.write_text(format_confusion_table(cm), encoding='utf-8')
        written.append(text_path)

        csv_path = base.with_name(base.name + '.csv')
        cm.to_frame().to_csv(csv_path, lineterminator='\n')
        written.append(csv_path)

        if svg:
            svg_path = base.with_name(base.name + '.svg')
            svg_path.write_text(_svg_heatmap(cm), encoding='utf-8')
            written.append(svg_path)
    except OSError as e:
        raise DataError(f"cannot write confusion matrix to {base}: {e}")
    return written


def read_confusion_csv(path) -> ConfusionMatrix:
    """Parse a counts file written by render_confusion"""
    frame = pd.read_csv(path, index_col=0)
    if list(frame.columns) != LABEL_NAMES or list(frame.index) != LABEL_NAMES:
        raise DataError(f"{path} is not a confusion-matrix counts file")
    return ConfusionMatrix(frame.to_numpy(dtype=np.int64))


def write_metrics(metrics: Metrics, cm: ConfusionMatrix, path, system: Optional[str] = None):
    """Machine-readable metrics file for one evaluated system"""
    payload = {'metrics': metrics.to_dict(), 'confusion_matrix': cm.to_dict()}
    if system is not None:
        payload = {'system': system, **payload}
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write('\n')
