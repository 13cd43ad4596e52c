"""
Automatic labeling of source tweets from the predicted sentiment of their
replies.

This module provides:
- Reply label counting and the threshold-based aggregate label
- Corpus-scale auto-labeling with optional thread-level parallelism
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.corpus import ClassDistribution, class_distribution
from app.error_handling import ClassifierError, DataError, track_performance
from app.metrics import record_examples
from app.records import LabeledTweet, SentimentLabel, ThreadRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReplyLabelCounts:
    n_pos: int = 0
    n_neg: int = 0
    n_neu: int = 0

    def __post_init__(self):
        if min(self.n_pos, self.n_neg, self.n_neu) < 0:
            raise ValueError("reply label counts must be non-negative")

    @property
    def total(self) -> int:
        return self.n_pos + self.n_neg + self.n_neu

    @classmethod
    def from_labels(cls, labels: Sequence[SentimentLabel]) -> 'ReplyLabelCounts':
        counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=len(SentimentLabel))
        return cls(
            n_pos=int(counts[SentimentLabel.POSITIVE]),
            n_neg=int(counts[SentimentLabel.NEGATIVE]),
            n_neu=int(counts[SentimentLabel.NEUTRAL]),
        )

    def to_dict(self):
        return {'negative': self.n_neg, 'neutral': self.n_neu, 'positive': self.n_pos}


class AggregationThresholds(BaseModel):
    model_config = ConfigDict(frozen=True)

    neutral_fraction: float = Field(0.85, gt=0, lt=1)
    pos_over_neg: float = Field(1.5, ge=1)
    neg_over_pos: float = Field(1.6, ge=1)


def _exact(value: float) -> Fraction:
    # decimal text of the configured value, so 0.85 compares as 17/20
    return Fraction(str(value))


def aggregate_label(counts: ReplyLabelCounts, th: AggregationThresholds) -> SentimentLabel:
    """
    Overall label of a thread from its reply label counts.

    Checks run in order with strict comparisons: neutral fraction, then
    positive dominance, then negative dominance, else neutral.
    """
    total = counts.total
    if total == 0:
        raise DataError("cannot aggregate a thread with no reply labels")
    if counts.n_neu > _exact(th.neutral_fraction) * total:
        return SentimentLabel.NEUTRAL
    if counts.n_pos > _exact(th.pos_over_neg) * counts.n_neg:
        return SentimentLabel.POSITIVE
    if counts.n_neg > _exact(th.neg_over_pos) * counts.n_pos:
        return SentimentLabel.NEGATIVE
    return SentimentLabel.NEUTRAL


@dataclass
class AutoLabelResult:
    examples: List[LabeledTweet] = field(default_factory=list)
    counts: List[ReplyLabelCounts] = field(default_factory=list)
    skipped_ids: List[str] = field(default_factory=list)

    def distribution(self) -> ClassDistribution:
        return class_distribution(self.examples)

    def reply_distribution(self):
        """Predicted reply labels summed over all threads"""
        totals = {label.label_name: 0 for label in SentimentLabel}
        for counts in self.counts:
            for name, value in counts.to_dict().items():
                totals[name] += value
        return totals


class AutoLabelService:
    """
    Label source tweets with the aggregate of their replies' predictions.

    The classifier only ever sees reply texts. Results keep input order
    whatever the number of workers.
    """

    def __init__(self, classifier, thresholds: AggregationThresholds = None, workers: int = 1):
        self.logger = logger
        self.classifier = classifier
        self.thresholds = thresholds or AggregationThresholds()
        self.workers = max(1, int(workers))

    def count_replies(self, thread: ThreadRecord) -> ReplyLabelCounts:
        try:
            labels = self.classifier.predict_labels(list(thread.replies)) if thread.replies else []
        except Exception as e:
            raise ClassifierError(thread.source_id, e)
        return ReplyLabelCounts.from_labels(labels)

    def _label_one(self, thread: ThreadRecord):
        counts = self.count_replies(thread)
        if counts.total == 0:
            raise DataError(f"thread {thread.source_id} has no replies to aggregate",
                            details={'thread_id': thread.source_id})
        return counts, aggregate_label(counts, self.thresholds)

    @track_performance
    def label_threads(self, threads: Sequence[ThreadRecord]) -> AutoLabelResult:
        threads = list(threads)
        if self.workers > 1 and len(threads) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                outcomes = list(pool.map(self._label_one, threads))
        else:
            outcomes = [self._label_one(thread) for thread in threads]

        result = AutoLabelResult()
        for thread, (counts, label) in zip(threads, outcomes):
            if not thread.source_text.strip():
                self.logger.warning(f"Thread {thread.source_id} has an empty source text, not emitted")
                result.skipped_ids.append(thread.source_id)
                continue
            result.examples.append(LabeledTweet(id=thread.source_id, text=thread.source_text, label=label))
            result.counts.append(counts)

        record_examples('autolabel', sum(counts.total for counts, _ in outcomes))
        dist = result.distribution()
        self.logger.info(
            f"Auto-labeled {len(result.examples)} threads: "
            + ', '.join(f"{label.label_name} {dist.counts[label]}" for label in SentimentLabel)
        )
        return result


def autolabel_threads(threads: Sequence[ThreadRecord], classifier, th: AggregationThresholds,
                      workers: int = 1) -> List[LabeledTweet]:
    """(source_text, aggregate label) pairs for every thread, in input order"""
    return AutoLabelService(classifier, th, workers).label_threads(threads).examples
