"""
Labeled-tweet and reply-thread corpora: ingestion, validation, filtering,
splitting and class statistics.

Both file formats are UTF-8 JSON Lines, one record per line.
"""
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from app.error_handling import DataError, RecordFormatError
from app.input_validation import parse_label, require_fields, sanitize_string, validate_string_list
from app.records import NUM_CLASSES, LabeledTweet, SentimentLabel, ThreadRecord

logger = logging.getLogger(__name__)

LABELED_FORMAT = 'jsonl'
SUPPORTED_FORMATS = (LABELED_FORMAT,)


@dataclass(frozen=True)
class ClassDistribution:
    counts: Dict[SentimentLabel, int]
    fractions: Dict[SentimentLabel, float]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def to_dict(self):
        return {
            'total': self.total,
            'counts': {label.label_name: self.counts[label] for label in SentimentLabel},
            'fractions': {label.label_name: self.fractions[label] for label in SentimentLabel},
        }


@dataclass(frozen=True)
class ClassWeights:
    weights: Dict[SentimentLabel, float]

    def as_array(self, dtype=np.float64) -> np.ndarray:
        return np.array([self.weights[label] for label in SentimentLabel], dtype=dtype)

    def to_dict(self):
        return {label.label_name: self.weights[label] for label in SentimentLabel}


@dataclass
class FilterReport:
    kept: int = 0
    dropped_reply_count: int = 0
    dropped_source_length: int = 0
    replies_dropped: int = 0
    dropped_ids: List[str] = field(default_factory=list)

    def to_dict(self):
        return {
            'kept': self.kept,
            'dropped_reply_count': self.dropped_reply_count,
            'dropped_source_length': self.dropped_source_length,
            'replies_dropped': self.replies_dropped,
        }


def _read_json_lines(path):
    """Yield (line_no, record) for every non-blank line"""
    try:
        handle = open(path, 'r', encoding='utf-8')
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}")
    with handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as e:
                raise RecordFormatError(f"invalid JSON ({e.msg})", line_no, path)


def _write_json_lines(records, path):
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False))
            handle.write('\n')


def load_labeled_corpus(path, format: str = LABELED_FORMAT) -> List[LabeledTweet]:
    """
    Read a labeled-tweet file.

    Args:
        path: JSON Lines file with id, text, label per record
        format: Record format id (only 'jsonl')

    Returns:
        Records in file order
    """
    if format not in SUPPORTED_FORMATS:
        raise DataError(f"unsupported corpus format '{format}'")

    tweets = []
    seen = {}
    for line_no, record in _read_json_lines(path):
        require_fields(record, ('id', 'text', 'label'), line_no, path)
        tweet_id = record['id']
        if isinstance(tweet_id, int) and not isinstance(tweet_id, bool):
            tweet_id = str(tweet_id)
        tweet_id = sanitize_string(tweet_id, 'id', line_no, path)
        text = sanitize_string(record['text'], 'text', line_no, path)
        label = parse_label(record['label'], line_no, path)
        if tweet_id in seen:
            raise RecordFormatError(f"duplicate id '{tweet_id}' (first seen on line {seen[tweet_id]})", line_no, path)
        seen[tweet_id] = line_no
        tweets.append(LabeledTweet(id=tweet_id, text=text, label=label))

    logger.info(f"Loaded {len(tweets)} labeled tweets from {path}")
    return tweets


def save_labeled_corpus(tweets: Sequence[LabeledTweet], path):
    """Write tweets in the labeled-corpus format"""
    _write_json_lines((tweet.to_record() for tweet in tweets), path)
    logger.info(f"Wrote {len(tweets)} labeled tweets to {path}")


def load_threads(path) -> List[ThreadRecord]:
    """
    Read a reply-thread file.

    Reply order is preserved; a missing or null gold_label means unlabeled.
    """
    threads = []
    seen = {}
    for line_no, record in _read_json_lines(path):
        require_fields(record, ('source_id', 'source_text', 'replies'), line_no, path)
        source_id = record['source_id']
        if isinstance(source_id, int) and not isinstance(source_id, bool):
            source_id = str(source_id)
        source_id = sanitize_string(source_id, 'source_id', line_no, path)
        source_text = sanitize_string(record['source_text'], 'source_text', line_no, path, allow_empty=True)
        replies = validate_string_list(record['replies'], 'replies', line_no, path)

        gold = record.get('gold_label')
        gold_label = parse_label(gold, line_no, path, field='gold_label') if gold is not None else None

        if source_id in seen:
            raise RecordFormatError(
                f"duplicate source_id '{source_id}' (first seen on line {seen[source_id]})", line_no, path
            )
        seen[source_id] = line_no
        threads.append(ThreadRecord(
            source_id=source_id,
            source_text=source_text,
            replies=list(replies),
            gold_label=gold_label,
        ))

    logger.info(f"Loaded {len(threads)} threads from {path}")
    return threads


def save_threads(threads: Sequence[ThreadRecord], path):
    """Write threads in the thread-file format"""
    _write_json_lines((thread.to_record() for thread in threads), path)


def filter_threads_with_report(threads: Sequence[ThreadRecord], min_replies: int, min_tokens: int,
                               tokenizer: Callable[[str], List[str]]) -> Tuple[List[ThreadRecord], FilterReport]:
    """
    Apply the reply-count and token-length constraints.

    With min_tokens > 0 short replies are removed first, then the source text
    length and the surviving reply count are checked.
    """
    if min_replies < 0 or min_tokens < 0:
        raise ValueError("min_replies and min_tokens must be non-negative")

    report = FilterReport()
    kept = []
    for thread in threads:
        replies = list(thread.replies)
        if min_tokens > 0:
            long_enough = [reply for reply in replies if len(tokenizer(reply)) >= min_tokens]
            report.replies_dropped += len(replies) - len(long_enough)
            if len(tokenizer(thread.source_text)) < min_tokens:
                report.dropped_source_length += 1
                report.dropped_ids.append(thread.source_id)
                continue
            if len(long_enough) != len(replies):
                thread = thread.model_copy(update={'replies': long_enough})
            replies = long_enough
        if len(replies) < min_replies:
            report.dropped_reply_count += 1
            report.dropped_ids.append(thread.source_id)
            continue
        kept.append(thread)

    report.kept = len(kept)
    logger.info(
        f"Thread filter (min_replies={min_replies}, min_tokens={min_tokens}): kept {report.kept}, "
        f"dropped {report.dropped_reply_count} by reply count, {report.dropped_source_length} by source length"
    )
    return kept, report


def filter_threads(threads: Sequence[ThreadRecord], min_replies: int, min_tokens: int,
                   tokenizer: Callable[[str], List[str]]) -> List[ThreadRecord]:
    """Threads satisfying both minimums (see filter_threads_with_report)"""
    kept, _ = filter_threads_with_report(threads, min_replies, min_tokens, tokenizer)
    return kept


def split(examples: Sequence, val_fraction: float, seed: int) -> Tuple[list, list]:
    """
    Deterministic shuffled train/validation partition.

    The validation part holds floor(val_fraction * N) examples.
    """
    if not 0 <= val_fraction < 1:
        raise ValueError(f"val_fraction must be in [0, 1), got {val_fraction}")
    examples = list(examples)
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(len(examples))
    n_val = int(np.floor(val_fraction * len(examples)))
    val = [examples[i] for i in order[:n_val]]
    train = [examples[i] for i in order[n_val:]]
    return train, val


def class_distribution(examples: Sequence[LabeledTweet]) -> ClassDistribution:
    """Per-label counts and fractions (all zero for an empty list)"""
    counts = {label: 0 for label in SentimentLabel}
    for example in examples:
        counts[SentimentLabel(example.label)] += 1
    total = sum(counts.values())
    fractions = {label: (counts[label] / total if total else 0.0) for label in SentimentLabel}
    return ClassDistribution(counts=counts, fractions=fractions)


def thread_distribution(threads: Sequence[ThreadRecord]) -> ClassDistribution:
    """Distribution of gold labels over labeled threads"""
    labeled = [
        LabeledTweet(id=t.source_id, text=t.source_text or '-', label=t.gold_label)
        for t in threads if t.gold_label is not None
    ]
    return class_distribution(labeled)


def class_weights(dist: ClassDistribution) -> ClassWeights:
    """Inverted class frequencies normalised to mean 1: N / (C * n_c)"""
    missing = [label.label_name for label in SentimentLabel if dist.counts[label] <= 0]
    if missing:
        raise DataError(f"class weights undefined, no examples for: {', '.join(missing)}")
    total = dist.total
    weights = {label: total / (NUM_CLASSES * dist.counts[label]) for label in SentimentLabel}
    return ClassWeights(weights=weights)
