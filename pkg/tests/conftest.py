"""
Shared fixtures: synthetic corpora, tiny model configs and a keyword classifier.
"""
import json
from pathlib import Path

import numpy as np
import pytest

from app.classifiers import BiLstmConfig, CnnConfig
from app.metrics import reset_metrics
from app.records import LabeledTweet, SentimentLabel, ThreadRecord
from app.text_processing import build_vocabulary, tokenize

FIXTURES_DIR = Path(__file__).resolve().parent.parent / 'fixtures'

POSITIVE_WORDS = ['love', 'great', 'happy', 'wonderful', 'awesome', 'amazing', 'fantastic', 'excellent']
NEGATIVE_WORDS = ['hate', 'awful', 'terrible', 'sad', 'horrible', 'worst', 'angry', 'disgusting']
NEUTRAL_WORDS = ['meeting', 'schedule', 'report', 'tuesday', 'weather', 'update', 'office', 'station']

WORDS_BY_LABEL = {
    SentimentLabel.POSITIVE: POSITIVE_WORDS,
    SentimentLabel.NEGATIVE: NEGATIVE_WORDS,
    SentimentLabel.NEUTRAL: NEUTRAL_WORDS,
}


@pytest.fixture(autouse=True)
def _fresh_metrics():
    reset_metrics()
    yield


@pytest.fixture
def fixtures_dir():
    return FIXTURES_DIR


def write_jsonl(path, records):
    with open(path, 'w', encoding='utf-8') as handle:
        for record in records:
            handle.write(json.dumps(record) + '\n')
    return path


# --- Keyword classifier --- #

class KeywordClassifier:
    """Deterministic stand-in classifier: one-hot by keyword lists, neutral otherwise"""

    def __init__(self, fail_on=None):
        self.seen = []
        self.fail_on = fail_on

    def label_of(self, text):
        tokens = set(tokenize(text))
        if self.fail_on and self.fail_on in tokens:
            raise RuntimeError(f"cannot classify '{text}'")
        if tokens & set(POSITIVE_WORDS):
            return SentimentLabel.POSITIVE
        if tokens & set(NEGATIVE_WORDS):
            return SentimentLabel.NEGATIVE
        return SentimentLabel.NEUTRAL

    def predict_texts(self, texts):
        out = np.zeros((len(texts), 3))
        for row, text in enumerate(texts):
            self.seen.append(text)
            out[row, self.label_of(text)] = 1.0
        return out

    def predict_labels(self, texts):
        return [SentimentLabel(int(np.argmax(p))) for p in self.predict_texts(texts)]


@pytest.fixture
def keyword_classifier():
    return KeywordClassifier()


def make_thread(source_id, source_text, reply_labels, gold_label=None):
    """Thread whose replies carry one keyword of the given labels each"""
    replies = []
    for index, label in enumerate(reply_labels):
        words = WORDS_BY_LABEL[label]
        replies.append(f"that is {words[index % len(words)]}")
    return ThreadRecord(source_id=source_id, source_text=source_text, replies=replies, gold_label=gold_label)


# --- Small corpora and models --- #

@pytest.fixture
def separable_tweets():
    """12 examples, 4 per class, separable by their words"""
    tweets = []
    for label in (SentimentLabel.NEGATIVE, SentimentLabel.NEUTRAL, SentimentLabel.POSITIVE):
        words = WORDS_BY_LABEL[label]
        for i in range(4):
            text = f"{words[i]} {words[i + 4]}"
            tweets.append(LabeledTweet(id=f"{label.label_name}{i}", text=text, label=label))
    return tweets


@pytest.fixture
def small_vocab(separable_tweets):
    return build_vocabulary((tokenize(t.text) for t in separable_tweets), 100)


@pytest.fixture
def tiny_bilstm_config(small_vocab):
    return BiLstmConfig(embed_dim=6, hidden_size=5, num_stacked_bilstm=2, dropout_p=0.0,
                        vocab_size=small_vocab.size)


@pytest.fixture
def tiny_cnn_config(small_vocab):
    return CnnConfig(embed_dim=6, filter_widths=[3, 4, 5], maps_per_width=4, dropout_p=0.0,
                     vocab_size=small_vocab.size)


# --- Pipeline corpora --- #

TINY_RUN_SETTINGS = {
    'seed': 13,
    'embed_dim': 16,
    'stage1_vocab_size': 500,
    'stage2_vocab_size': 500,
    'stage1_hidden_size': 12,
    'stage2_hidden_size': 12,
    'dropout': 0.1,
    'cnn_maps_per_width': 8,
    'stage1_learning_rate': 0.02,
    'stage1_weight_decay': 0.0,
    'stage2_learning_rate': 0.02,
    'stage2_weight_decay': 0.0,
    'batch_size': 8,
    'max_epochs': 25,
    'val_fraction': 0.1,
    'selection_rule': 'best_val_loss',
    'min_replies': 20,
}


def _labeled_records():
    records = []
    templates = {
        SentimentLabel.POSITIVE: "I {a} this, what a {b} day!",
        SentimentLabel.NEGATIVE: "This is {a}, such a {b} day :(",
        SentimentLabel.NEUTRAL: "The {a} {b} is at noon",
    }
    for label, template in templates.items():
        words = WORDS_BY_LABEL[label]
        for i in range(13):
            text = template.format(a=words[i % 8], b=words[(i + 3) % 8])
            records.append({'id': f"{label.label_name}-{i}", 'text': text, 'label': label.label_name})
    return records


def _reply_texts(label, count):
    words = WORDS_BY_LABEL[label]
    if label == SentimentLabel.NEUTRAL:
        return [f"the {words[i % 8]} {words[(i + 5) % 8]} is at noon" for i in range(count)]
    return [f"so {words[i % 8]}, {words[(i + 5) % 8]}!" for i in range(count)]


def write_inverse_corpus(directory):
    """
    Corpus where replies carry the opposite sentiment of the source:
    positive-worded sources draw negative replies and vice versa, neutral
    sources draw neutral replies. Gold threads follow the same pattern.

    Returns:
        Path of the run config file
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_jsonl(directory / 'labeled.jsonl', _labeled_records())

    opposite = {
        SentimentLabel.POSITIVE: SentimentLabel.NEGATIVE,
        SentimentLabel.NEGATIVE: SentimentLabel.POSITIVE,
        SentimentLabel.NEUTRAL: SentimentLabel.NEUTRAL,
    }
    threads, gold = [], []
    for label in (SentimentLabel.POSITIVE, SentimentLabel.NEGATIVE, SentimentLabel.NEUTRAL):
        words = WORDS_BY_LABEL[label]
        for i in range(4):
            threads.append({
                'source_id': f"{label.label_name}-src-{i}",
                'source_text': f"{words[i]} and {words[i + 4]} news today",
                'replies': _reply_texts(opposite[label], 20),
            })
        for i in range(2):
            gold.append({
                'source_id': f"{label.label_name}-gold-{i}",
                'source_text': f"{words[i + 2]} and {words[(i + 5) % 8]} news today",
                'replies': _reply_texts(opposite[label], 4),
                'gold_label': opposite[label].label_name,
            })
    write_jsonl(directory / 'threads.jsonl', threads)
    write_jsonl(directory / 'gold.jsonl', gold)

    config = dict(TINY_RUN_SETTINGS, labeled_corpus='labeled.jsonl', threads='threads.jsonl',
                  gold_threads='gold.jsonl')
    config_path = directory / 'config.json'
    config_path.write_text(json.dumps(config, indent=2), encoding='utf-8')
    return config_path
