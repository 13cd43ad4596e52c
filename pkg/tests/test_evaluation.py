import json

import numpy as np
import pytest

from app.error_handling import DataError
from app.evaluation_service import (
    ConfusionMatrix,
    direct_baseline,
    eq1,
    error_analysis,
    evaluate,
    format_confusion_table,
    metrics_from_confusion,
    metrics_from_pairs,
    read_confusion_csv,
    render_confusion,
    write_metrics,
)
from app.records import LabeledTweet, SentimentLabel, ThreadRecord

NEG, NEU, POS = SentimentLabel.NEGATIVE, SentimentLabel.NEUTRAL, SentimentLabel.POSITIVE


# --- Fixtures --- #

@pytest.fixture
def reference_matrix():
    return ConfusionMatrix(np.array([[3, 1, 0], [1, 2, 1], [0, 1, 3]]))


def _pairs_from(cm):
    gold, predicted = [], []
    for i in range(3):
        for j in range(3):
            gold += [i] * int(cm.counts[i, j])
            predicted += [j] * int(cm.counts[i, j])
    return gold, predicted


# --- Metrics --- #

def test_reference_matrix_metrics(reference_matrix):
    metrics = metrics_from_confusion(reference_matrix)
    assert metrics.accuracy == pytest.approx(0.6667, abs=1e-4)
    assert metrics.precision['positive'] == pytest.approx(0.75)
    assert metrics.recall['negative'] == pytest.approx(0.75)
    assert metrics.eq1_f1 == pytest.approx(0.75)
    assert metrics.support == 12


def test_perfect_predictions():
    labels = [0, 1, 2, 2, 0, 1]
    metrics = metrics_from_confusion(ConfusionMatrix.from_pairs(labels, labels))
    assert metrics.accuracy == 1.0 and metrics.eq1_f1 == 1.0


def test_never_predicted_class_has_zero_precision():
    metrics = metrics_from_confusion(ConfusionMatrix.from_pairs([0, 1, 2], [1, 1, 1]))
    assert metrics.precision['positive'] == 0.0
    assert metrics.f1['positive'] == 0.0
    assert metrics.eq1_f1 == 0.0


def test_eq1_examples():
    assert eq1(0.8, 0.6) == pytest.approx(0.7)
    assert eq1(0.3, 0.9) == eq1(0.9, 0.3)
    assert eq1(1.0, 0.0) == 0.5


def test_marginals_match_label_counts(reference_matrix):
    gold, predicted = _pairs_from(reference_matrix)
    cm = ConfusionMatrix.from_pairs(gold, predicted)
    assert cm == reference_matrix
    assert cm.gold_counts().tolist() == [gold.count(c) for c in range(3)]
    assert cm.predicted_counts().tolist() == [predicted.count(c) for c in range(3)]
    assert cm.total == len(gold)


def test_streaming_metrics_equal_matrix_metrics(reference_matrix):
    gold, predicted = _pairs_from(reference_matrix)
    assert metrics_from_pairs(gold, predicted) == metrics_from_confusion(reference_matrix)


def test_neutral_hits_do_not_change_eq1_scores(reference_matrix):
    counts = reference_matrix.counts.copy()
    counts[1, 1] = 0
    original = metrics_from_confusion(reference_matrix)
    reduced = metrics_from_confusion(ConfusionMatrix(counts))
    assert reduced.eq1_f1 == pytest.approx(original.eq1_f1)
    assert reduced.eq1_precision == pytest.approx(original.eq1_precision)


def test_confusion_matrix_validation():
    with pytest.raises(DataError):
        ConfusionMatrix(np.zeros((2, 2)))
    with pytest.raises(DataError):
        ConfusionMatrix.from_pairs([0, 1], [0])


def test_error_analysis(reference_matrix):
    analysis = error_analysis(reference_matrix)
    assert analysis['neutral']['errors'] == 2
    assert analysis['neutral']['share_of_errors'] == pytest.approx(0.5)
    assert sum(entry['errors'] for entry in analysis.values()) == 4


# --- Evaluating models --- #

def test_evaluate_with_keyword_model(keyword_classifier):
    data = [
        LabeledTweet(id='1', text='love it', label=POS),
        LabeledTweet(id='2', text='hate it', label=NEG),
        LabeledTweet(id='3', text='meeting at noon', label=NEU),
        LabeledTweet(id='4', text='awful but great', label=NEG),
    ]
    metrics, cm = evaluate(keyword_classifier, data)
    assert metrics.accuracy == pytest.approx(0.75)
    assert cm.counts[NEG, POS] == 1


def test_evaluate_empty_data_is_rejected(keyword_classifier):
    with pytest.raises(DataError):
        evaluate(keyword_classifier, [])


def test_direct_baseline_scores_source_text_against_reply_gold(keyword_classifier):
    same = [
        ThreadRecord(source_id='a', source_text='love this', replies=[], gold_label=POS),
        ThreadRecord(source_id='b', source_text='hate this', replies=[], gold_label=NEG),
    ]
    baseline, _ = direct_baseline(keyword_classifier, same)
    as_tweets = [LabeledTweet(id=t.source_id, text=t.source_text, label=t.gold_label) for t in same]
    assert baseline == evaluate(keyword_classifier, as_tweets)[0]
    assert baseline.accuracy == 1.0

    inverted = [t.model_copy(update={'gold_label': NEG if t.gold_label == POS else POS}) for t in same]
    flipped, _ = direct_baseline(keyword_classifier, inverted)
    assert flipped.accuracy == 0.0


def test_direct_baseline_needs_gold_labels(keyword_classifier):
    with pytest.raises(DataError, match='no gold label'):
        direct_baseline(keyword_classifier, [ThreadRecord(source_id='x', source_text='hi', replies=[])])


# --- Rendering --- #

def test_render_confusion_files(tmp_path, reference_matrix):
    written = render_confusion(reference_matrix, tmp_path / 'confusion', svg=True)
    assert [p.suffix for p in written] == ['.txt', '.csv', '.svg']

    table = (tmp_path / 'confusion.txt').read_text(encoding='utf-8').splitlines()
    assert table[0].split()[-3:] == ['negative', 'neutral', 'positive']
    assert table[1].split() == ['negative', '3', '1', '0']

    header = (tmp_path / 'confusion.csv').read_text(encoding='utf-8').splitlines()[0]
    assert header == 'gold,negative,neutral,positive'
    assert read_confusion_csv(tmp_path / 'confusion.csv') == reference_matrix
    assert (tmp_path / 'confusion.svg').read_text(encoding='utf-8').startswith('<svg')


def test_render_without_svg(tmp_path, reference_matrix):
    written = render_confusion(reference_matrix, tmp_path / 'cm.txt')
    assert sorted(p.name for p in written) == ['cm.csv', 'cm.txt']


def test_format_table_is_aligned(reference_matrix):
    lines = format_confusion_table(reference_matrix).splitlines()
    assert len({len(line) for line in lines}) == 1


def test_write_metrics(tmp_path, reference_matrix):
    path = tmp_path / 'metrics.json'
    write_metrics(metrics_from_confusion(reference_matrix), reference_matrix, path, system='proposed')
    payload = json.loads(path.read_text(encoding='utf-8'))
    assert payload['system'] == 'proposed'
    assert payload['metrics']['eq1_f1'] == pytest.approx(0.75)
    assert payload['confusion_matrix']['rows_gold_columns_predicted'] == [[3, 1, 0], [1, 2, 1], [0, 1, 3]]
