import hashlib
import io
import json

import pytest

from app.cli import main
from config import Config
from tests.conftest import FIXTURES_DIR

FIXTURE_CONFIG = str(FIXTURES_DIR / 'config.json')


# --- Fixtures --- #

def run_cli(*argv):
    stdout, stderr = io.StringIO(), io.StringIO()
    code = main(list(argv), stdout=stdout, stderr=stderr)
    return code, stdout.getvalue(), stderr.getvalue()


@pytest.fixture(autouse=True)
def _no_default_config(monkeypatch):
    monkeypatch.setattr(Config, 'DEFAULT_CONFIG_PATH', None)


@pytest.fixture(scope='module')
def stage1_dir(tmp_path_factory):
    out_dir = tmp_path_factory.mktemp('stage1')
    code, _, stderr = run_cli('train-base', '--config', FIXTURE_CONFIG, '--out', str(out_dir),
                              '--set', 'max_epochs=3')
    assert code == 0, stderr
    return out_dir


@pytest.fixture(scope='module')
def stage2_dir(tmp_path_factory):
    out_dir = tmp_path_factory.mktemp('stage2')
    code, _, stderr = run_cli('train-reply', '--config', FIXTURE_CONFIG, '--out', str(out_dir),
                              '--set', f'autolabeled_corpus={FIXTURES_DIR / "labeled_tweets.jsonl"}',
                              '--set', 'max_epochs=2')
    assert code == 0, stderr
    return out_dir


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --- train-base --- #

def test_train_base_writes_checkpoint_and_history(stage1_dir):
    assert (stage1_dir / 'stage1_bilstm.ckpt').exists()
    history = json.loads((stage1_dir / 'stage1_history.json').read_text(encoding='utf-8'))
    assert len(history['epochs']) == 3
    resolved = json.loads((stage1_dir / 'resolved_config.json').read_text(encoding='utf-8'))
    assert resolved['max_epochs'] == 3


def test_train_base_is_reproducible(stage1_dir, tmp_path):
    code, _, _ = run_cli('train-base', '--config', FIXTURE_CONFIG, '--out', str(tmp_path),
                         '--set', 'max_epochs=3')
    assert code == 0
    name = 'stage1_history.json'
    assert (tmp_path / name).read_bytes() == (stage1_dir / name).read_bytes()


def test_missing_labeled_corpus_is_a_config_error(tmp_path):
    code, _, stderr = run_cli('train-base', '--out', str(tmp_path))
    assert code == 1
    assert 'labeled_corpus' in stderr


def test_default_config_path_from_environment(monkeypatch, tmp_path):
    monkeypatch.setattr(Config, 'DEFAULT_CONFIG_PATH', FIXTURE_CONFIG)
    code, _, stderr = run_cli('train-base', '--out', str(tmp_path), '--set', 'max_epochs=1')
    assert code == 0, stderr
    assert (tmp_path / 'stage1_bilstm.ckpt').exists()


# --- autolabel --- #

def test_autolabel_excludes_short_threads_and_echoes_overrides(stage1_dir, tmp_path):
    inputs = [FIXTURES_DIR / 'threads.jsonl', stage1_dir / 'stage1_bilstm.ckpt']
    before = [_digest(path) for path in inputs]

    code, stdout, stderr = run_cli('autolabel', '--config', FIXTURE_CONFIG, '--out', str(tmp_path),
                                   '--set', f'checkpoint={stage1_dir / "stage1_bilstm.ckpt"}',
                                   '--set', 'neutral_fraction=0.9')
    assert code == 0, stderr
    assert 'auto-labeled 10 threads, excluded 1' in stdout

    summary = json.loads((tmp_path / 'autolabel_distribution.json').read_text(encoding='utf-8'))
    assert summary['thresholds']['neutral_fraction'] == 0.9
    assert summary['filter']['excluded_ids'] == ['s11']
    resolved = json.loads((tmp_path / 'resolved_config.json').read_text(encoding='utf-8'))
    assert resolved['neutral_fraction'] == 0.9

    records = [json.loads(line) for line in (tmp_path / 'autolabeled.jsonl').read_text(encoding='utf-8').splitlines()]
    assert len(records) == 10
    assert all(record['label'] in ('negative', 'neutral', 'positive') for record in records)
    assert [_digest(path) for path in inputs] == before


def test_autolabel_without_checkpoint(tmp_path):
    code, _, stderr = run_cli('autolabel', '--config', FIXTURE_CONFIG, '--out', str(tmp_path))
    assert code == 1
    assert 'checkpoint' in stderr


# --- train-reply and evaluate --- #

def test_train_reply_writes_both_architectures(stage2_dir):
    for name in ('stage2_bilstm.ckpt', 'stage2_cnn.ckpt', 'stage2_bilstm_history.json', 'stage2_cnn_history.json'):
        assert (stage2_dir / name).exists(), name


def test_evaluate_ensemble(stage2_dir, tmp_path):
    code, stdout, stderr = run_cli('evaluate', '--out', str(tmp_path),
                                   '--checkpoint', str(stage2_dir / 'stage2_bilstm.ckpt'),
                                   '--checkpoint-b', str(stage2_dir / 'stage2_cnn.ckpt'),
                                   '--data', str(FIXTURES_DIR / 'gold_threads.jsonl'))
    assert code == 0, stderr
    assert stdout.startswith('ensemble: accuracy=')
    payload = json.loads((tmp_path / 'metrics_ensemble.json').read_text(encoding='utf-8'))
    assert payload['system'] == 'ensemble'
    assert payload['metrics']['support'] == 3
    assert (tmp_path / 'confusion_ensemble.csv').exists()


def test_evaluate_direct_baseline(stage1_dir, tmp_path):
    code, _, stderr = run_cli('evaluate', '--out', str(tmp_path), '--direct-baseline',
                              '--checkpoint', str(stage1_dir / 'stage1_bilstm.ckpt'),
                              '--data', str(FIXTURES_DIR / 'gold_threads.jsonl'))
    assert code == 0, stderr
    payload = json.loads((tmp_path / 'metrics_direct_baseline.json').read_text(encoding='utf-8'))
    assert payload['system'] == 'direct_baseline'


def test_evaluate_on_labeled_corpus(stage1_dir, tmp_path):
    code, stdout, _ = run_cli('evaluate', '--out', str(tmp_path),
                              '--checkpoint', str(stage1_dir / 'stage1_bilstm.ckpt'),
                              '--data', str(FIXTURES_DIR / 'labeled_tweets.jsonl'))
    assert code == 0
    assert stdout.startswith('bilstm:')


def test_evaluate_threads_without_gold_labels(stage1_dir, tmp_path):
    code, _, stderr = run_cli('evaluate', '--out', str(tmp_path),
                              '--checkpoint', str(stage1_dir / 'stage1_bilstm.ckpt'),
                              '--data', str(FIXTURES_DIR / 'threads.jsonl'))
    assert code == 2
    assert 'no gold label' in stderr


# --- predict --- #

def test_predict_single_text(stage1_dir, tmp_path):
    code, stdout, _ = run_cli('predict', '--out', str(tmp_path),
                              '--checkpoint', str(stage1_dir / 'stage1_bilstm.ckpt'), '--text', 'I love this')
    assert code == 0
    lines = stdout.splitlines()
    assert len(lines) == 1
    label, *probs = lines[0].split()
    assert label in ('negative', 'neutral', 'positive')
    assert len(probs) == 3
    assert sum(float(p) for p in probs) == pytest.approx(1.0, abs=1e-4)


def test_predict_file(stage1_dir, tmp_path):
    texts = tmp_path / 'texts.txt'
    texts.write_text("so happy\nthis is awful\n\nthe meeting is at noon\n", encoding='utf-8')
    code, stdout, _ = run_cli('predict', '--out', str(tmp_path / 'out'),
                              '--checkpoint', str(stage1_dir / 'stage1_bilstm.ckpt'), '--file', str(texts))
    assert code == 0
    assert len(stdout.splitlines()) == 3


def test_predict_empty_file(stage1_dir, tmp_path):
    empty = tmp_path / 'empty.txt'
    empty.write_text('', encoding='utf-8')
    code, stdout, _ = run_cli('predict', '--out', str(tmp_path / 'out'),
                              '--checkpoint', str(stage1_dir / 'stage1_bilstm.ckpt'), '--file', str(empty))
    assert code == 0
    assert stdout == ''


def test_predict_with_corrupt_checkpoint(tmp_path):
    broken = tmp_path / 'broken.ckpt'
    broken.write_bytes(b'garbage')
    code, _, stderr = run_cli('predict', '--out', str(tmp_path / 'out'), '--checkpoint', str(broken),
                              '--text', 'hello')
    assert code == 2
    assert 'magic' in stderr


# --- Usage errors --- #

def test_unknown_setting(tmp_path):
    code, _, stderr = run_cli('train-base', '--config', FIXTURE_CONFIG, '--out', str(tmp_path),
                              '--set', 'learning_rat=0.1')
    assert code == 1
    assert "unknown setting 'learning_rat'" in stderr


def test_invalid_setting_value(tmp_path):
    code, _, stderr = run_cli('train-base', '--config', FIXTURE_CONFIG, '--out', str(tmp_path),
                              '--set', 'dropout=1.5')
    assert code == 1
    assert 'dropout' in stderr


def test_missing_command_and_bad_flags():
    assert run_cli()[0] == 1
    assert run_cli('predict', '--text', 'a', '--file', 'b')[0] == 1
    assert run_cli('train-base', '--seed', 'abc')[0] == 1


def test_help_exits_cleanly(capsys):
    assert run_cli('--help')[0] == 0
    assert 'train-base' in capsys.readouterr().out
