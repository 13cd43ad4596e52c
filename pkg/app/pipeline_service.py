"""
Two-stage reply-sentiment pipeline.

This module provides:
- Stage 1: message-level BiLSTM trained on the labeled tweet corpus
- Stage 2: auto-labeling of source tweets from their replies, then training
  reply-sentiment classifiers on the automatic labels
- Evaluation of the proposed system, the ensemble and the direct baseline
  on gold-labeled threads, with a consolidated report
"""
import json
import logging
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from app.aggregation_service import AutoLabelResult, AutoLabelService
from app.checkpoint_service import load_checkpoint, save_checkpoint
from app.classifiers import EnsembleClassifier, SentenceClassifier, predict_label
from app.corpus import (
    FilterReport,
    class_distribution,
    filter_threads_with_report,
    load_labeled_corpus,
    load_threads,
    save_labeled_corpus,
    split,
    thread_distribution,
)
from app.error_handling import DataError, StageError, generate_run_id, run_context, track_performance
from app.evaluation_service import (
    ConfusionMatrix,
    EvaluationService,
    Metrics,
    error_analysis,
    render_confusion,
    thread_gold_pairs,
    write_metrics,
)
from app.metrics import get_metrics_summary
from app.records import LabeledTweet
from app.run_config import RunConfig, write_resolved_config
from app.text_processing import EmbeddingMatrix, Vocabulary, build_vocabulary, init_embeddings, load_embeddings, tokenize
from app.training_service import TrainingHistory, train

logger = logging.getLogger(__name__)

STAGE1_TRAIN = 'stage1_train'
STAGE2_AUTOLABEL = 'stage2_autolabel'
STAGE2_TRAIN = 'stage2_train'
EVALUATE = 'evaluate'

STAGE1_CHECKPOINT = 'stage1_bilstm.ckpt'
AUTOLABELED_CORPUS = 'autolabeled.jsonl'

SYSTEM_PROPOSED = 'proposed'
SYSTEM_ENSEMBLE = 'ensemble'
SYSTEM_DIRECT = 'direct_baseline'


def write_json(path, payload):
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write('\n')


def _peek_record(path) -> dict:
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            for line in handle:
                if line.strip():
                    record = json.loads(line)
                    return record if isinstance(record, dict) else {}
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}")
    except json.JSONDecodeError:
        return {}
    return {}


def load_eval_data(path) -> Tuple[List[str], List[int]]:
    """Texts and gold labels from either a gold thread file or a labeled corpus"""
    if 'source_id' in _peek_record(path):
        texts, gold = thread_gold_pairs(load_threads(path))
    else:
        tweets = load_labeled_corpus(path)
        texts, gold = [t.text for t in tweets], [int(t.label) for t in tweets]
    if not texts:
        raise DataError(f"no labeled examples in {path}")
    return texts, gold


class SystemResult:
    """Metrics and confusion matrix of one evaluated system"""

    def __init__(self, name: str, metrics: Metrics, confusion: ConfusionMatrix):
        self.name = name
        self.metrics = metrics
        self.confusion = confusion

    def to_dict(self):
        return {'metrics': self.metrics.to_dict(), 'confusion_matrix': self.confusion.to_dict()}


class PipelineService:
    """
    Runs the pipeline stages against one RunConfig.

    Every stage writes its artifacts into the output directory before the
    next stage starts; a failing stage is reported as StageError with its id.
    """

    def __init__(self, config: RunConfig):
        self.logger = logger
        self.config = config
        self.out_dir = Path(config.out_dir)
        self.evaluator = EvaluationService()

    @contextmanager
    def stage(self, name: str):
        with run_context(stage=name):
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self.logger.info(f"Stage {name} started")
            try:
                yield
            except StageError:
                raise
            except Exception as e:
                raise StageError(name, e) from e
            self.logger.info(f"Stage {name} finished")

    def prepare_output(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        write_resolved_config(self.config, self.out_dir)

    # ------------------------------------------------------------------
    # Model construction
    # ------------------------------------------------------------------

    def _embeddings(self, vocab: Vocabulary, seed: int) -> EmbeddingMatrix:
        if self.config.embeddings_path:
            return load_embeddings(self.config.embeddings_path, self.config.embed_dim, vocab, seed)
        return init_embeddings(vocab, self.config.embed_dim, seed)

    def fit_classifier(self, architecture: str, stage: str, train_data: Sequence[LabeledTweet],
                       val_data: Sequence[LabeledTweet]) -> Tuple[SentenceClassifier, TrainingHistory]:
        """Vocabulary, embeddings and training for one classifier of one stage"""
        vocab_size = getattr(self.config, f'{stage}_vocab_size')
        vocab = build_vocabulary((tokenize(example.text) for example in train_data), vocab_size)
        embeddings = self._embeddings(vocab, self.config.sub_seed(f'{stage}_{architecture}_embeddings'))
        if architecture == 'cnn':
            model_config = self.config.cnn_config()
        else:
            model_config = self.config.bilstm_config(stage)
        model_config = model_config.model_copy(update={'vocab_size': vocab.size})
        train_config = self.config.train_config(stage)
        return train(model_config, train_config, train_data, val_data, vocab=vocab, embeddings=embeddings)

    def _write_history(self, history: TrainingHistory, name: str):
        write_json(self.out_dir / f'{name}_history.json', history.to_dict())

    # ------------------------------------------------------------------
    # Stages
    # ------------------------------------------------------------------

    @track_performance
    def train_base(self) -> Tuple[SentenceClassifier, Dict]:
        """Stage 1: train the message-level classifier and persist it"""
        with self.stage(STAGE1_TRAIN):
            self.config.require('labeled_corpus')
            tweets = load_labeled_corpus(self.config.labeled_corpus)
            train_data, val_data = split(tweets, self.config.val_fraction, self.config.sub_seed('stage1_split'))
            model, history = self.fit_classifier('bilstm', 'stage1', train_data, val_data)

            save_checkpoint(model, self.out_dir / STAGE1_CHECKPOINT)
            self._write_history(history, 'stage1')

            summary = {
                'train_size': len(train_data),
                'val_size': len(val_data),
                'train_distribution': class_distribution(train_data).to_dict(),
                'selected_epoch': history.selected_epoch,
                'validation': None,
                'labeled_test': None,
            }
            if val_data:
                metrics, _ = self.evaluator.evaluate(model, val_data)
                summary['validation'] = metrics.to_dict()
            if self.config.labeled_test:
                test = load_labeled_corpus(self.config.labeled_test)
                if test:
                    metrics, cm = self.evaluator.evaluate(model, test)
                    summary['labeled_test'] = metrics.to_dict()
                    self._write_system(SystemResult('stage1_labeled_test', metrics, cm))
            write_json(self.out_dir / 'stage1_metrics.json', summary)
        return model, summary

    @track_performance
    def autolabel(self, classifier=None) -> Tuple[AutoLabelResult, FilterReport]:
        """Stage 2a: label source tweets from their replies' predicted sentiment"""
        with self.stage(STAGE2_AUTOLABEL):
            if classifier is None:
                self.config.require('checkpoint')
                classifier = load_checkpoint(self.config.checkpoint)
            self.config.require('threads')
            threads = load_threads(self.config.threads)
            kept, report = filter_threads_with_report(
                threads, self.config.min_replies, self.config.min_tokens, tokenize
            )
            if report.dropped_ids:
                self.logger.info(f"Excluded {len(report.dropped_ids)} threads below the reply/token minimums")

            service = AutoLabelService(classifier, self.config.thresholds(), self.config.workers)
            result = service.label_threads(kept)
            save_labeled_corpus(result.examples, self.out_dir / AUTOLABELED_CORPUS)
            write_json(self.out_dir / 'autolabel_distribution.json', self._autolabel_summary(result, report))
        return result, report

    def _autolabel_summary(self, result: AutoLabelResult, report: FilterReport) -> Dict:
        return {
            'thresholds': self.config.thresholds().model_dump(),
            'filter': {**report.to_dict(), 'excluded_ids': list(report.dropped_ids)},
            'distribution': result.distribution().to_dict(),
            'reply_labels': result.reply_distribution(),
            'skipped_empty_source': list(result.skipped_ids),
        }

    @track_performance
    def train_reply(self, examples: Optional[Sequence[LabeledTweet]] = None) -> Dict[str, SentenceClassifier]:
        """Stage 2b: train the reply-sentiment classifiers on automatic labels"""
        with self.stage(STAGE2_TRAIN):
            if examples is None:
                self.config.require('autolabeled_corpus')
                examples = load_labeled_corpus(self.config.autolabeled_corpus)
            train_data, val_data = split(examples, self.config.val_fraction, self.config.sub_seed('stage2_split'))
            models = {}
            for architecture in self.config.stage2_models:
                model, history = self.fit_classifier(architecture, 'stage2', train_data, val_data)
                save_checkpoint(model, self.out_dir / f'stage2_{architecture}.ckpt')
                self._write_history(history, f'stage2_{architecture}')
                models[architecture] = model
        return models

    # ------------------------------------------------------------------
    # Evaluation
    # ------------------------------------------------------------------

    def _write_system(self, result: SystemResult):
        write_metrics(result.metrics, result.confusion, self.out_dir / f'metrics_{result.name}.json', result.name)
        render_confusion(result.confusion, self.out_dir / f'confusion_{result.name}', svg=self.config.render_svg)

    def score_system(self, name: str, model, texts: Sequence[str], gold: Sequence[int]) -> SystemResult:
        metrics, cm = self.evaluator.score(model, texts, gold)
        result = SystemResult(name, metrics, cm)
        self._write_system(result)
        return result

    @track_performance
    def evaluate_checkpoints(self, direct: bool = False) -> SystemResult:
        """
        Evaluate `checkpoint` (or the ensemble with `checkpoint_b`) on `eval_data`.

        With direct=True the checkpoint is scored as the direct baseline.
        """
        with self.stage(EVALUATE):
            self.config.require('checkpoint', 'eval_data')
            model = load_checkpoint(self.config.checkpoint)
            name = SYSTEM_DIRECT if direct else model.architecture
            if self.config.checkpoint_b and not direct:
                model = EnsembleClassifier(model, load_checkpoint(self.config.checkpoint_b))
                name = SYSTEM_ENSEMBLE
            texts, gold = load_eval_data(self.config.eval_data)
            result = self.score_system(name, model, texts, gold)
            write_json(self.out_dir / 'report.json', {
                'generated_at': _timestamp(),
                'config': self.config.resolved(),
                'systems': {name: result.to_dict()},
                'error_analysis': {name: error_analysis(result.confusion)},
            })
        return result

    def predict(self, texts: Sequence[str]) -> List[str]:
        """One "label p_neg p_neu p_pos" line per input text"""
        self.config.require('checkpoint')
        model = load_checkpoint(self.config.checkpoint)
        if not texts:
            return []
        lines = []
        for p in model.predict_texts(list(texts)):
            lines.append(f"{predict_label(p).label_name} {p[0]:.6f} {p[1]:.6f} {p[2]:.6f}")
        return lines

    # ------------------------------------------------------------------
    # End to end
    # ------------------------------------------------------------------

    def two_stage_run(self) -> Dict:
        """
        Stage-1 training, auto-labeling, stage-2 training and evaluation of
        the proposed, ensemble and direct-baseline systems.

        Returns:
            The report, also written to report.json
        """
        self.config.require('labeled_corpus', 'threads', 'gold_threads')
        self.prepare_output()

        stage1_model, stage1_summary = self.train_base()
        autolabel_result, filter_report = self.autolabel(stage1_model)
        stage2_models = self.train_reply(autolabel_result.examples)

        with self.stage(EVALUATE):
            gold_threads = load_threads(self.config.gold_threads)
            texts, gold = thread_gold_pairs(gold_threads)
            if not texts:
                raise DataError(f"no gold threads in {self.config.gold_threads}")

            stage2_results = {
                architecture: self.score_system(f'stage2_{architecture}', model, texts, gold)
                for architecture, model in stage2_models.items()
            }
            proposed_arch = 'bilstm' if 'bilstm' in stage2_models else next(iter(stage2_models))
            systems = {SYSTEM_PROPOSED: self.score_system(SYSTEM_PROPOSED, stage2_models[proposed_arch], texts, gold)}
            if self.config.ensemble and len(stage2_models) >= 2:
                first, second = list(stage2_models.values())[:2]
                systems[SYSTEM_ENSEMBLE] = self.score_system(
                    SYSTEM_ENSEMBLE, EnsembleClassifier(first, second), texts, gold
                )
            if self.config.direct_baseline:
                systems[SYSTEM_DIRECT] = self.score_system(SYSTEM_DIRECT, stage1_model, texts, gold)

            report = {
                'generated_at': _timestamp(),
                'config': self.config.resolved(),
                'stage1': stage1_summary,
                'autolabel': self._autolabel_summary(autolabel_result, filter_report),
                'stage2': {
                    architecture: {
                        'selected_epoch': model.metadata.get('selected_epoch'),
                        'train_size': model.metadata.get('train_size'),
                        'val_size': model.metadata.get('val_size'),
                        'gold': stage2_results[architecture].to_dict(),
                    }
                    for architecture, model in stage2_models.items()
                },
                'gold_distribution': thread_distribution(gold_threads).to_dict(),
                'proposed_architecture': proposed_arch,
                'systems': {name: result.to_dict() for name, result in systems.items()},
                'comparison': self._comparison(systems),
                'error_analysis': {name: error_analysis(result.confusion) for name, result in systems.items()},
            }
            write_json(self.out_dir / 'report.json', report)

        write_json(self.out_dir / 'run_metrics.json', get_metrics_summary())
        self.logger.info(f"Report written to {self.out_dir / 'report.json'}")
        return report

    def _comparison(self, systems: Dict[str, SystemResult]) -> Dict:
        """Differences against the direct baseline, in percentage points"""
        direct = systems.get(SYSTEM_DIRECT)
        if direct is None:
            return {}
        comparison = {}
        for name, result in systems.items():
            if name == SYSTEM_DIRECT:
                continue
            comparison[f'{name}_minus_direct'] = {
                'accuracy_points': 100 * (result.metrics.accuracy - direct.metrics.accuracy),
                'eq1_f1_points': 100 * (result.metrics.eq1_f1 - direct.metrics.eq1_f1),
                'eq1_precision_points': 100 * (result.metrics.eq1_precision - direct.metrics.eq1_precision),
                'eq1_recall_points': 100 * (result.metrics.eq1_recall - direct.metrics.eq1_recall),
            }
        return comparison


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec='seconds')


def two_stage_run(config: RunConfig) -> Dict:
    """Run the full pipeline under a fresh run id"""
    with run_context(run_id=generate_run_id()):
        return PipelineService(config).two_stage_run()
