"""
Mini-batch training of sentence classifiers.

This module provides:
- TrainConfig with the per-stage optimiser defaults
- TrainingHistory (per-epoch train loss, validation loss, validation eq1_f1)
- TrainingService: class-weighted Adam training with checkpoint selection
"""
import logging
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app import autograd as ag
from app.autograd import RngStream, derive_seed
from app.classifiers import BiLstmConfig, CnnConfig, SentenceClassifier, build_classifier
from app.corpus import class_distribution, class_weights
from app.error_handling import DataError, track_performance
from app.evaluation_service import ConfusionMatrix, metrics_from_confusion
from app.metrics import record_epoch, record_examples
from app.optim import AdamState, adam_step
from app.records import LabeledTweet
from app.text_processing import EmbeddingMatrix, Vocabulary, build_vocabulary, tokenize

logger = logging.getLogger(__name__)

SELECTION_RULES = ('best_val_eq1_f1', 'best_val_loss', 'last')

STAGE_DEFAULTS = {
    'stage1': {'learning_rate': 1e-4, 'weight_decay': 1e-5},
    'stage2': {'learning_rate': 9e-5, 'weight_decay': 1e-4},
}


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    stage: str = 'stage1'
    learning_rate: float = Field(1e-4, ge=0)
    weight_decay: float = Field(1e-5, ge=0)
    batch_size: int = Field(32, gt=0)
    max_epochs: int = Field(30, gt=0)
    seed: int = 13
    selection_rule: Literal['best_val_eq1_f1', 'best_val_loss', 'last'] = 'best_val_eq1_f1'

    @classmethod
    def for_stage(cls, stage: str, **overrides) -> 'TrainConfig':
        """Config with the optimiser defaults of the given stage"""
        values = dict(STAGE_DEFAULTS.get(stage, {}))
        values.update(overrides)
        return cls(stage=stage, **values)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: Optional[float]
    val_eq1_f1: Optional[float]

    def to_dict(self):
        return {'epoch': self.epoch, 'train_loss': self.train_loss,
                'val_loss': self.val_loss, 'val_eq1_f1': self.val_eq1_f1}


@dataclass
class TrainingHistory:
    epochs: List[EpochRecord] = field(default_factory=list)
    selected_epoch: Optional[int] = None
    selection_rule: str = 'best_val_eq1_f1'

    def __len__(self):
        return len(self.epochs)

    @property
    def train_losses(self) -> List[float]:
        return [record.train_loss for record in self.epochs]

    def to_dict(self):
        return {
            'selection_rule': self.selection_rule,
            'selected_epoch': self.selected_epoch,
            'epochs': [record.to_dict() for record in self.epochs],
        }


def make_batches(lengths: Sequence[int], batch_size: int, rng: RngStream) -> List[np.ndarray]:
    """
    Shuffle, group examples of similar length, then shuffle the batch order.
    """
    order = rng.permutation(len(lengths))
    by_length = order[np.argsort(np.asarray(lengths)[order], kind='stable')]
    batches = [by_length[start:start + batch_size] for start in range(0, len(by_length), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


class TrainingService:
    """Class-weighted mini-batch Adam training"""

    def __init__(self):
        self.logger = logger

    def _epoch_loss(self, model: SentenceClassifier, sequences, targets, weights, batch_size) -> float:
        total = 0.0
        with ag.no_grad():
            for start in range(0, len(sequences), batch_size):
                chunk = sequences[start:start + batch_size]
                logits = model.batch_logits(chunk, training=False)
                loss = ag.weighted_cross_entropy(logits, targets[start:start + batch_size], weights)
                total += loss.item() * len(chunk)
        return total / len(sequences)

    def _validation(self, model, sequences, targets, weights, batch_size):
        if not sequences:
            return None, None
        val_loss = self._epoch_loss(model, sequences, targets, weights, batch_size)
        predicted = np.argmax(model.predict_proba(sequences, batch_size=batch_size), axis=1)
        val_f1 = metrics_from_confusion(ConfusionMatrix.from_pairs(targets, predicted)).eq1_f1
        return val_loss, val_f1

    @track_performance
    def fit(self, model: SentenceClassifier, train_config: TrainConfig, train_data: Sequence[LabeledTweet],
            val_data: Sequence[LabeledTweet] = ()) -> Tuple[SentenceClassifier, TrainingHistory]:
        """
        Train `model` in place and restore the parameters of the selected epoch.

        Raises:
            DataError: empty training data or a class absent from it
        """
        if not train_data:
            raise DataError("training data is empty")
        weights = class_weights(class_distribution(train_data))
        weight_array = weights.as_array()

        train_seqs = model.encode_texts([example.text for example in train_data])
        train_targets = np.array([int(example.label) for example in train_data], dtype=np.int64)
        val_seqs = model.encode_texts([example.text for example in val_data])
        val_targets = np.array([int(example.label) for example in val_data], dtype=np.int64)
        lengths = [len(seq) for seq in train_seqs]

        batch_rng = RngStream(derive_seed(train_config.seed, 'batches'))
        dropout_rng = RngStream(derive_seed(train_config.seed, 'dropout'))
        params = model.parameters()
        state = AdamState()

        rule = train_config.selection_rule if val_seqs else 'last'
        if rule != train_config.selection_rule:
            self.logger.warning("No validation data, selecting the last epoch")
        history = TrainingHistory(selection_rule=rule)
        best_score = None
        best_params = None

        self.logger.info(
            f"Training {model.architecture} ({train_config.stage}) on {len(train_seqs)} examples, "
            f"{len(val_seqs)} validation, lr={train_config.learning_rate} wd={train_config.weight_decay}"
        )
        for epoch in range(1, train_config.max_epochs + 1):
            running = 0.0
            for batch in make_batches(lengths, train_config.batch_size, batch_rng):
                logits = model.batch_logits([train_seqs[i] for i in batch], training=True, rng=dropout_rng)
                loss = ag.weighted_cross_entropy(logits, train_targets[batch], weight_array)
                ag.backward(loss)
                adam_step(params, state, train_config.learning_rate, train_config.weight_decay)
                running += loss.item() * len(batch)
            train_loss = running / len(train_seqs)

            val_loss, val_f1 = self._validation(model, val_seqs, val_targets, weight_array,
                                                train_config.batch_size)
            history.epochs.append(EpochRecord(epoch, train_loss, val_loss, val_f1))
            record_epoch(f"{train_config.stage}_{model.architecture}")
            self.logger.info(
                f"epoch {epoch}: train_loss={train_loss:.4f}"
                + (f" val_loss={val_loss:.4f} val_eq1_f1={val_f1:.4f}" if val_loss is not None else '')
            )

            if rule == 'best_val_eq1_f1':
                score = val_f1
            elif rule == 'best_val_loss':
                score = -val_loss
            else:
                score = None
            if rule == 'last' or best_score is None or score > best_score:
                best_score = score
                history.selected_epoch = epoch
                if rule != 'last':
                    best_params = [p.data.copy() for p in params]

        if best_params is not None:
            for param, values in zip(params, best_params):
                param.data = values

        record_examples(f"{train_config.stage}_train", len(train_seqs) * len(history))
        model.metadata = {
            'stage': train_config.stage,
            'seed': train_config.seed,
            'epochs_run': len(history),
            'selected_epoch': history.selected_epoch,
            'selection_rule': rule,
            'learning_rate': train_config.learning_rate,
            'weight_decay': train_config.weight_decay,
            'batch_size': train_config.batch_size,
            'class_weights': weights.to_dict(),
            'train_size': len(train_seqs),
            'val_size': len(val_seqs),
            'history': history.to_dict()['epochs'],
        }
        return model, history


def train(model_config: Union[BiLstmConfig, CnnConfig], train_config: TrainConfig,
          train_data: Sequence[LabeledTweet], val_data: Sequence[LabeledTweet] = (),
          vocab: Optional[Vocabulary] = None,
          embeddings: Optional[EmbeddingMatrix] = None) -> Tuple[SentenceClassifier, TrainingHistory]:
    """
    Build and train a classifier.

    Without a vocabulary one is built from the training texts, using
    model_config.vocab_size as its maximum size.
    """
    if not train_data:
        raise DataError("training data is empty")
    # fail on a missing class before any vocabulary or model work
    class_weights(class_distribution(train_data))

    if vocab is None:
        vocab = build_vocabulary((tokenize(example.text) for example in train_data), model_config.vocab_size)
    values = model_config.model_dump()
    values['vocab_size'] = vocab.size
    architecture = 'cnn' if isinstance(model_config, CnnConfig) else 'bilstm'
    model = build_classifier(architecture, values, vocab, embeddings=embeddings,
                             seed=derive_seed(train_config.seed, f'{train_config.stage}_{architecture}_init'))
    return TrainingService().fit(model, train_config, train_data, val_data)
