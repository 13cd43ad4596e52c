"""
Sentence classifiers over token indices.

This module provides:
- BiLstmClassifier: embedding, two stacked BiLSTMs, fully-connected head
- CnnClassifier: embedding, parallel convolutions with max-over-time pooling
- EnsembleClassifier: prediction averaging over independently trained models
- Distribution helpers (predict_label, ensemble_predict)
"""
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from app import autograd as ag
from app.autograd import Parameter, RngStream, Tensor
from app.error_handling import DataError
from app.layers import BiLSTM, Conv1d, Embedding, Layer, Linear
from app.records import NUM_CLASSES, SentimentLabel
from app.text_processing import EmbeddingMatrix, Vocabulary, encode_text, init_embeddings, pad_batch
from config import Config

logger = logging.getLogger(__name__)


class BiLstmConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    embed_dim: int = Field(200, gt=0)
    hidden_size: int = Field(256, gt=0)
    num_stacked_bilstm: int = Field(2, gt=0)
    dropout_p: float = Field(0.5, ge=0, lt=1)
    num_classes: int = Field(NUM_CLASSES, gt=0)
    vocab_size: int = Field(50000, ge=2)


class CnnConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    embed_dim: int = Field(200, gt=0)
    filter_widths: List[int] = [3, 4, 5]
    maps_per_width: int = Field(200, gt=0)
    dropout_p: float = Field(0.5, ge=0, lt=1)
    num_classes: int = Field(NUM_CLASSES, gt=0)
    vocab_size: int = Field(50000, ge=2)

    @field_validator('filter_widths')
    @classmethod
    def _positive_widths(cls, value):
        if not value or any(w <= 0 for w in value):
            raise ValueError("filter_widths must be a non-empty list of positive integers")
        if len(set(value)) != len(value):
            raise ValueError("filter_widths must be distinct")
        return value

    @property
    def feature_size(self) -> int:
        return len(self.filter_widths) * self.maps_per_width


def validate_distribution(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (NUM_CLASSES,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise DataError(f"not a probability distribution over {NUM_CLASSES} classes: {p.tolist()}")
    return p


def predict_label(p) -> SentimentLabel:
    """Most probable label; exact ties go to the lowest class index"""
    return SentimentLabel(int(np.argmax(np.asarray(p))))


def ensemble_predict(p, q) -> np.ndarray:
    """Elementwise mean of two distributions"""
    return (validate_distribution(p) + validate_distribution(q)) / 2.0


class SentenceClassifier(Layer):
    """
    Shared prediction surface.

    Subclasses implement `logits(indices, lengths, training, rng)` over a
    right-padded (B, T) batch.
    """

    architecture = ''
    min_length = 1

    def __init__(self, config, vocab: Vocabulary, metadata: Optional[Dict] = None):
        if config.vocab_size != vocab.size:
            raise DataError(f"config vocab_size {config.vocab_size} does not match vocabulary size {vocab.size}")
        self.config = config
        self.vocab = vocab
        self.metadata = dict(metadata or {})

    def named_parameters(self) -> Dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def batch_logits(self, sequences: Sequence[Sequence[int]], training: bool = False,
                     rng: Optional[RngStream] = None) -> Tensor:
        if any(len(seq) == 0 for seq in sequences):
            raise DataError("cannot classify an empty token index list")
        indices, lengths = pad_batch(sequences, min_length=self.min_length)
        return self.logits(indices, lengths, training, rng)

    def forward(self, indices: Sequence[int], training: bool = False, rng: Optional[RngStream] = None) -> np.ndarray:
        """Distribution for one index list"""
        with ag.no_grad():
            logits = self.batch_logits([list(indices)], training, rng)
            return ag.softmax(logits, axis=1).data[0].astype(np.float64)

    def predict_proba(self, sequences: Sequence[Sequence[int]], batch_size: Optional[int] = None) -> np.ndarray:
        """(N, 3) distributions in inference mode, in input order"""
        batch_size = batch_size or Config.PREDICT_BATCH_SIZE
        out = np.zeros((len(sequences), self.config.num_classes), dtype=np.float64)
        with ag.no_grad():
            for start in range(0, len(sequences), batch_size):
                chunk = sequences[start:start + batch_size]
                logits = self.batch_logits(chunk, training=False)
                out[start:start + len(chunk)] = ag.softmax(logits, axis=1).data
        return out

    def encode_texts(self, texts: Sequence[str]) -> List[List[int]]:
        return [encode_text(text, self.vocab) for text in texts]

    def predict_texts(self, texts: Sequence[str]) -> np.ndarray:
        return self.predict_proba(self.encode_texts(texts))

    def predict_labels(self, texts: Sequence[str]) -> List[SentimentLabel]:
        return [predict_label(p) for p in self.predict_texts(texts)]

    def logits(self, indices: np.ndarray, lengths: np.ndarray, training: bool, rng: Optional[RngStream]) -> Tensor:
        raise NotImplementedError


class BiLstmClassifier(SentenceClassifier):
    """
    Embedding, dropout, stacked BiLSTMs with dropout between them, and a
    linear head over the top layer's final forward and backward states.
    """

    architecture = 'bilstm'

    def __init__(self, config: BiLstmConfig, vocab: Vocabulary, embeddings: Optional[EmbeddingMatrix] = None,
                 seed: int = 0, metadata: Optional[Dict] = None):
        super().__init__(config, vocab, metadata)
        rng = RngStream(seed)
        if embeddings is None:
            embeddings = init_embeddings(vocab, config.embed_dim, ag.derive_seed(seed, 'embedding'))
        if embeddings.values.shape != (vocab.size, config.embed_dim):
            raise DataError(f"embedding shape {embeddings.values.shape} does not match "
                            f"({vocab.size}, {config.embed_dim})")
        self.embedding = Embedding(embeddings.values)
        self.bilstms = []
        input_size = config.embed_dim
        for layer in range(config.num_stacked_bilstm):
            self.bilstms.append(BiLSTM(input_size, config.hidden_size, rng.spawn(f'bilstm{layer + 1}'),
                                       f'bilstm{layer + 1}'))
            input_size = 2 * config.hidden_size
        self.output = Linear(2 * config.hidden_size, config.num_classes, rng.spawn('output'), 'output')

    def logits(self, indices, lengths, training, rng):
        p = self.config.dropout_p
        mask = (np.arange(indices.shape[1])[None, :] < lengths[:, None]).astype(np.int8)

        embedded = ag.dropout(self.embedding(indices), p, training, rng)
        steps = [ag.getitem(embedded, (slice(None), t)) for t in range(indices.shape[1])]

        final_fwd = final_bwd = None
        for layer, bilstm in enumerate(self.bilstms):
            if layer > 0:
                sequence = ag.dropout(ag.stack(steps, axis=1), p, training, rng)
                steps = [ag.getitem(sequence, (slice(None), t)) for t in range(indices.shape[1])]
            steps, final_fwd, final_bwd = bilstm(steps, mask)

        summary = ag.dropout(ag.concat([final_fwd, final_bwd], axis=1), p, training, rng)
        return self.output(summary)


class CnnClassifier(SentenceClassifier):
    """
    Embedding, one convolution per filter width with relu and max-over-time
    pooling, concatenated features, dropout and a linear head.

    Inputs shorter than the widest filter are right-padded to that width;
    windows past max(length, widest filter) never win the pooling.
    """

    architecture = 'cnn'

    def __init__(self, config: CnnConfig, vocab: Vocabulary, embeddings: Optional[EmbeddingMatrix] = None,
                 seed: int = 0, metadata: Optional[Dict] = None):
        super().__init__(config, vocab, metadata)
        rng = RngStream(seed)
        if embeddings is None:
            embeddings = init_embeddings(vocab, config.embed_dim, ag.derive_seed(seed, 'embedding'))
        if embeddings.values.shape != (vocab.size, config.embed_dim):
            raise DataError(f"embedding shape {embeddings.values.shape} does not match "
                            f"({vocab.size}, {config.embed_dim})")
        self.min_length = max(config.filter_widths)
        self.embedding = Embedding(embeddings.values)
        self.convs = [
            Conv1d(width, config.embed_dim, config.maps_per_width, rng.spawn(f'conv{width}'), f'conv{width}')
            for width in config.filter_widths
        ]
        self.output = Linear(config.feature_size, config.num_classes, rng.spawn('output'), 'output')

    def logits(self, indices, lengths, training, rng):
        embedded = self.embedding(indices)
        effective = np.maximum(lengths, self.min_length)
        pooled = []
        for conv in self.convs:
            features = ag.relu(conv(embedded))
            starts = np.arange(features.shape[1])
            valid = starts[None, :] + conv.width <= effective[:, None]
            pooled.append(ag.max_over_time(features, valid))
        summary = ag.dropout(ag.concat(pooled, axis=1), self.config.dropout_p, training, rng)
        return self.output(summary)


def bilstm_forward(indices: Sequence[int], model: BiLstmClassifier, training: bool = False,
                   rng: Optional[RngStream] = None) -> np.ndarray:
    return model.forward(indices, training, rng)


def cnn_forward(indices: Sequence[int], model: CnnClassifier, training: bool = False,
                rng: Optional[RngStream] = None) -> np.ndarray:
    return model.forward(indices, training, rng)


class EnsembleClassifier:
    """Average of two classifiers' distributions; each member encodes with its own vocabulary"""

    architecture = 'ensemble'

    def __init__(self, first: SentenceClassifier, second: SentenceClassifier):
        self.members = (first, second)

    def predict_texts(self, texts: Sequence[str]) -> np.ndarray:
        first, second = (member.predict_texts(texts) for member in self.members)
        return (first + second) / 2.0

    def predict_labels(self, texts: Sequence[str]) -> List[SentimentLabel]:
        return [predict_label(p) for p in self.predict_texts(texts)]


MODEL_CLASSES = {
    BiLstmClassifier.architecture: (BiLstmClassifier, BiLstmConfig),
    CnnClassifier.architecture: (CnnClassifier, CnnConfig),
}


def build_classifier(architecture: str, config_values: Dict, vocab: Vocabulary,
                     embeddings: Optional[EmbeddingMatrix] = None, seed: int = 0,
                     metadata: Optional[Dict] = None) -> SentenceClassifier:
    """Instantiate a classifier by architecture id"""
    try:
        model_class, config_class = MODEL_CLASSES[architecture]
    except KeyError:
        raise DataError(f"unknown architecture '{architecture}' (expected one of {sorted(MODEL_CLASSES)})")
    config = config_class(**config_values)
    return model_class(config, vocab, embeddings=embeddings, seed=seed, metadata=metadata)
