"""
Tokenization, vocabulary construction, integer encoding and pretrained
embedding loading.

Tokens are produced by one ordered regular-expression pass over the
lowercased text; URLs and @-mentions are normalised to the placeholder
tokens used by tweet-trained embedding tables.
"""
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from app.error_handling import DataError, EmbeddingFormatError

logger = logging.getLogger(__name__)

PAD_TOKEN = '<pad>'
UNK_TOKEN = '<unk>'
URL_TOKEN = '<url>'
USER_TOKEN = '<user>'

PAD_INDEX = 0
UNK_INDEX = 1

OOV_INIT_RANGE = 0.05

# Matched before generic punctuation; text is lowercased first so ":D" arrives as ":d"
EMOTICONS = [
    ':)', ':-)', ':(', ':-(', ':d', ':-d', ';)', ';-)', ':p', ':-p', ';p',
    ':/', ':-/', ":'(", ':o', ':-o', ':|', ':]', ':[', ':*', '=)', '=(',
    '<3', '</3', '^_^', '-_-',
]

_EMOTICON_PATTERN = '|'.join(re.escape(e) for e in sorted(EMOTICONS, key=len, reverse=True))

_TOKEN_RE = re.compile(
    r"(?P<url>https?://\S+|www\.\S+)"
    r"|(?P<user>@\w+)"
    r"|(?P<hashtag>#\w+)"
    rf"|(?P<emoticon>{_EMOTICON_PATTERN})(?!\w)"
    r"|(?P<word>\w+(?:['’]\w+)*)"
    rf"|(?P<punct>(?:(?!(?:{_EMOTICON_PATTERN})(?!\w))[^\w\s])+)"
)


def tokenize(text: str) -> List[str]:
    """
    Split a tweet into tokens.

    Lowercases, maps URLs to <url> and mentions to <user>, keeps hashtags and
    listed emoticons whole, and splits punctuation runs from words.
    """
    if not text:
        return []
    tokens = []
    for match in _TOKEN_RE.finditer(text.lower()):
        kind = match.lastgroup
        if kind == 'url':
            tokens.append(URL_TOKEN)
        elif kind == 'user':
            tokens.append(USER_TOKEN)
        else:
            tokens.append(match.group(kind))
    return tokens


@dataclass(frozen=True)
class Vocabulary:
    """Token/index bijection with <pad> at 0 and <unk> at 1"""
    index_to_token: Tuple[str, ...]
    token_to_index: Dict[str, int] = field(compare=False, repr=False)

    pad_index = PAD_INDEX
    unk_index = UNK_INDEX

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> 'Vocabulary':
        """Rebuild a vocabulary from its index-ordered token list"""
        tokens = tuple(tokens)
        if len(tokens) < 2 or tokens[PAD_INDEX] != PAD_TOKEN or tokens[UNK_INDEX] != UNK_TOKEN:
            raise DataError("vocabulary must start with <pad>, <unk>")
        mapping = {token: index for index, token in enumerate(tokens)}
        if len(mapping) != len(tokens):
            raise DataError("vocabulary contains duplicate tokens")
        return cls(index_to_token=tokens, token_to_index=mapping)

    @property
    def size(self) -> int:
        return len(self.index_to_token)

    def __len__(self):
        return self.size

    def __contains__(self, token):
        return token in self.token_to_index

    def index(self, token: str) -> int:
        return self.token_to_index.get(token, UNK_INDEX)


@dataclass(frozen=True)
class EmbeddingMatrix:
    values: np.ndarray
    dim: int

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != self.dim:
            raise DataError(f"embedding values shape {self.values.shape} does not match dim {self.dim}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("embedding matrix contains non-finite values")


def build_vocabulary(corpus: Iterable[Sequence[str]], max_size: int) -> Vocabulary:
    """
    Keep the (max_size - 2) most frequent tokens after <pad> and <unk>.

    Ties in frequency are broken by ascending token string.
    """
    if max_size < 2:
        raise ValueError(f"max_size must be at least 2, got {max_size}")

    counts = Counter()
    for tokens in corpus:
        counts.update(tokens)
    counts.pop(PAD_TOKEN, None)
    counts.pop(UNK_TOKEN, None)

    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    kept = [token for token, _ in ranked[:max_size - 2]]

    vocab = Vocabulary.from_tokens([PAD_TOKEN, UNK_TOKEN] + kept)
    logger.info(f"Built vocabulary of {vocab.size} tokens from {len(counts)} distinct tokens")
    return vocab


def encode(tokens: Sequence[str], vocab: Vocabulary) -> List[int]:
    """Map tokens to indices, unknown tokens to unk_index"""
    return [vocab.index(token) for token in tokens]


def encode_text(text: str, vocab: Vocabulary) -> List[int]:
    """Tokenize and encode; a text without tokens encodes as a single <unk>"""
    indices = encode(tokenize(text), vocab)
    return indices or [UNK_INDEX]


def pad_batch(sequences: Sequence[Sequence[int]], min_length: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Right-pad index lists with PAD_INDEX; returns (indices (B, T), lengths (B,))"""
    lengths = np.array([len(seq) for seq in sequences], dtype=np.int64)
    width = max(int(lengths.max()) if len(lengths) else 0, min_length)
    batch = np.full((len(sequences), width), PAD_INDEX, dtype=np.int64)
    for row, seq in enumerate(sequences):
        batch[row, :len(seq)] = seq
    return batch, lengths


def init_embeddings(vocab: Vocabulary, dim: int, seed: int) -> EmbeddingMatrix:
    """Random table: uniform in [-0.05, 0.05], pad row zero"""
    rng = np.random.Generator(np.random.PCG64(seed))
    values = rng.uniform(-OOV_INIT_RANGE, OOV_INIT_RANGE, size=(vocab.size, dim)).astype(np.float32)
    values[PAD_INDEX] = 0.0
    return EmbeddingMatrix(values=values, dim=dim)


def load_embeddings(path, dim: int, vocab: Vocabulary, seed: int) -> EmbeddingMatrix:
    """
    Initialise an embedding table from a GloVe-style text file.

    Args:
        path: File with lines "word v1 ... v_dim"
        dim: Expected vector size
        vocab: Vocabulary whose rows are filled
        seed: Seed for rows not found in the file

    Returns:
        EmbeddingMatrix with found rows copied, pad row zero, the rest random
    """
    matrix = init_embeddings(vocab, dim, seed).values
    found = set()

    try:
        handle = open(path, 'r', encoding='utf-8')
    except OSError as e:
        raise DataError(f"cannot read embedding file {path}: {e}")

    with handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip('\n').rstrip('\r')
            if not line.strip():
                continue
            parts = line.split(' ')
            while parts and parts[-1] == '':
                parts.pop()
            # word2vec-style "<count> <dim>" header
            if line_no == 1 and len(parts) == 2 and parts[0].isdigit() and parts[1].isdigit():
                continue
            word, values = parts[0], parts[1:]
            if len(values) != dim:
                raise EmbeddingFormatError(f"expected {dim} values, found {len(values)}", line_no)
            index = vocab.token_to_index.get(word)
            if index is None or index in (PAD_INDEX, UNK_INDEX) or index in found:
                continue
            try:
                vector = np.array([float(v) for v in values], dtype=np.float32)
            except ValueError:
                raise EmbeddingFormatError("non-numeric vector component", line_no)
            if not np.all(np.isfinite(vector)):
                raise EmbeddingFormatError("non-finite vector component", line_no)
            matrix[index] = vector
            found.add(index)

    coverage = len(found) / max(vocab.size - 1, 1)
    logger.info(f"Loaded {len(found)} pretrained vectors ({coverage:.1%} of vocabulary) from {path}")
    return EmbeddingMatrix(values=matrix, dim=dim)
