"""
Dense tensors with reverse-mode differentiation over a dynamically recorded
operation graph.

Every operation returns a new Tensor that remembers its inputs and a closure
mapping the output gradient to input gradients. `backward(loss)` walks the
graph in reverse topological order and accumulates into Parameter.grad.

Arithmetic runs in the dtype of the inputs; new tensors default to float32
and `precision(np.float64)` switches the default for gradient checks.
"""
import logging
import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from app.error_handling import NumericError, ShapeError

logger = logging.getLogger(__name__)

_state = threading.local()


def get_default_dtype():
    return getattr(_state, 'dtype', np.float32)


def is_grad_enabled():
    return getattr(_state, 'grad_enabled', True)


@contextmanager
def precision(dtype):
    """Switch the dtype used for newly created tensors and parameters"""
    previous = get_default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = previous


@contextmanager
def no_grad():
    """Run operations without recording the graph"""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class RngStream:
    """Seeded random stream; same seed and algorithm give the same sequence"""

    algorithm = 'PCG64'

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, name: str) -> 'RngStream':
        """Independent child stream derived from this seed and a name"""
        return RngStream(derive_seed(self.seed, name))

    def uniform(self, low, high, size):
        return self.generator.uniform(low, high, size=size)

    def random(self, size):
        return self.generator.random(size)

    def permutation(self, n):
        return self.generator.permutation(n)


def derive_seed(seed: int, name: str) -> int:
    """Deterministic sub-seed for a named stage or component"""
    words = [int(seed) & 0xFFFFFFFF] + list(name.encode('utf-8'))
    return int(np.random.SeedSequence(words).generate_state(1, dtype=np.uint32)[0])


class Tensor:
    """
    N-dimensional value with an optional recorded history.

    Args:
        data: array-like value
        requires_grad: whether gradients should flow to this tensor
    """

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: Tuple['Tensor', ...] = (), _backward: Optional[Callable] = None, _op: str = ''):
        if isinstance(data, np.ndarray) and dtype is None and np.issubdtype(data.dtype, np.floating):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=dtype or get_default_dtype())
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad and not _parents else None
        self._parents = _parents
        self._backward = _backward
        self.op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable tensor with a name and a gradient slot of identical shape"""

    def __init__(self, data, name: str):
        super().__init__(np.array(data, dtype=get_default_dtype()), requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.shape})"


def as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else get_default_dtype()
    return Tensor(np.asarray(value, dtype=dtype))


def _result(data, parents, backward, op):
    """Wrap an op output, recording history only when something needs gradients"""
    if not np.all(np.isfinite(data)):
        raise NumericError(op)
    parents = tuple(parents)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, _op=op)
    return Tensor(data, _op=op)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to `shape`"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape)


# ---------------------------------------------------------------------------
# Elementwise and linear-algebra ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _broadcast_shape('add', a, b)

    def backward(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)

    return _result(a.data + b.data, (a, b), backward, 'add')


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _broadcast_shape('mul', a, b)

    def backward(grad):
        return _unbroadcast(grad * b.data, a.shape), _unbroadcast(grad * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward, 'mul')


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError('matmul', a.shape, b.shape)

    def backward(grad):
        return grad @ b.data.T, a.data.T @ grad

    return _result(a.data @ b.data, (a, b), backward, 'matmul')


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(grad):
        return (grad * (1.0 - out * out),)

    return _result(out, (x,), backward, 'tanh')


def _stable_sigmoid(values):
    z = np.exp(-np.abs(values))
    return np.where(values >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(values.dtype, copy=False)


def sigmoid(x: Tensor) -> Tensor:
    out = _stable_sigmoid(x.data)

    def backward(grad):
        return (grad * out * (1.0 - out),)

    return _result(out, (x,), backward, 'sigmoid')


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    out = np.where(positive, x.data, 0).astype(x.dtype, copy=False)

    def backward(grad):
        return (grad * positive,)

    return _result(out, (x,), backward, 'relu')


def mask_blend(new: Tensor, old: Tensor, mask: np.ndarray) -> Tensor:
    """mask * new + (1 - mask) * old with a constant 0/1 mask; exact where mask is 0"""
    if new.shape != old.shape:
        raise ShapeError('mask_blend', new.shape, old.shape)
    keep = np.broadcast_to(np.asarray(mask, dtype=bool), new.shape)
    out = np.where(keep, new.data, old.data)

    def backward(grad):
        return np.where(keep, grad, 0).astype(grad.dtype), np.where(keep, 0, grad).astype(grad.dtype)

    return _result(out, (new, old), backward, 'mask_blend')


# ---------------------------------------------------------------------------
# Shape ops
# ---------------------------------------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    ndim = tensors[0].data.ndim
    axis = axis % ndim
    for t in tensors[1:]:
        other = [s for i, s in enumerate(t.shape) if i != axis]
        first = [s for i, s in enumerate(tensors[0].shape) if i != axis]
        if t.data.ndim != ndim or other != first:
            raise ShapeError('concat', tensors[0].shape, t.shape)
    sizes = [t.shape[axis] for t in tensors]
    boundaries = np.cumsum(sizes)[:-1]

    def backward(grad):
        return tuple(np.split(grad, boundaries, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, 'concat')


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError('stack', tensors[0].shape, t.shape)

    def backward(grad):
        return tuple(np.moveaxis(grad, axis, 0))

    return _result(np.stack([t.data for t in tensors], axis=axis), tensors, backward, 'stack')


def getitem(x: Tensor, key) -> Tensor:
    """Basic (slice/integer) indexing"""
    out = x.data[key]

    def backward(grad):
        full = np.zeros_like(x.data)
        full[key] += grad
        return (full,)

    return _result(np.array(out), (x,), backward, 'getitem')


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError('reshape', x.shape, shape)

    def backward(grad):
        return (grad.reshape(x.shape),)

    return _result(out, (x,), backward, 'reshape')


def reduce_sum(x: Tensor) -> Tensor:
    def backward(grad):
        return (np.broadcast_to(grad, x.shape).astype(x.dtype),)

    return _result(np.array(x.data.sum(), dtype=x.dtype), (x,), backward, 'reduce_sum')


def reduce_mean(x: Tensor) -> Tensor:
    count = x.data.size

    def backward(grad):
        return (np.broadcast_to(grad / count, x.shape).astype(x.dtype),)

    return _result(np.array(x.data.mean(), dtype=x.dtype), (x,), backward, 'reduce_mean')


# ---------------------------------------------------------------------------
# Network ops
# ---------------------------------------------------------------------------

def embedding_lookup(weight: Tensor, indices) -> Tensor:
    indices = np.asarray(indices, dtype=np.int64)
    if weight.data.ndim != 2:
        raise ShapeError('embedding_lookup', weight.shape, indices.shape)
    if indices.size and (indices.min() < 0 or indices.max() >= weight.shape[0]):
        raise ShapeError('embedding_lookup', weight.shape, indices.shape)

    def backward(grad):
        full = np.zeros_like(weight.data)
        np.add.at(full, indices.reshape(-1), grad.reshape(-1, weight.shape[1]))
        return (full,)

    return _result(weight.data[indices], (weight,), backward, 'embedding_lookup')


def dropout(x: Tensor, p: float, training: bool, rng: Optional[RngStream]) -> Tensor:
    """Inverted dropout; the identity when not training or p == 0"""
    if not training or p == 0:
        return x
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    keep = (rng.random(x.shape) >= p).astype(x.dtype) * scale

    def backward(grad):
        return (grad * keep,)

    return _result(x.data * keep, (x,), backward, 'dropout')


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=axis, keepdims=True)

    def backward(grad):
        inner = (grad * out).sum(axis=axis, keepdims=True)
        return (out * (grad - inner),)

    return _result(out, (x,), backward, 'softmax')


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(grad):
        return (grad - probs * grad.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), backward, 'log_softmax')


def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    Valid 1-D convolution over time.

    Args:
        x: (B, T, D) input
        weight: (W, D, F) filter bank of width W
        bias: optional (F,)

    Returns:
        (B, T - W + 1, F)
    """
    if x.data.ndim != 3 or weight.data.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise ShapeError('conv1d', x.shape, weight.shape)
    batch, steps, dim = x.shape
    width, _, maps = weight.shape
    positions = steps - width + 1
    if positions < 1:
        raise ShapeError('conv1d', x.shape, weight.shape)

    # (B, L, W, D) windows flattened to (B*L, W*D)
    windows = np.stack([x.data[:, k:k + positions, :] for k in range(width)], axis=2)
    columns = windows.reshape(batch * positions, width * dim)
    kernel = weight.data.reshape(width * dim, maps)
    out = (columns @ kernel).reshape(batch, positions, maps)

    def backward(grad):
        flat = grad.reshape(batch * positions, maps)
        grad_kernel = (columns.T @ flat).reshape(weight.shape)
        grad_windows = (flat @ kernel.T).reshape(batch, positions, width, dim)
        grad_x = np.zeros_like(x.data)
        for k in range(width):
            grad_x[:, k:k + positions, :] += grad_windows[:, :, k, :]
        return grad_x, grad_kernel

    result = _result(out, (x, weight), backward, 'conv1d')
    return add(result, bias) if bias is not None else result


def max_over_time(x: Tensor, valid: Optional[np.ndarray] = None) -> Tensor:
    """
    Per-feature maximum across time.

    Args:
        x: (B, L, F), or (L, F) for a single sequence
        valid: optional boolean (B, L) marking positions allowed to win
    """
    single = x.data.ndim == 2
    data = x.data[None] if single else x.data
    if data.ndim != 3:
        raise ShapeError('max_over_time', x.shape)
    if valid is None:
        valid = np.ones(data.shape[:2], dtype=bool)
    else:
        valid = np.asarray(valid, dtype=bool)
        valid = valid[None] if single and valid.ndim == 1 else valid
        if valid.shape != data.shape[:2]:
            raise ShapeError('max_over_time', x.shape, valid.shape)
        if not valid.any(axis=1).all():
            raise ShapeError('max_over_time', x.shape, valid.shape)

    masked = np.where(valid[:, :, None], data, -np.inf)
    winners = masked.argmax(axis=1)[:, None, :]
    out = np.take_along_axis(data, winners, axis=1)[:, 0, :]

    def backward(grad):
        full = np.zeros_like(data)
        np.put_along_axis(full, winners, grad.reshape(out.shape)[:, None, :], axis=1)
        return (full[0] if single else full,)

    return _result(out[0] if single else out, (x,), backward, 'max_over_time')


def weighted_cross_entropy(logits: Tensor, targets, weights) -> Tensor:
    """
    Mean over the batch of -w[y] * log softmax(logits)[y].

    Args:
        logits: (B, C)
        targets: B class indices
        weights: per-class weights, array-like of length C or ClassWeights
    """
    targets = np.asarray(targets, dtype=np.int64)
    if hasattr(weights, 'as_array'):
        weights = weights.as_array()
    weights = np.asarray(weights, dtype=logits.dtype)
    if logits.data.ndim != 2 or targets.shape != (logits.shape[0],) or weights.shape != (logits.shape[1],):
        raise ShapeError('weighted_cross_entropy', logits.shape, targets.shape, weights.shape)
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise ShapeError('weighted_cross_entropy', logits.shape, targets.shape)

    batch = logits.shape[0]
    rows = np.arange(batch)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - lse
    sample_weights = weights[targets]
    loss = -(sample_weights * log_probs[rows, targets]).sum() / batch

    def backward(grad):
        probs = np.exp(log_probs)
        probs[rows, targets] -= 1.0
        return (grad * probs * (sample_weights[:, None] / batch),)

    return _result(np.array(loss, dtype=logits.dtype), (logits,), backward, 'weighted_cross_entropy')


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------

def _topological_order(root: Tensor):
    """Nodes reachable from root, inputs before the ops that consume them"""
    order = []
    visited = set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor):
    """
    Accumulate d(loss)/d(leaf) into the grad slot of every reachable leaf.

    Repeated calls without zeroing accumulate.
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ShapeError('backward', loss.shape)
    if not loss.requires_grad:
        return

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node._backward is None:
            node.grad += grad.reshape(node.shape)
            continue
        for parent, parent_grad in zip(node._parents, node._backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else parent_grad
