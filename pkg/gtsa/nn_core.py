# Copyright 2026, the gtsa authors, All Rights Reserved
"""Dense 2-D float64 values with reverse-mode differentiation, and Adam.

Every operation returns a new Value that remembers its parents and a backward
function mapping the output gradient to one gradient per parent. `backward`
walks the recorded graph once in reverse topological order; gradients of
intermediate values live only for the duration of that walk, while leaf
gradients (parameters) accumulate until `zero_grad` is called.
"""
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import math

import attr
import numpy as np
from scipy import sparse

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Value:
    __slots__ = ('data', '_grad', 'parents', 'backward_fn', 'op', 'requires_grad')

    def __init__(self, data: np.ndarray, *,
                 parents: Tuple['Value', ...] = (),
                 backward_fn: Optional[BackwardFn] = None,
                 op: str = '',
                 requires_grad: bool = False):
        data = np.asarray(data, dtype=np.float64)
        assert data.ndim == 2, "Values are 2-D, got shape {}".format(data.shape)
        self.data = data
        self._grad: Optional[np.ndarray] = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self) -> Tuple[int, int]:
        rows, cols = self.data.shape
        return rows, cols

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    def accumulate(self, grad: np.ndarray) -> None:
        assert grad.shape == self.data.shape
        if self._grad is None:
            self._grad = np.array(grad, dtype=np.float64)
        else:
            self._grad += grad

    def zero_grad(self) -> None:
        self._grad = None

    def __repr__(self) -> str:
        return 'Value(op={!r}, shape={})'.format(self.op or 'leaf', self.data.shape)


def constant(data: np.ndarray) -> Value:
    return Value(np.atleast_2d(np.asarray(data, dtype=np.float64)))


def parameter(data: np.ndarray) -> Value:
    return Value(np.atleast_2d(np.array(data, dtype=np.float64)), requires_grad=True)


def _node(data: np.ndarray, parents: Tuple[Value, ...], backward_fn: BackwardFn, op: str) -> Value:
    return Value(data, parents=parents, backward_fn=backward_fn, op=op)


def matmul(a: Value, b: Value) -> Value:
    assert a.shape[1] == b.shape[0], "matmul {} @ {}".format(a.shape, b.shape)
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), 'matmul')


def add(a: Value, b: Value) -> Value:
    assert a.shape == b.shape
    return _node(a.data + b.data, (a, b), lambda g: (g, g), 'add')


def add_row(a: Value, row: Value) -> Value:
    """ a + row, with the 1 x f row repeated over every row of a """
    assert row.shape == (1, a.shape[1])
    return _node(a.data + row.data, (a, row), lambda g: (g, g.sum(axis=0, keepdims=True)), 'add_row')


def relu(a: Value) -> Value:
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,), 'relu')


def scale(a: Value, factor: float) -> Value:
    return _node(a.data * factor, (a,), lambda g: (g * factor,), 'scale')


def transpose(a: Value) -> Value:
    return _node(a.data.T.copy(), (a,), lambda g: (g.T,), 'transpose')


def mean_rows(a: Value) -> Value:
    """ 1 x f average of the rows """
    n = a.shape[0]
    assert n >= 1
    return _node(a.data.mean(axis=0, keepdims=True), (a,),
                 lambda g: (np.repeat(g / n, n, axis=0),), 'mean_rows')


def sum_rows(a: Value) -> Value:
    n = a.shape[0]
    return _node(a.data.sum(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g, n, axis=0),), 'sum_rows')


def mean_cols(a: Value) -> Value:
    """ n x 1 average of the columns """
    f = a.shape[1]
    assert f >= 1
    return _node(a.data.mean(axis=1, keepdims=True), (a,),
                 lambda g: (np.repeat(g / f, f, axis=1),), 'mean_cols')


def covariance(h: Value) -> Value:
    """ (1/n) H~^T H~ with H~ the column-centered H """
    n = h.shape[0]
    assert n >= 1
    centered = h.data - h.data.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / n
    cov = 0.5 * (cov + cov.T)
    # The centering projection drops out because the columns of H~ sum to zero
    return _node(cov, (h,), lambda g: (centered @ (g + g.T) / n,), 'covariance')


def spmm(matrix: sparse.spmatrix, b: Value) -> Value:
    """ Constant sparse matrix times b """
    assert matrix.shape[1] == b.shape[0]
    matrix = sparse.csr_matrix(matrix)
    return _node(np.asarray(matrix @ b.data), (b,), lambda g: (np.asarray(matrix.T @ g),), 'spmm')


def slice_rows(a: Value, start: int, stop: int) -> Value:
    assert 0 <= start <= stop <= a.shape[0]

    def backward_fn(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)
    return _node(a.data[start:stop].copy(), (a,), backward_fn, 'slice_rows')


def vstack(values: Sequence[Value]) -> Value:
    assert values
    bounds = np.cumsum([0] + [v.shape[0] for v in values])

    def backward_fn(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(values)))
    return _node(np.vstack([v.data for v in values]), tuple(values), backward_fn, 'vstack')


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    result: np.ndarray = exp / exp.sum(axis=-1, keepdims=True)
    return result


def softmax_cross_entropy(logits: Value, labels: np.ndarray) -> Value:
    """ Mean cross-entropy of a batch of logits (B x classes) against integer labels """
    labels = np.asarray(labels, dtype=np.int64).ravel()
    batch = logits.shape[0]
    assert labels.shape == (batch,) and batch >= 1
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_norm - shifted[np.arange(batch), labels]))
    probs = softmax(logits.data)
    onehot = np.zeros_like(probs)
    onehot[np.arange(batch), labels] = 1.0
    return _node(np.array([[loss]]), (logits,), lambda g: (g[0, 0] * (probs - onehot) / batch,), 'softmax_xent')


def _topological_order(root: Value) -> List[Value]:
    order: List[Value] = []
    visited = set()
    stack: List[Tuple[Value, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Value) -> None:
    """ Accumulate d(loss)/d(leaf) into every leaf that requires a gradient """
    assert loss.shape == (1, 1), "backward needs a scalar loss"
    if not loss.requires_grad:
        return
    grads: Dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(_topological_order(loss)):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node.backward_fn is None:
            node.accumulate(grad)
            continue
        for parent, parent_grad in zip(node.parents, node.backward_fn(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + parent_grad
            else:
                grads[key] = np.asarray(parent_grad, dtype=np.float64)


def zero_grad(params: Sequence[Value]) -> None:
    for param in params:
        param.zero_grad()


@attr.s(slots=True, auto_attribs=True, kw_only=True)
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first: List[np.ndarray] = attr.ib(factory=list)
    second: List[np.ndarray] = attr.ib(factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Value], lr: float) -> 'OptimizerState':
        return cls(
            lr=lr,
            first=[np.zeros_like(p.data) for p in params],
            second=[np.zeros_like(p.data) for p in params],
        )


def adam_step(params: Sequence[Value], state: OptimizerState) -> None:
    """ One bias-corrected Adam update, in place """
    assert len(params) == len(state.first) == len(state.second)
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for param, first, second in zip(params, state.first, state.second):
        assert first.shape == param.data.shape
        grad = param.grad
        first *= state.beta1
        first += (1.0 - state.beta1) * grad
        second *= state.beta2
        second += (1.0 - state.beta2) * grad ** 2
        param.data -= state.lr * (first / correction1) / (np.sqrt(second / correction2) + state.eps)


def kaiming_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    bound = gain * math.sqrt(6.0 / fan_in)
    result: np.ndarray = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    return result
