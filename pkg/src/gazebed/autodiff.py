"""A small reverse-mode autodiff engine on float64 numpy arrays.

Only the operations the crossmodal model needs are provided: affine maps,
a fused masked GRU, softmax cross-entropy, pairwise Euclidean distances and
a handful of elementwise/indexing helpers.  Every op records its parents
and a closure that maps the output gradient to parent gradients.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class GradientNotResetError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return scale(self, other)

    __rmul__ = __mul__

    def backward(self) -> None:
        backward(self)


class Parameter(Tensor):
    """A named leaf tensor that receives gradients."""

    __slots__ = ()

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: tuple[Tensor, ...], fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = fn
    return out


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Leaves must have ``grad is None`` on entry; call ``zero_grad`` between
    passes.  The graph is released afterwards.
    """
    if loss.data.size != 1:
        raise ValueError("backward() needs a scalar loss")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any parameter")
    order = _topological(loss)
    leaves = [n for n in order if n._backward is None]
    stale = [n.name or repr(n) for n in leaves if n.grad is not None]
    if stale:
        raise GradientNotResetError(f"gradients already populated for {stale[:3]}; call zero_grad() first")

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# -- elementwise and structural ops ------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def total(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return _make(np.asarray(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data ** 2, (a,), lambda g: (2.0 * a.data * g,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _make(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), fn)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def take2d(a, rows, cols) -> Tensor:
    """Gather ``a[rows[i], cols[i]]`` into a vector."""
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)

    def fn(g):
        out = np.zeros(a.shape)
        np.add.at(out, (rows, cols), g)
        return (out,)

    return _make(a.data[rows, cols], (a,), fn)


# -- layers ------------------------------------------------------------------

def linear(x, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W + b`` for ``x`` of shape (n, d_in)."""
    x = as_tensor(x)
    out = x.data @ W.data
    if b is not None:
        out = out + b.data

    def fn(g):
        gx = g @ W.data.T if x.requires_grad else None
        gW = x.data.T @ g
        return (gx, gW) if b is None else (gx, gW, g.sum(axis=0))

    parents = (x, W) if b is None else (x, W, b)
    return _make(out, parents, fn)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def gru(x, mask: np.ndarray | None, W: Tensor, U: Tensor, b: Tensor, h0: np.ndarray | None = None) -> Tensor:
    """Run a GRU over a padded batch and return the last valid hidden state.

    ``x`` has shape (n, T, D); ``W`` (D, 3H), ``U`` (H, 3H) and ``b`` (3H,)
    hold the update, reset and candidate blocks in that order:

        z = sigmoid(x W_z + h U_z + b_z)
        r = sigmoid(x W_r + h U_r + b_r)
        c = tanh(x W_c + (r * h) U_c + b_c)
        h' = (1 - z) * h + z * c

    Where ``mask[:, t]`` is false the state is carried through unchanged, so
    with right-padding the output is the state after the last real frame.
    """
    x = as_tensor(x)
    n, T, D = x.shape
    H = U.shape[0]
    if W.shape != (D, 3 * H) or U.shape != (H, 3 * H) or b.shape != (3 * H,):
        raise ValueError(f"GRU parameter shapes {W.shape}, {U.shape}, {b.shape} do not fit input dim {D}")
    m = np.ones((n, T)) if mask is None else np.asarray(mask, dtype=np.float64)
    h = np.zeros((n, H)) if h0 is None else np.broadcast_to(np.asarray(h0, dtype=np.float64), (n, H)).copy()

    Wd, Ud = W.data, U.data
    xw = x.data.reshape(n * T, D) @ Wd + b.data
    xw = xw.reshape(n, T, 3 * H)
    hs = np.empty((T + 1, n, H))
    zs = np.empty((T, n, H))
    rs = np.empty((T, n, H))
    cs = np.empty((T, n, H))
    hs[0] = h
    for t in range(T):
        hu = h @ Ud[:, : 2 * H]
        z = sigmoid(xw[:, t, :H] + hu[:, :H])
        r = sigmoid(xw[:, t, H : 2 * H] + hu[:, H:])
        c = np.tanh(xw[:, t, 2 * H :] + (r * h) @ Ud[:, 2 * H :])
        mt = m[:, t : t + 1]
        h = mt * ((1.0 - z) * h + z * c) + (1.0 - mt) * h
        zs[t], rs[t], cs[t], hs[t + 1] = z, r, c, h

    def fn(g):
        gW = np.zeros_like(Wd)
        gU = np.zeros_like(Ud)
        gb = np.zeros(3 * H)
        gx = np.zeros((n, T, D)) if x.requires_grad else None
        dh = g.copy()
        for t in range(T - 1, -1, -1):
            h_prev, z, r, c = hs[t], zs[t], rs[t], cs[t]
            mt = m[:, t : t + 1]
            dnew = mt * dh
            dh_prev = (1.0 - mt) * dh + dnew * (1.0 - z)
            dac = dnew * z * (1.0 - c * c)
            daz = dnew * (c - h_prev) * z * (1.0 - z)
            drh = dac @ Ud[:, 2 * H :].T
            dar = drh * h_prev * r * (1.0 - r)
            dh_prev += drh * r
            da_zr = np.concatenate([daz, dar], axis=1)
            dh_prev += da_zr @ Ud[:, : 2 * H].T
            da = np.concatenate([da_zr, dac], axis=1)
            gU[:, : 2 * H] += h_prev.T @ da_zr
            gU[:, 2 * H :] += (r * h_prev).T @ dac
            gW += x.data[:, t, :].T @ da
            gb += da.sum(axis=0)
            if gx is not None:
                gx[:, t, :] = da @ Wd.T
            dh = dh_prev
        return gx, gW, gU, gb

    return _make(h, (x, W, U, b), fn)


def gru_forward(W: np.ndarray, U: np.ndarray, b: np.ndarray, sequence: np.ndarray, h0: np.ndarray | None = None):
    """Unbatched GRU pass returning ``(hidden_states (k, H), last (H,))``."""
    sequence = np.atleast_2d(np.asarray(sequence, dtype=np.float64))
    H = U.shape[0]
    if sequence.shape[0] < 1:
        raise ValueError("sequence must have at least one frame")
    if sequence.shape[1] != W.shape[0]:
        raise ValueError(f"input dim {sequence.shape[1]} does not match GRU input dim {W.shape[0]}")
    h = np.zeros(H) if h0 is None else np.asarray(h0, dtype=np.float64).copy()
    states = []
    for x_t in sequence:
        a = x_t @ W + b
        hu = h @ U[:, : 2 * H]
        z = sigmoid(a[:H] + hu[:H])
        r = sigmoid(a[H : 2 * H] + hu[H:])
        c = np.tanh(a[2 * H :] + (r * h) @ U[:, 2 * H :])
        h = (1.0 - z) * h + z * c
        states.append(h)
    states = np.array(states)
    return states, states[-1]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(np.atleast_2d(logits)))


def softmax_cross_entropy(logits, labels, reduction: str = "mean") -> Tensor:
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    n = logits.shape[0]
    logp = log_softmax(logits.data)
    nll = -logp[np.arange(n), labels]
    if reduction == "mean":
        value, w = nll.mean(), 1.0 / n
    elif reduction == "sum":
        value, w = nll.sum(), 1.0
    else:
        raise ValueError(f"unknown reduction {reduction!r}")

    def fn(g):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        return (grad * (w * float(g)),)

    return _make(np.asarray(value), (logits,), fn)


def pairwise_distances(a, b) -> Tensor:
    """Euclidean distances ``D[i, j] = ||a_i - b_j||``; zero distances get zero gradient."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"embedding dims differ: {a.shape[1]} vs {b.shape[1]}")
    diff = a.data[:, None, :] - b.data[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))

    def fn(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(dist > 0, g / dist, 0.0)
        contrib = diff * w[:, :, None]
        return contrib.sum(axis=1), -contrib.sum(axis=0)

    return _make(dist, (a, b), fn)
