"""Array-level reverse-mode tape.

Every operation on a :class:`Var` appends one node to the owning
:class:`ParamTape`.  Nodes are stored in creation order, which is already a
topological order, so the backward sweep is a single reverse pass.

The module-level functions (``add``, ``mul``, ``tanh`` ...) accept plain
``numpy`` arrays as well; when no operand is a ``Var`` they simply return the
numpy result, which lets the jet code run with or without recording.
"""

from __future__ import annotations

import numpy as np


class TapeError(ValueError):
    pass


class Var:
    __slots__ = ("tape", "value", "index")
    __array_ufunc__ = None  # make ndarray operators defer to Var

    # make ndarray (op) Var defer to the reflected Var method
    __array_ufunc__ = None

    def __init__(self, tape, value, index):
        self.tape = tape
        self.value = value
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(node={self.index}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("division by a recorded value is not supported")
        return mul(self, 1.0 / np.asarray(other, dtype=float))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


class _Node:
    __slots__ = ("fn", "vjp", "parents", "name")

    def __init__(self, fn, vjp, parents, name=None):
        self.fn = fn
        self.vjp = vjp
        self.parents = parents
        self.name = name


class ParamTape:
    """Records the computation of a scalar loss from named parameters."""

    def __init__(self):
        self.nodes = []
        self.vars = []
        self.params = {}
        self.root = None

    @property
    def node_count(self):
        return len(self.nodes)

    def param(self, name, value):
        if name in self.params:
            raise TapeError(f"parameter {name!r} recorded twice")
        value = np.array(value, dtype=float)
        v = self._push(_Node(None, None, (), name), value)
        self.params[name] = v
        return v

    def _push(self, node, value):
        v = Var(self, value, len(self.nodes))
        self.nodes.append(node)
        self.vars.append(v)
        return v

    def set_root(self, loss):
        if not isinstance(loss, Var) or loss.tape is not self:
            raise TapeError("root must be a value recorded on this tape")
        if loss.value.size != 1:
            raise TapeError(f"root must be scalar, got shape {loss.value.shape}")
        self.root = loss
        return loss

    def replay(self, params=None):
        """Re-run every recorded node; returns the root value.

        ``params`` optionally overrides parameter values by name.  Without
        overrides the result is bit-identical to the recorded forward pass.
        """
        if self.root is None:
            raise TapeError("tape has no scalar root")
        params = params or {}
        values = []
        for node, var in zip(self.nodes, self.vars):
            if node.fn is None:
                values.append(np.asarray(params.get(node.name, var.value), dtype=float))
                continue
            args = [values[p.index] if isinstance(p, Var) else p for p in node.parents]
            values.append(node.fn(*args))
            if self.root.index == var.index:
                break
        return float(values[self.root.index].reshape(()))


def grad_params(tape, seed=1.0):
    """Gradient of the tape's scalar root with respect to every parameter."""
    if tape.root is None:
        raise TapeError("tape has no scalar root")
    grads = {tape.root.index: np.full(tape.root.value.shape, float(seed))}
    for i in range(tape.root.index, -1, -1):
        g = grads.pop(i, None)
        if g is None:
            continue
        node = tape.nodes[i]
        if node.fn is None:
            grads[i] = g
            continue
        pvals = [p.value if isinstance(p, Var) else p for p in node.parents]
        pgrads = node.vjp(g, tape.vars[i].value, *pvals)
        for p, pg in zip(node.parents, pgrads):
            if not isinstance(p, Var) or pg is None:
                continue
            if p.index in grads:
                grads[p.index] = grads[p.index] + pg
            else:
                grads[p.index] = pg
    out = {}
    for name, v in tape.params.items():
        g = grads.get(v.index)
        out[name] = np.zeros_like(v.value) if g is None else np.asarray(g).reshape(v.value.shape)
    return out


# -- dispatch ---------------------------------------------------------------


def _tape_of(args):
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise TapeError("operands recorded on different tapes")
    return tape


def _apply(fn, vjp, *args):
    tape = _tape_of(args)
    vals = [a.value if isinstance(a, Var) else a for a in args]
    out = fn(*vals)
    if tape is None:
        return out
    return tape._push(_Node(fn, vjp, tuple(args)), out)


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _unbroadcast(g, shape):
    if np.shape(g) == tuple(shape):
        return g
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _shape(x):
    return np.shape(x)


# -- elementwise ------------------------------------------------------------


def add(a, b):
    return _apply(
        np.add,
        lambda g, out, x, y: (_unbroadcast(g, _shape(x)), _unbroadcast(g, _shape(y))),
        a, b,
    )


def sub(a, b):
    return _apply(
        np.subtract,
        lambda g, out, x, y: (_unbroadcast(g, _shape(x)), _unbroadcast(-g, _shape(y))),
        a, b,
    )


def mul(a, b):
    return _apply(
        np.multiply,
        lambda g, out, x, y: (_unbroadcast(g * y, _shape(x)), _unbroadcast(g * x, _shape(y))),
        a, b,
    )


def neg(a):
    return _apply(np.negative, lambda g, out, x: (-g,), a)


def tanh(a):
    return _apply(np.tanh, lambda g, out, x: (g * (1.0 - out * out),), a)


def sin(a):
    return _apply(np.sin, lambda g, out, x: (g * np.cos(x),), a)


def cos(a):
    return _apply(np.cos, lambda g, out, x: (-g * np.sin(x),), a)


def exp(a):
    return _apply(np.exp, lambda g, out, x: (g * out,), a)


def square(a):
    return _apply(np.square, lambda g, out, x: (2.0 * g * x,), a)


# -- reductions and structure ------------------------------------------------


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    def fn(x):
        return np.sum(x, axis=axis)

    def vjp(g, out, x):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _apply(fn, vjp, a)


def mean(a, axis=None):
    def fn(x):
        return np.mean(x, axis=axis)

    def vjp(g, out, x):
        n = x.size if axis is None else x.shape[axis]
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _apply(fn, vjp, a)


def matmul(a, b):
    """``a @ b`` for ``a`` of shape (..., n) and a 2-D ``b`` of shape (n, m)."""

    def vjp(g, out, x, w):
        gx = g @ w.T
        gw = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return gx, gw

    return _apply(np.matmul, vjp, a, b)


def _is_basic(key):
    parts = key if isinstance(key, tuple) else (key,)
    return all(p is None or p is Ellipsis or isinstance(p, (int, np.integer, slice)) for p in parts)


def getitem(a, key):
    basic = _is_basic(key)

    def fn(x):
        return x[key]

    def vjp(g, out, x):
        gx = np.zeros_like(x)
        if basic:
            gx[key] = g
        else:
            np.add.at(gx, key, g)
        return (gx,)

    return _apply(fn, vjp, a)


def reshape(a, shape):
    orig = np.shape(value_of(a))
    return _apply(
        lambda x: np.reshape(x, shape),
        lambda g, out, x: (np.reshape(g, orig),),
        a,
    )


def take0(a, index):
    """Gather along the leading axis with an integer index array."""
    index = np.asarray(index)

    def fn(x):
        return x[index]

    def vjp(g, out, x):
        gx = np.zeros_like(x)
        np.add.at(gx, index, g)
        return (gx,)

    return _apply(fn, vjp, a)


def segment_sum0(a, starts):
    """Sum consecutive leading-axis segments beginning at ``starts``."""
    starts = np.asarray(starts)

    def fn(x):
        return np.add.reduceat(x, starts, axis=0)

    def vjp(g, out, x):
        counts = np.diff(np.append(starts, x.shape[0]))
        return (np.repeat(g, counts, axis=0),)

    return _apply(fn, vjp, a)


def stack0(items):
    items = list(items)

    def fn(*xs):
        return np.stack(xs, axis=0)

    def vjp(g, out, *xs):
        return tuple(g[i] for i in range(len(xs)))

    return _apply(fn, vjp, *items)


def concat(items, axis=-1):
    items = list(items)

    def fn(*xs):
        return np.concatenate(xs, axis=axis)

    def vjp(g, out, *xs):
        sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return tuple(np.split(g, sizes, axis=axis))

    return _apply(fn, vjp, *items)


def broadcast_to(a, shape):
    shape = tuple(shape)
    orig = _shape(value_of(a))

    def fn(x):
        return np.broadcast_to(x, shape).copy()

    def vjp(g, out, x):
        return (_unbroadcast(g, orig),)

    return _apply(fn, vjp, a)


def transpose(a):
    return _apply(np.transpose, lambda g, out, x: (np.transpose(g),), a)
