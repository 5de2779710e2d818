"""Minimal reverse-mode automatic differentiation over scalars.

A :class:`Tape` records scalar nodes in flat arrays: each node stores its
value, up to two parent indices and the local partial derivative with
respect to each parent. Parents always precede children, so a single
descending sweep accumulates exact adjoints.

Two recording styles share the same tape:

* :class:`Var` handles with operator overloading, one node per operation,
  for general use and tests;
* bulk ``unary``/``binary`` appends that push a *segment* of many
  independent scalar nodes at once. This is how the batch losses are
  recorded; it is still a scalar graph, just written in one go.

Constants (Python floats) are folded into node values and never become
nodes.
"""
import math
import numbers

import numpy as np

from . import _kernels
from .errors import DomainError, InvalidValue, TapeMismatch

OP_NAMES = (
    "leaf", "add", "sub", "mul", "div", "neg", "exp", "ln", "log2", "sqrt",
    "square", "magsq", "sum", "scale", "lincomb", "recip", "imdd_loglik",
)
OP = {name: code for code, name in enumerate(OP_NAMES)}
LN2 = math.log(2.0)


class Tape:
    """Append-only scalar computation graph."""

    def __init__(self, capacity=256):
        self._n = 0
        self._gen = 0
        self._alloc(max(int(capacity), 16))
        self._seg = []

    def _alloc(self, cap):
        self._val = np.empty(cap)
        self._d1 = np.empty(cap)
        self._d2 = np.empty(cap)
        self._p1 = np.empty(cap, dtype=np.int32)
        self._p2 = np.empty(cap, dtype=np.int32)
        self._op = np.empty(cap, dtype=np.uint8)

    def _reserve(self, extra):
        need = self._n + extra
        cap = self._val.size
        if need <= cap:
            return
        while cap < need:
            cap *= 2
        n = self._n
        old = (self._val, self._d1, self._d2, self._p1, self._p2, self._op)
        self._alloc(cap)
        for dst, src in zip(
            (self._val, self._d1, self._d2, self._p1, self._p2, self._op), old
        ):
            dst[:n] = src[:n]

    def __len__(self):
        return self._n

    @property
    def values(self):
        """Read-only view of all node values."""
        v = self._val[: self._n]
        v.flags.writeable = False
        return v

    def val(self, idx):
        """Values of the nodes ``idx`` (a fresh array)."""
        return self._val[idx]

    def clear(self):
        """Drop every node. Outstanding Vars become invalid."""
        self._n = 0
        self._seg = []
        self._gen += 1

    def op_name(self, index):
        return OP_NAMES[int(self._op[index])]

    # scalar recording -----------------------------------------------------

    def _push(self, op, value, p1=-1, d1=0.0, p2=-1, d2=0.0):
        if not math.isfinite(value):
            raise DomainError(
                f"{OP_NAMES[op]} produced non-finite value {value!r} at node {self._n}"
            )
        self._reserve(1)
        i = self._n
        self._val[i] = value
        self._p1[i] = p1
        self._d1[i] = d1
        self._p2[i] = p2
        self._d2[i] = d2
        self._op[i] = op
        self._seg.append(i)
        self._n = i + 1
        return Var(self, i)

    def lift(self, value):
        """Record a leaf holding ``value``."""
        value = float(value)
        if not math.isfinite(value):
            raise InvalidValue(f"cannot lift non-finite value {value!r}")
        return self._push(OP["leaf"], value)

    # bulk recording -------------------------------------------------------

    def _extend(self, op, values, p1, d1, p2, d2):
        values = np.ascontiguousarray(values, dtype=float).ravel()
        k = values.size
        if k == 0:
            return np.empty(0, dtype=np.int64)
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise DomainError(
                f"{OP_NAMES[op]} produced non-finite value at node {self._n + bad}"
            )
        start = self._n
        for par in (p1, p2):
            if par is not None and np.size(par) and np.max(par) >= start:
                raise ValueError("bulk segment references a node inside itself")
        self._reserve(k)
        sl = slice(start, start + k)
        self._val[sl] = values
        self._op[sl] = op
        if p1 is None:
            self._p1[sl] = -1
            self._d1[sl] = 0.0
        else:
            self._p1[sl] = np.broadcast_to(p1, (k,))
            self._d1[sl] = np.broadcast_to(d1, (k,))
        if p2 is None:
            self._p2[sl] = -1
            self._d2[sl] = 0.0
        else:
            self._p2[sl] = np.broadcast_to(p2, (k,))
            self._d2[sl] = np.broadcast_to(d2, (k,))
        self._seg.append(start)
        self._n = start + k
        return np.arange(start, start + k, dtype=np.int64)

    def leaves(self, values):
        """Record one leaf per entry of ``values``; returns node indices."""
        values = np.asarray(values, dtype=float).ravel()
        if not np.all(np.isfinite(values)):
            raise InvalidValue("cannot lift non-finite values")
        return self._extend(OP["leaf"], values, None, None, None, None)

    def unary(self, op, parents, values, partials):
        """Record ``values[i] = f(parents[i])`` with ``df/dparent = partials[i]``."""
        return self._extend(OP[op], values, np.ravel(parents), np.ravel(partials), None, None)

    def binary(self, op, pa, pb, values, da, db):
        """Record two-parent nodes with local partials ``da`` and ``db``."""
        return self._extend(
            OP[op], values, np.ravel(pa), np.ravel(da), np.ravel(pb), np.ravel(db)
        )

    def ln(self, parents):
        """Natural log of existing nodes (strictly positive values required)."""
        x = self._val[np.asarray(parents)]
        if np.any(x <= 0.0):
            bad = int(np.asarray(parents).ravel()[np.flatnonzero(np.ravel(x) <= 0.0)[0]])
            raise DomainError(f"ln of non-positive value {self._val[bad]!r} (node {bad})")
        return self.unary("ln", parents, np.log(x), 1.0 / x)

    def tree_sum(self, idx):
        """Pairwise-sum each row of a 2-D index array; returns one node per row.

        Every add node has partials exactly 1. Levels are recorded as separate
        segments, so the summation order is fixed.
        """
        cur = np.asarray(idx, dtype=np.int64)
        if cur.ndim == 1:
            cur = cur[None, :]
        while cur.shape[1] > 1:
            half = cur.shape[1] // 2
            a = cur[:, 0: 2 * half: 2]
            b = cur[:, 1: 2 * half: 2]
            vals = self._val[a] + self._val[b]
            out = self.binary("sum", a, b, vals, 1.0, 1.0).reshape(a.shape)
            if cur.shape[1] % 2:
                out = np.concatenate([out, cur[:, -1:]], axis=1)
            cur = out
        return cur[:, 0]

    def group_sum(self, idx, sizes):
        """Pairwise sums over consecutive ragged groups of ``idx``.

        ``sizes[g]`` (>= 1) consecutive entries form group ``g``.
        """
        cur = np.asarray(idx, dtype=np.int64).copy()
        sizes = np.asarray(sizes, dtype=np.int64).copy()
        if np.any(sizes < 1) or sizes.sum() != cur.size:
            raise ValueError("group sizes must be positive and cover idx")
        while sizes.max() > 1:
            starts = np.cumsum(sizes) - sizes
            rank = np.arange(cur.size) - np.repeat(starts, sizes)
            gsize = np.repeat(sizes, sizes)
            even = rank % 2 == 0
            left = even & (rank + 1 < gsize)
            lpos = np.flatnonzero(left)
            a, b = cur[lpos], cur[lpos + 1]
            summed = self.binary("sum", a, b, self._val[a] + self._val[b], 1.0, 1.0)
            nxt = cur[even].copy()
            nxt[left[even]] = summed
            cur = nxt
            sizes = (sizes + 1) // 2
        return cur

    # differentiation ------------------------------------------------------

    def _check(self, root):
        if not isinstance(root, Var) or root.tape is not self or root.gen != self._gen:
            raise TapeMismatch("root does not belong to this tape recording")
        return root.index

    def adjoints(self, root):
        """Adjoints of every node up to ``root`` (a Var or node index)."""
        i = self._check(root) if isinstance(root, Var) else int(root)
        if not 0 <= i < self._n:
            raise TapeMismatch(f"node {i} is not on the tape")
        n = i + 1
        seg = np.asarray(self._seg, dtype=np.int64)
        return _kernels.backward_sweep(
            self._p1[:n], self._p2[:n], self._d1[:n], self._d2[:n], i, seg
        )

    def gradient(self, root, wrt):
        """d root / d node for each index in ``wrt`` (nodes after root get 0)."""
        adj = self.adjoints(root)
        wrt = np.asarray(wrt, dtype=np.int64)
        out = np.zeros(wrt.shape)
        inside = wrt < adj.size
        out[inside] = adj[wrt[inside]]
        return out

    def backward(self, root):
        """Map every leaf index to d root / d leaf."""
        i = self._check(root)
        adj = self.adjoints(root)
        leaves = np.flatnonzero(self._op[: self._n] == OP["leaf"])
        return {int(k): (float(adj[k]) if k <= i else 0.0) for k in leaves}


class Var:
    """Handle to one scalar node of a :class:`Tape`."""

    __slots__ = ("tape", "index", "gen")

    def __init__(self, tape, index):
        self.tape = tape
        self.index = index
        self.gen = tape._gen

    @property
    def value(self):
        if self.gen != self.tape._gen:
            raise TapeMismatch("Var belongs to a cleared recording")
        return float(self.tape._val[self.index])

    def __repr__(self):
        return f"Var(index={self.index}, value={self.value!r})"

    def __float__(self):
        return self.value

    def _other(self, other):
        if isinstance(other, Var):
            if other.tape is not self.tape or other.gen != self.gen:
                raise TapeMismatch("operands live on different tapes")
            return other
        if isinstance(other, numbers.Real):
            return float(other)
        return NotImplemented

    def __add__(self, other):
        o = self._other(other)
        if o is NotImplemented:
            return o
        return apply("add", self, o)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._other(other)
        if o is NotImplemented:
            return o
        return apply("sub", self, o)

    def __rsub__(self, other):
        o = self._other(other)
        if o is NotImplemented:
            return o
        return self.tape._push(OP["sub"], o - self.value, self.index, -1.0)

    def __mul__(self, other):
        o = self._other(other)
        if o is NotImplemented:
            return o
        return apply("mul", self, o)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._other(other)
        if o is NotImplemented:
            return o
        return apply("div", self, o)

    def __rtruediv__(self, other):
        o = self._other(other)
        if o is NotImplemented:
            return o
        x = self.value
        if x == 0.0:
            raise DomainError(f"division by zero at node {self.tape._n}")
        return self.tape._push(OP["div"], o / x, self.index, -o / (x * x))

    def __neg__(self):
        return apply("neg", self)

    def __pow__(self, k):
        if k == 2:
            return apply("square", self)
        raise NotImplementedError("only squaring is supported")


def lift(tape, value):
    return tape.lift(value)


def _binary_values(op, a, b):
    if op == "add":
        return a + b, 1.0, 1.0
    if op == "sub":
        return a - b, 1.0, -1.0
    if op == "mul":
        return a * b, b, a
    if op == "div":
        if b == 0.0:
            raise DomainError("division by zero")
        return a / b, 1.0 / b, -a / (b * b)
    if op == "magsq":
        return a * a + b * b, 2.0 * a, 2.0 * b
    raise ValueError(f"unknown binary op {op!r}")


def _unary_values(op, a):
    if op == "neg":
        return -a, -1.0
    if op == "exp":
        try:
            v = math.exp(a)
        except OverflowError:
            raise DomainError(f"exp overflow for argument {a!r}") from None
        return v, v
    if op in ("ln", "log2", "sqrt"):
        if not a > 0.0:
            raise DomainError(f"{op} requires a strictly positive argument, got {a!r}")
        if op == "ln":
            return math.log(a), 1.0 / a
        if op == "log2":
            return math.log2(a), 1.0 / (a * LN2)
        r = math.sqrt(a)
        return r, 0.5 / r
    if op == "square":
        return a * a, 2.0 * a
    raise ValueError(f"unknown unary op {op!r}")


def apply(op, a, b=None):
    """Apply a named operation to one or two Vars (or a Var and a constant).

    ``op`` is one of add, sub, mul, div, neg, exp, ln, log2, sqrt, square,
    magsq (|a + jb|^2 from a real pair) or sum (``a`` a sequence of Vars).
    """
    if op == "sum":
        items = list(a) if b is None else [a, b]
        return sum_reduce(items)
    tape = a.tape
    if b is None:
        try:
            v, d = _unary_values(op, a.value)
        except DomainError as exc:
            raise DomainError(f"{exc} (node {tape._n}, operand node {a.index})") from None
        return tape._push(OP[op], v, a.index, d)
    if isinstance(b, Var):
        if b.tape is not tape or b.gen != a.gen:
            raise TapeMismatch("operands live on different tapes")
        try:
            v, da, db = _binary_values(op, a.value, b.value)
        except DomainError as exc:
            raise DomainError(f"{exc} (node {tape._n})") from None
        return tape._push(OP[op], v, a.index, da, b.index, db)
    # constant right operand: one-parent node
    try:
        v, da, _ = _binary_values(op, a.value, float(b))
    except DomainError as exc:
        raise DomainError(f"{exc} (node {tape._n})") from None
    return tape._push(OP[op], v, a.index, da)


def exp(a):
    return apply("exp", a)


def ln(a):
    return apply("ln", a)


def log2(a):
    return apply("log2", a)


def sqrt(a):
    return apply("sqrt", a)


def square(a):
    return apply("square", a)


def magsq(re, im):
    return apply("magsq", re, im)


def sum_reduce(items):
    """Left-to-right sum of Vars; each partial is exactly 1."""
    items = list(items)
    if not items:
        raise ValueError("sum of no terms")
    acc = items[0]
    for v in items[1:]:
        acc = acc.tape._push(OP["sum"], acc.value + v.value, acc.index, 1.0, v.index, 1.0)
    return acc


def backward(tape, root):
    return tape.backward(root)
