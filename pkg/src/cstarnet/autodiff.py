"""A small reverse-mode automatic differentiation tape over real scalars.

Every operation appends a node holding its parent indices and the local
partial derivatives; ``backward`` sweeps the tape once in reverse. Tapes are
cheap and meant to be thrown away after a single gradient evaluation.

>>> t = Tape()
>>> x, y = t.var(2.0), t.var(5.0)
>>> g = backward(t, x * y + y)
>>> g[x.index], g[y.index]
(5.0, 3.0)
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import mpmath
import numpy as np


class AutodiffDomainError(ArithmeticError):
    pass


class Tape:
    __slots__ = ("ops", "parents", "partials", "values")

    def __init__(self):
        self.ops: list[str] = []
        self.parents: list[tuple[int, ...]] = []
        self.partials: list[tuple[float, ...]] = []
        self.values: list[float] = []

    def __len__(self):
        return len(self.values)

    def _push(self, op: str, parents: tuple[int, ...], partials: tuple[float, ...], value: float) -> "Var":
        self.ops.append(op)
        self.parents.append(parents)
        self.partials.append(partials)
        self.values.append(value)
        return Var(self, len(self.values) - 1)

    def var(self, value: float) -> "Var":
        """A new input leaf."""
        return self._push("input", (), (), float(value))

    def vars(self, values) -> list["Var"]:
        return [self.var(v) for v in np.asarray(values, dtype=np.float64).ravel()]

    def const(self, value: float) -> "Var":
        return self._push("const", (), (), float(value))


class Var:
    __slots__ = ("tape", "index")

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> float:
        return self.tape.values[self.index]

    def __repr__(self):
        return f"Var({self.value!r}, #{self.index})"

    def __float__(self):
        return float(self.value)

    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise ValueError("operands live on different tapes")
            return other
        return self.tape.const(float(other))

    def __add__(self, o):
        return record("add", self, self._lift(o))

    def __radd__(self, o):
        return record("add", self._lift(o), self)

    def __sub__(self, o):
        return record("sub", self, self._lift(o))

    def __rsub__(self, o):
        return record("sub", self._lift(o), self)

    def __mul__(self, o):
        return record("mul", self, self._lift(o))

    def __rmul__(self, o):
        return record("mul", self._lift(o), self)

    def __truediv__(self, o):
        return record("div", self, self._lift(o))

    def __rtruediv__(self, o):
        return record("div", self._lift(o), self)

    def __neg__(self):
        return record("neg", self)

    def exp(self):
        return record("exp", self)

    def log(self):
        return record("log", self)

    def tanh(self):
        return record("tanh", self)

    def square(self):
        return record("square", self)


def record(op: str, *args: Var) -> Var:
    """Append ``op(args)`` to the tape of its arguments."""
    tape = args[0].tape
    for a in args[1:]:
        if a.tape is not tape:
            raise ValueError("operands live on different tapes")
    v = [a.value for a in args]
    idx = tuple(a.index for a in args)
    if op == "add":
        return tape._push(op, idx, (1.0, 1.0), v[0] + v[1])
    if op == "sub":
        return tape._push(op, idx, (1.0, -1.0), v[0] - v[1])
    if op == "mul":
        return tape._push(op, idx, (v[1], v[0]), v[0] * v[1])
    if op == "div":
        if v[1] == 0.0:
            raise AutodiffDomainError("division by zero")
        q = v[0] / v[1]
        return tape._push(op, idx, (1.0 / v[1], -q / v[1]), q)
    if op == "exp":
        e = math.exp(v[0])
        return tape._push(op, idx, (e,), e)
    if op == "log":
        if v[0] <= 0.0:
            raise AutodiffDomainError(f"log of nonpositive value {v[0]}")
        return tape._push(op, idx, (1.0 / v[0],), math.log(v[0]))
    if op == "tanh":
        t = math.tanh(v[0])
        return tape._push(op, idx, (1.0 - t * t,), t)
    if op == "neg":
        return tape._push(op, idx, (-1.0,), -v[0])
    if op == "square":
        return tape._push(op, idx, (2.0 * v[0],), v[0] * v[0])
    raise ValueError(f"unknown op {op!r}")


def backward(tape: Tape, output: Var) -> np.ndarray:
    """Adjoint of ``output`` with respect to every node, indexed by node id.

    Nodes that do not influence ``output`` get 0.
    """
    adj = np.zeros(len(tape))
    adj[output.index] = 1.0
    parents, partials = tape.parents, tape.partials
    for k in range(output.index, -1, -1):
        a = adj[k]
        if a == 0.0:
            continue
        for p, d in zip(parents[k], partials[k]):
            adj[p] += a * d
    return adj


def grad(f: Callable[[list[Var]], Var], x) -> tuple[float, np.ndarray]:
    """Value and gradient of a scalar function written against ``Var``."""
    tape = Tape()
    xs = tape.vars(x)
    out = f(xs)
    if not isinstance(out, Var):
        # f ignored its inputs
        return float(out), np.zeros(len(xs))
    adj = backward(tape, out)
    return out.value, np.array([adj[v.index] for v in xs])


def central_differences(f: Callable[[np.ndarray], float], x, step: float = 1e-6) -> np.ndarray:
    x = np.array(x, dtype=np.float64).ravel()
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (f(xp) - f(xm)) / (2.0 * step)
    return g


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale))


def finite_diff_check(f: Callable[[Sequence[Var]], Var], x, step: float = 1e-6,
                      floor: float = 1e-8) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must accept either a list of ``Var`` or a list of floats (operator
    overloading makes most expressions work for both).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    _, g_tape = grad(f, x)

    def plain(xv):
        out = f(list(xv))
        return out.value if isinstance(out, Var) else float(out)

    g_fd = central_differences(plain, x, step)
    return relative_error(g_tape, g_fd, floor)


# math helpers that accept floats, Vars and mpmath numbers

def _mp(x) -> bool:
    return isinstance(x, mpmath.mpf)


def exp(x):
    if isinstance(x, Var):
        return x.exp()
    return mpmath.exp(x) if _mp(x) else math.exp(x)


def log(x):
    if isinstance(x, Var):
        return x.log()
    return mpmath.log(x) if _mp(x) else math.log(x)


def tanh(x):
    if isinstance(x, Var):
        return x.tanh()
    return mpmath.tanh(x) if _mp(x) else math.tanh(x)
