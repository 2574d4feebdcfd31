"""Reverse-mode differentiation over scalars and small dense arrays.

Primitive operations are recorded on an append-only :class:`Tape`; a node may
only reference earlier nodes, so the graph is acyclic by construction.
``backward`` walks the tape in reverse with a fixed accumulation order, which
makes repeated backward passes bit-identical.

Every public op in this module is polymorphic: called with :class:`Var`
arguments it records a tape node, called with plain floats / numpy arrays it
just computes the value.  That gives two independent evaluation routes for the
same formula, which the finite-difference checker exploits.

Scalars are kept as Python floats, vectors and matrices as float64 numpy
arrays.  There is deliberately no broadcasting engine: binary ops accept equal
shapes, or a scalar paired with an array.  Batches are looped explicitly by
callers.
"""

from __future__ import annotations

import math
from typing import Callable, Dict, Sequence, Union

import numpy as np

Value = Union[float, np.ndarray]
#: Gradient container returned by ``backward``/``finite_diff``: one entry per
#: named leaf, shaped exactly like the leaf value.
GradientMap = Dict[str, Value]

_ACOSH_GUARD = 1.0 + 1e-12   # derivative of arccosh is clipped below this
_TRIG_GUARD = 1.0 - 1e-12    # |argument| cap for asin/arccos derivatives
_SINHC_SWITCH = 1e-4         # below this, sinh(t)/t uses its Taylor series

# ---------------------------------------------------------------------------
# opcodes

(
    _LEAF, _ADD, _ADDC, _SUB, _NEG, _MUL, _MULC, _DIV, _DIVC, _CDIV, _EXP,
    _LOG, _SQRT, _POWC, _SINH, _COSH, _SINHC, _TANH, _SIGMOID, _ARCCOSH,
    _ASIN, _ARCCOS, _CLAMP_MIN, _CLAMP_MAX, _HINGE, _SMOOTH_L1, _DOT, _NORM,
    _MATMUL, _MATVEC, _VECMAT, _STACK, _CONCAT, _STACK_ROWS, _TAKE_ROW,
    _VSLICE, _COLS, _VSUM, _GET, _LOGSUMEXP, _SOFTMAX,
) = range(41)

_OP_NAMES = [
    "leaf", "add", "addc", "sub", "neg", "mul", "mulc", "div", "divc",
    "cdiv", "exp", "log", "sqrt", "powc", "sinh", "cosh", "sinhc", "tanh",
    "sigmoid", "arccosh", "asin", "arccos", "clamp_min", "clamp_max",
    "hinge", "smooth_l1", "dot", "norm", "matmul", "matvec", "vecmat",
    "stack", "concat", "stack_rows", "take_row", "vslice", "cols", "vsum",
    "get", "logsumexp", "softmax",
]


class Var:
    """Handle to one tape node.  Supports arithmetic operators."""

    __slots__ = ("tape", "idx", "value")
    __array_ufunc__ = None  # keep numpy from hijacking ndarray <op> Var

    def __init__(self, tape: "Tape", idx: int, value: Value):
        self.tape = tape
        self.idx = idx
        self.value = value

    def __repr__(self):
        return f"Var(idx={self.idx}, value={self.value!r})"

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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return powc(self, exponent)


class Tape:
    """Append-only record of primitive ops.

    One tape per differentiated computation; tapes are not shared across
    threads.  Leaves may be named, and named leaves are the keys of the
    GradientMap produced by ``backward``.
    """

    __slots__ = ("ops", "values", "names")

    def __init__(self):
        self.ops: list = []      # (opcode, input node ids, aux)
        self.values: list = []   # float | ndarray per node
        self.names: dict = {}    # node id -> leaf name

    def __len__(self):
        return len(self.values)

    def _record(self, opcode: int, inputs: tuple, aux, value: Value) -> Var:
        idx = len(self.values)
        self.ops.append((opcode, inputs, aux))
        self.values.append(value)
        return Var(self, idx, value)

    def leaf(self, value, name: str | None = None) -> Var:
        """Register an input node, optionally named for gradient lookup."""
        value = as_value(value)
        if isinstance(value, float):
            if not math.isfinite(value):
                raise ValueError(f"non-finite leaf value: {value!r}")
        elif not np.isfinite(value).all():
            raise ValueError("non-finite entries in leaf array")
        if name is not None:
            if name in set(self.names.values()):
                raise ValueError(f"duplicate leaf name: {name!r}")
        var = self._record(_LEAF, (), None, value)
        if name is not None:
            self.names[var.idx] = name
        return var

    def const(self, value) -> Var:
        """Register an unnamed input that gradients are not reported for."""
        return self.leaf(value, None)


def as_value(x) -> Value:
    """Normalize a plain input: numbers to float, arrays to float64."""
    if isinstance(x, Var):
        raise TypeError("as_value expects a plain number or array")
    if isinstance(x, np.ndarray):
        return np.asarray(x, dtype=np.float64)
    if np.isscalar(x):
        return float(x)
    return np.asarray(x, dtype=np.float64)


def val(x) -> Value:
    """Underlying numeric value of a Var, or the input unchanged."""
    return x.value if isinstance(x, Var) else x


def is_var(x) -> bool:
    return isinstance(x, Var)


def _tape_of(*args) -> Tape:
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ValueError("operands recorded on different tapes")
    if tape is None:
        raise ValueError("no Var operand")
    return tape


# ---------------------------------------------------------------------------
# shared value kernels (used by both the tape route and the plain route)


def _sinhc_value(t: float) -> float:
    # removable singularity at 0: 4-term Taylor series below the switch point
    if abs(t) < _SINHC_SWITCH:
        t2 = t * t
        return 1.0 + t2 / 6.0 + t2 * t2 / 120.0 + t2 * t2 * t2 / 5040.0
    return math.sinh(t) / t


def _sinhc_deriv(t: float) -> float:
    if abs(t) < _SINHC_SWITCH:
        t2 = t * t
        return t / 3.0 + t * t2 / 30.0 + t * t2 * t2 / 840.0
    return math.cosh(t) / t - math.sinh(t) / (t * t)


def _smooth_l1_value(a: float) -> float:
    return 0.5 * a * a if abs(a) < 1.0 else abs(a) - 0.5


def _smooth_l1_deriv(a: float) -> float:
    return a if abs(a) < 1.0 else math.copysign(1.0, a)


def _logsumexp_value(u: np.ndarray) -> float:
    m = float(np.max(u))
    return m + math.log(float(np.sum(np.exp(u - m))))


def _softmax_value(u: np.ndarray) -> np.ndarray:
    e = np.exp(u - np.max(u))
    return e / np.sum(e)


def _tanh_value(x: Value) -> Value:
    return math.tanh(x) if isinstance(x, float) else np.tanh(x)


def _sigmoid_value(x: Value) -> Value:
    if isinstance(x, float):
        return 1.0 / (1.0 + math.exp(-x))
    return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# primitive ops


def add(a, b):
    if isinstance(a, Var):
        if isinstance(b, Var):
            t = _tape_of(a, b)
            return t._record(_ADD, (a.idx, b.idx), None, a.value + b.value)
        c = as_value(b)
        return a.tape._record(_ADDC, (a.idx,), c, a.value + c)
    if isinstance(b, Var):
        c = as_value(a)
        return b.tape._record(_ADDC, (b.idx,), c, b.value + c)
    return as_value(a) + as_value(b)


def sub(a, b):
    if isinstance(a, Var):
        if isinstance(b, Var):
            t = _tape_of(a, b)
            return t._record(_SUB, (a.idx, b.idx), None, a.value - b.value)
        return add(a, -as_value(b))
    if isinstance(b, Var):
        return add(neg(b), as_value(a))
    return as_value(a) - as_value(b)


def neg(a):
    if isinstance(a, Var):
        return a.tape._record(_NEG, (a.idx,), None, -a.value)
    return -as_value(a)


def mul(a, b):
    if isinstance(a, Var):
        if isinstance(b, Var):
            t = _tape_of(a, b)
            return t._record(_MUL, (a.idx, b.idx), None, a.value * b.value)
        c = as_value(b)
        return a.tape._record(_MULC, (a.idx,), c, a.value * c)
    if isinstance(b, Var):
        c = as_value(a)
        return b.tape._record(_MULC, (b.idx,), c, b.value * c)
    return as_value(a) * as_value(b)


def div(a, b):
    """a / b with a scalar-or-array numerator and scalar denominator."""
    if isinstance(b, Var):
        if not isinstance(b.value, float):
            raise TypeError("div expects a scalar denominator")
        if isinstance(a, Var):
            t = _tape_of(a, b)
            return t._record(_DIV, (a.idx, b.idx), None, a.value / b.value)
        c = as_value(a)
        return b.tape._record(_CDIV, (b.idx,), c, c / b.value)
    bb = as_value(b)
    if not isinstance(bb, float):
        raise TypeError("div expects a scalar denominator")
    if isinstance(a, Var):
        return a.tape._record(_DIVC, (a.idx,), bb, a.value / bb)
    return as_value(a) / bb


def powc(a, exponent):
    """a ** p for scalar a and a constant exponent."""
    p = float(exponent)
    if isinstance(a, Var):
        return a.tape._record(_POWC, (a.idx,), p, a.value ** p)
    return as_value(a) ** p


def _unary(opcode: int, fn: Callable, a):
    if isinstance(a, Var):
        return a.tape._record(opcode, (a.idx,), None, fn(a.value))
    return fn(as_value(a))


def exp(a):
    return _unary(_EXP, math.exp, a)


def log(a):
    return _unary(_LOG, math.log, a)


def sqrt(a):
    return _unary(_SQRT, math.sqrt, a)


def sinh(a):
    return _unary(_SINH, math.sinh, a)


def cosh(a):
    return _unary(_COSH, math.cosh, a)


def sinhc(a):
    """sinh(t)/t, series-expanded near t = 0."""
    return _unary(_SINHC, _sinhc_value, a)


def tanh(a):
    return _unary(_TANH, _tanh_value, a)


def sigmoid(a):
    return _unary(_SIGMOID, _sigmoid_value, a)


def arccosh(a):
    return _unary(_ARCCOSH, math.acosh, a)


def asin(a):
    return _unary(_ASIN, math.asin, a)


def arccos(a):
    return _unary(_ARCCOS, math.acos, a)


def clamp_min(a, lo):
    lo = float(lo)
    if isinstance(a, Var):
        return a.tape._record(_CLAMP_MIN, (a.idx,), lo, max(a.value, lo))
    return max(float(a), lo)


def clamp_max(a, hi):
    hi = float(hi)
    if isinstance(a, Var):
        return a.tape._record(_CLAMP_MAX, (a.idx,), hi, min(a.value, hi))
    return min(float(a), hi)


def hinge(a):
    """max(0, a); subgradient 0 at the kink."""
    if isinstance(a, Var):
        return a.tape._record(_HINGE, (a.idx,), None, max(a.value, 0.0))
    return max(float(a), 0.0)


def smooth_l1(a):
    """0.5 a^2 for |a| < 1, |a| - 0.5 otherwise (threshold 1)."""
    return _unary(_SMOOTH_L1, _smooth_l1_value, a)


def dot(u, v):
    if isinstance(u, Var) or isinstance(v, Var):
        t = _tape_of(u, v)
        uu = u if isinstance(u, Var) else t.const(u)
        vv = v if isinstance(v, Var) else t.const(v)
        value = float(np.dot(uu.value, vv.value))
        return t._record(_DOT, (uu.idx, vv.idx), None, value)
    return float(np.dot(as_value(u), as_value(v)))


def norm(u):
    """Euclidean norm of a vector."""
    if isinstance(u, Var):
        return u.tape._record(_NORM, (u.idx,), None,
                              float(np.linalg.norm(u.value)))
    return float(np.linalg.norm(as_value(u)))


def matmul(a, b):
    if isinstance(a, Var) or isinstance(b, Var):
        t = _tape_of(a, b)
        aa = a if isinstance(a, Var) else t.const(a)
        bb = b if isinstance(b, Var) else t.const(b)
        return t._record(_MATMUL, (aa.idx, bb.idx), None, aa.value @ bb.value)
    return as_value(a) @ as_value(b)


def matvec(a, x):
    """Matrix (n x d) times column vector (d) -> vector (n)."""
    if isinstance(a, Var) or isinstance(x, Var):
        t = _tape_of(a, x)
        aa = a if isinstance(a, Var) else t.const(a)
        xx = x if isinstance(x, Var) else t.const(x)
        return t._record(_MATVEC, (aa.idx, xx.idx), None, aa.value @ xx.value)
    return as_value(a) @ as_value(x)


def vecmat(x, a):
    """Row vector (n) times matrix (n x d) -> vector (d)."""
    if isinstance(a, Var) or isinstance(x, Var):
        t = _tape_of(x, a)
        xx = x if isinstance(x, Var) else t.const(x)
        aa = a if isinstance(a, Var) else t.const(a)
        return t._record(_VECMAT, (xx.idx, aa.idx), None, xx.value @ aa.value)
    return as_value(x) @ as_value(a)


def stack(xs: Sequence):
    """Scalars -> vector."""
    xs = list(xs)
    if any(isinstance(x, Var) for x in xs):
        t = _tape_of(*[x for x in xs if isinstance(x, Var)])
        vv = [x if isinstance(x, Var) else t.const(x) for x in xs]
        value = np.array([v.value for v in vv], dtype=np.float64)
        return t._record(_STACK, tuple(v.idx for v in vv), None, value)
    return np.array([float(x) for x in xs], dtype=np.float64)


def concat(vs: Sequence):
    """Vectors -> one vector."""
    vs = list(vs)
    if any(isinstance(v, Var) for v in vs):
        t = _tape_of(*[v for v in vs if isinstance(v, Var)])
        vv = [v if isinstance(v, Var) else t.const(v) for v in vs]
        lengths = tuple(len(v.value) for v in vv)
        value = np.concatenate([v.value for v in vv])
        return t._record(_CONCAT, tuple(v.idx for v in vv), lengths, value)
    return np.concatenate([as_value(v) for v in vs])


def stack_rows(vs: Sequence):
    """Equal-length vectors -> matrix with those rows."""
    vs = list(vs)
    if any(isinstance(v, Var) for v in vs):
        t = _tape_of(*[v for v in vs if isinstance(v, Var)])
        vv = [v if isinstance(v, Var) else t.const(v) for v in vs]
        value = np.stack([v.value for v in vv])
        return t._record(_STACK_ROWS, tuple(v.idx for v in vv), None, value)
    return np.stack([as_value(v) for v in vs])


def take_row(m, i: int):
    """Row i of a matrix, as a vector."""
    if isinstance(m, Var):
        return m.tape._record(_TAKE_ROW, (m.idx,), int(i),
                              m.value[int(i)].copy())
    return as_value(m)[int(i)].copy()


def vslice(u, a: int, b: int):
    if isinstance(u, Var):
        return u.tape._record(_VSLICE, (u.idx,), (int(a), int(b)),
                              u.value[a:b].copy())
    return as_value(u)[a:b].copy()


def cols(m, a: int, b: int):
    """Column slice of a matrix."""
    if isinstance(m, Var):
        return m.tape._record(_COLS, (m.idx,), (int(a), int(b)),
                              m.value[:, a:b].copy())
    return as_value(m)[:, a:b].copy()


def vsum(u):
    if isinstance(u, Var):
        return u.tape._record(_VSUM, (u.idx,), None, float(np.sum(u.value)))
    return float(np.sum(as_value(u)))


def get(u, i: int):
    """Element i of a vector, as a scalar."""
    if isinstance(u, Var):
        return u.tape._record(_GET, (u.idx,), int(i), float(u.value[int(i)]))
    return float(as_value(u)[int(i)])


def logsumexp(u):
    """Stable log(sum(exp(u))) of a vector."""
    if isinstance(u, Var):
        return u.tape._record(_LOGSUMEXP, (u.idx,), None,
                              _logsumexp_value(u.value))
    return _logsumexp_value(as_value(u))


def softmax(u):
    if isinstance(u, Var):
        return u.tape._record(_SOFTMAX, (u.idx,), None,
                              _softmax_value(u.value))
    return _softmax_value(as_value(u))


def mean(xs: Sequence):
    """Mean of a sequence of scalars (fixed left-to-right summation)."""
    xs = list(xs)
    if not xs:
        raise ValueError("mean of empty sequence")
    total = xs[0]
    for x in xs[1:]:
        total = add(total, x)
    return div(total, float(len(xs)))


# ---------------------------------------------------------------------------
# backward


def _acc(adj, j, contrib):
    cur = adj[j]
    if cur is None:
        # copy arrays: contrib may alias a value we must not mutate later
        adj[j] = contrib.copy() if isinstance(contrib, np.ndarray) else contrib
    elif isinstance(cur, np.ndarray):
        cur += contrib
    else:
        adj[j] = cur + contrib


def _acc_into(adj, j, shape, write):
    """Accumulate into a zeros buffer of `shape` via in-place `write`."""
    cur = adj[j]
    if cur is None:
        cur = np.zeros(shape)
        adj[j] = cur
    write(cur)


def _bw_add(g, inputs, aux, values, adj):
    _acc(adj, inputs[0], g)
    _acc(adj, inputs[1], g)


def _bw_addc(g, inputs, aux, values, adj):
    v = values[inputs[0]]
    if isinstance(v, float) and isinstance(g, np.ndarray):
        g = float(np.sum(g))
    _acc(adj, inputs[0], g)


def _bw_sub(g, inputs, aux, values, adj):
    _acc(adj, inputs[0], g)
    _acc(adj, inputs[1], -g)


def _bw_neg(g, inputs, aux, values, adj):
    _acc(adj, inputs[0], -g)


def _bw_mul(g, inputs, aux, values, adj):
    ia, ib = inputs
    va, vb = values[ia], values[ib]
    ga = g * vb
    gb = g * va
    if isinstance(va, float) and isinstance(ga, np.ndarray):
        ga = float(np.sum(ga))
    if isinstance(vb, float) and isinstance(gb, np.ndarray):
        gb = float(np.sum(gb))
    _acc(adj, ia, ga)
    _acc(adj, ib, gb)


def _bw_mulc(g, inputs, aux, values, adj):
    va = values[inputs[0]]
    ga = g * aux
    if isinstance(va, float) and isinstance(ga, np.ndarray):
        ga = float(np.sum(ga))
    _acc(adj, inputs[0], ga)


def _bw_div(g, inputs, aux, values, adj):
    ia, ib = inputs
    va, vb = values[ia], values[ib]
    _acc(adj, ia, g / vb)
    gb = g * va
    if isinstance(gb, np.ndarray):
        gb = float(np.sum(gb))
    _acc(adj, ib, -gb / (vb * vb))


def _bw_divc(g, inputs, aux, values, adj):
    _acc(adj, inputs[0], g / aux)


def _bw_cdiv(g, inputs, aux, values, adj):
    vb = values[inputs[0]]
    gb = g * aux
    if isinstance(gb, np.ndarray):
        gb = float(np.sum(gb))
    _acc(adj, inputs[0], -gb / (vb * vb))


def _bw_exp(g, inputs, aux, values, adj):
    _acc(adj, inputs[0], g * math.exp(values[inputs[0]]))


def _bw_log(g, inputs, aux, values, adj):
    _acc(adj, inputs[0], g / values[inputs[0]])


def _bw_sqrt(g, inputs, aux, values, adj):
    out = math.sqrt(values[inputs[0]])
    _acc(adj, inputs[0], g / (2.0 * max(out, 1e-150)))


def _bw_powc(g, inputs, aux, values, adj):
    a = values[inputs[0]]
    _acc(adj, inputs[0], g * aux * a ** (aux - 1.0))


def _bw_sinh(g, inputs, aux, values, adj):
    _acc(adj, inputs[0], g * math.cosh(values[inputs[0]]))


def _bw_cosh(g, inputs, aux, values, adj):
    _acc(adj, inputs[0], g * math.sinh(values[inputs[0]]))


def _bw_sinhc(g, inputs, aux, values, adj):
    _acc(adj, inputs[0], g * _sinhc_deriv(values[inputs[0]]))


def _bw_tanh(g, inputs, aux, values, adj):
    out = _tanh_value(values[inputs[0]])
    _acc(adj, inputs[0], g * (1.0 - out * out))


def _bw_sigmoid(g, inputs, aux, values, adj):
    out = _sigmoid_value(values[inputs[0]])
    _acc(adj, inputs[0], g * out * (1.0 - out))


def _bw_arccosh(g, inputs, aux, values, adj):
    # 1/sqrt(x^2-1) diverges at 1; clip so matched pairs (d = 0) stay finite
    x = max(values[inputs[0]], _ACOSH_GUARD)
    _acc(adj, inputs[0], g / math.sqrt(x * x - 1.0))


def _bw_asin(g, inputs, aux, values, adj):
    x = min(max(values[inputs[0]], -_TRIG_GUARD), _TRIG_GUARD)
    _acc(adj, inputs[0], g / math.sqrt(1.0 - x * x))


def _bw_arccos(g, inputs, aux, values, adj):
    x = min(max(values[inputs[0]], -_TRIG_GUARD), _TRIG_GUARD)
    _acc(adj, inputs[0], -g / math.sqrt(1.0 - x * x))


def _bw_clamp_min(g, inputs, aux, values, adj):
    if values[inputs[0]] > aux:  # boundary takes the inactive side: zero
        _acc(adj, inputs[0], g)


def _bw_clamp_max(g, inputs, aux, values, adj):
    if values[inputs[0]] < aux:
        _acc(adj, inputs[0], g)


def _bw_hinge(g, inputs, aux, values, adj):
    if values[inputs[0]] > 0.0:
        _acc(adj, inputs[0], g)


def _bw_smooth_l1(g, inputs, aux, values, adj):
    _acc(adj, inputs[0], g * _smooth_l1_deriv(values[inputs[0]]))


def _bw_dot(g, inputs, aux, values, adj):
    ia, ib = inputs
    _acc(adj, ia, g * values[ib])
    _acc(adj, ib, g * values[ia])


def _bw_norm(g, inputs, aux, values, adj):
    u = values[inputs[0]]
    n = float(np.linalg.norm(u))
    if n > 1e-300:
        _acc(adj, inputs[0], (g / n) * u)
    # at u = 0 the limit gradient used is 0


def _bw_matmul(g, inputs, aux, values, adj):
    ia, ib = inputs
    _acc(adj, ia, g @ values[ib].T)
    _acc(adj, ib, values[ia].T @ g)


def _bw_matvec(g, inputs, aux, values, adj):
    ia, ix = inputs
    _acc(adj, ia, np.outer(g, values[ix]))
    _acc(adj, ix, values[ia].T @ g)


def _bw_vecmat(g, inputs, aux, values, adj):
    ix, ia = inputs
    _acc(adj, ix, values[ia] @ g)
    _acc(adj, ia, np.outer(values[ix], g))


def _bw_stack(g, inputs, aux, values, adj):
    for k, j in enumerate(inputs):
        _acc(adj, j, float(g[k]))


def _bw_concat(g, inputs, aux, values, adj):
    off = 0
    for j, length in zip(inputs, aux):
        _acc(adj, j, g[off:off + length])
        off += length


def _bw_stack_rows(g, inputs, aux, values, adj):
    for k, j in enumerate(inputs):
        _acc(adj, j, g[k])


def _bw_take_row(g, inputs, aux, values, adj):
    shape = values[inputs[0]].shape

    def write(buf):
        buf[aux] += g

    _acc_into(adj, inputs[0], shape, write)


def _bw_vslice(g, inputs, aux, values, adj):
    a, b = aux
    shape = values[inputs[0]].shape

    def write(buf):
        buf[a:b] += g

    _acc_into(adj, inputs[0], shape, write)


def _bw_cols(g, inputs, aux, values, adj):
    a, b = aux
    shape = values[inputs[0]].shape

    def write(buf):
        buf[:, a:b] += g

    _acc_into(adj, inputs[0], shape, write)


def _bw_vsum(g, inputs, aux, values, adj):
    _acc(adj, inputs[0], np.full(values[inputs[0]].shape, g))


def _bw_get(g, inputs, aux, values, adj):
    shape = values[inputs[0]].shape

    def write(buf):
        buf[aux] += g

    _acc_into(adj, inputs[0], shape, write)


def _bw_logsumexp(g, inputs, aux, values, adj):
    u = values[inputs[0]]
    out = _logsumexp_value(u)
    _acc(adj, inputs[0], g * np.exp(u - out))


def _bw_softmax(g, inputs, aux, values, adj):
    s = _softmax_value(values[inputs[0]])
    _acc(adj, inputs[0], s * (g - float(np.dot(g, s))))


_BACKWARD = [
    None, _bw_add, _bw_addc, _bw_sub, _bw_neg, _bw_mul, _bw_mulc, _bw_div,
    _bw_divc, _bw_cdiv, _bw_exp, _bw_log, _bw_sqrt, _bw_powc, _bw_sinh,
    _bw_cosh, _bw_sinhc, _bw_tanh, _bw_sigmoid, _bw_arccosh, _bw_asin,
    _bw_arccos, _bw_clamp_min, _bw_clamp_max, _bw_hinge, _bw_smooth_l1,
    _bw_dot, _bw_norm, _bw_matmul, _bw_matvec, _bw_vecmat, _bw_stack,
    _bw_concat, _bw_stack_rows, _bw_take_row, _bw_vslice, _bw_cols, _bw_vsum,
    _bw_get, _bw_logsumexp, _bw_softmax,
]


def _zeros_like(v: Value) -> Value:
    return 0.0 if isinstance(v, float) else np.zeros(v.shape)


def _finite(v: Value) -> bool:
    if isinstance(v, float):
        return math.isfinite(v)
    return bool(np.isfinite(v).all())


def backward(tape: Tape, output: Var) -> GradientMap:
    """Reverse-accumulate d(output)/d(leaf) for every named leaf.

    The traversal order is fixed (reverse node order), so two backward
    passes over the same tape produce bit-identical gradients.  Raises if
    the output is not a scalar recorded on this tape, or if a non-finite
    adjoint appears (the error names the originating node).
    """
    if not isinstance(output, Var) or output.tape is not tape:
        raise ValueError("output is not a node of this tape")
    if not isinstance(output.value, float):
        raise ValueError("backward requires a scalar output node")
    adj: list = [None] * len(tape.values)
    adj[output.idx] = 1.0
    ops = tape.ops
    values = tape.values
    table = _BACKWARD
    for i in range(output.idx, -1, -1):
        g = adj[i]
        if g is None:
            continue
        opcode, inputs, aux = ops[i]
        if opcode == _LEAF:
            continue
        table[opcode](g, inputs, aux, values, adj)
    grads: GradientMap = {}
    bad = False
    for idx, name in tape.names.items():
        g = adj[idx]
        if g is None:
            g = _zeros_like(values[idx])
        elif not _finite(g):
            bad = True
        grads[name] = g
    if bad:
        for i in range(output.idx + 1):
            if adj[i] is not None and not _finite(adj[i]):
                opcode = tape.ops[i][0]
                raise ArithmeticError(
                    f"non-finite gradient at node {i} (op {_OP_NAMES[opcode]})"
                )
    return grads


def finite_diff(f: Callable[[dict], float], params: dict,
                step: float = 1e-6) -> GradientMap:
    """Central-difference gradient of ``f`` at ``params``.

    ``f`` maps a dict of plain floats/arrays to a scalar; every coordinate
    is perturbed by ``+-step``.  Non-finite values at any probe point are
    reported with the offending parameter name.
    """
    grads: GradientMap = {}
    for name in params:
        base = params[name]
        if isinstance(base, np.ndarray):
            g = np.zeros(base.shape)
            for idx in np.ndindex(base.shape):
                hi = dict(params)
                arr = base.copy()
                arr[idx] += step
                hi[name] = arr
                lo = dict(params)
                arr = base.copy()
                arr[idx] -= step
                lo[name] = arr
                fh, fl = float(f(hi)), float(f(lo))
                if not (math.isfinite(fh) and math.isfinite(fl)):
                    raise ValueError(
                        f"non-finite probe for parameter {name!r} at {idx}")
                g[idx] = (fh - fl) / (2.0 * step)
            grads[name] = g
        else:
            hi = dict(params)
            hi[name] = float(base) + step
            lo = dict(params)
            lo[name] = float(base) - step
            fh, fl = float(f(hi)), float(f(lo))
            if not (math.isfinite(fh) and math.isfinite(fl)):
                raise ValueError(f"non-finite probe for parameter {name!r}")
            grads[name] = (fh - fl) / (2.0 * step)
    return grads
