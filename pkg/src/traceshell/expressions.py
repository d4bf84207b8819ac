"""Closed-form scalar fields on R^3: expression trees, derivatives, intervals.

Expressions are immutable, hash-consed DAG nodes over the variables x, y, z
with the node set {constant, variable, +, -, *, /, integer power, sin, cos,
exp, sqrt}.  The set is closed under differentiation, so level-set functions
and manufactured displacement fields can be differentiated symbolically to
any order needed (fourth order for the strong-form force chain).

Evaluation is vectorized: every node maps to one numpy operation over the
whole batch of points.  Interval evaluation returns a guaranteed enclosure
of the range over an axis-aligned box (natural interval extension, each
elementary operation widened outward by a few ulps).
"""

from __future__ import annotations

import math
import re

import numpy as np

_EPS4 = 4.0 * np.finfo(float).eps
_TINY = 1e-300

VAR_NAMES = ("x", "y", "z")


class ExpressionError(ValueError):
    """Malformed expression text or unsupported operation."""


class IntervalDomainError(ArithmeticError):
    """An elementary operation is undefined somewhere on the interval."""


class EvalDomainError(ArithmeticError):
    """Point evaluation hit a singular node (division by zero, sqrt of negative)."""


# ---------------------------------------------------------------------------
# interval arithmetic
# ---------------------------------------------------------------------------

def _widen(lo, hi):
    # outward rounding surrogate: a few ulps per elementary operation keeps
    # containment without directed-rounding support
    lo = lo - (_EPS4 * np.abs(lo) + _TINY)
    hi = hi + (_EPS4 * np.abs(hi) + _TINY)
    return lo, hi


class Interval:
    """Closed interval [lo, hi]; lo/hi may be scalars or equal-shape arrays."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi, widen: bool = False):
        if widen:
            lo, hi = _widen(np.asarray(lo, float), np.asarray(hi, float))
        self.lo = lo
        self.hi = hi

    def __repr__(self):
        return f"Interval({self.lo}, {self.hi})"

    def contains_zero(self):
        return np.logical_and(self.lo <= 0.0, self.hi >= 0.0)

    def excludes_zero(self):
        return np.logical_or(self.lo > 0.0, self.hi < 0.0)

    def min_abs(self):
        """Lower bound on |f| over the box (0 where the interval straddles 0)."""
        return np.where(self.contains_zero(), 0.0, np.minimum(np.abs(self.lo), np.abs(self.hi)))

    def __add__(self, other):
        return Interval(self.lo + other.lo, self.hi + other.hi, widen=True)

    def __sub__(self, other):
        return Interval(self.lo - other.hi, self.hi - other.lo, widen=True)

    def __mul__(self, other):
        a = self.lo * other.lo
        b = self.lo * other.hi
        c = self.hi * other.lo
        d = self.hi * other.hi
        lo = np.minimum(np.minimum(a, b), np.minimum(c, d))
        hi = np.maximum(np.maximum(a, b), np.maximum(c, d))
        return Interval(lo, hi, widen=True)

    def __truediv__(self, other):
        if np.any(np.logical_and(other.lo <= 0.0, other.hi >= 0.0)):
            raise IntervalDomainError("division by an interval containing zero")
        inv = Interval(1.0 / other.hi, 1.0 / other.lo, widen=True)
        return self * inv

    def neg(self):
        return Interval(-self.hi, -self.lo)

    def power(self, n: int):
        if n == 0:
            return Interval(np.ones_like(np.asarray(self.lo, float)), np.ones_like(np.asarray(self.hi, float)))
        if n < 0:
            return Interval(1.0, 1.0) / self.power(-n)
        a = np.asarray(self.lo, float) ** n
        b = np.asarray(self.hi, float) ** n
        if n % 2 == 1:
            return Interval(a, b, widen=True)
        lo = np.where(self.contains_zero(), 0.0, np.minimum(a, b))
        hi = np.maximum(a, b)
        return Interval(lo, hi, widen=True)

    def sqrt(self):
        if np.any(self.lo < 0.0):
            raise IntervalDomainError("sqrt of an interval reaching below zero")
        return Interval(np.sqrt(self.lo), np.sqrt(self.hi), widen=True)

    def exp(self):
        return Interval(np.exp(self.lo), np.exp(self.hi), widen=True)

    def sin(self):
        return _interval_sin(self.lo, self.hi)

    def cos(self):
        # cos(x) = sin(x + pi/2); the half-pi shift is widened like any op
        lo, hi = _widen(np.asarray(self.lo, float) + 0.5 * np.pi, np.asarray(self.hi, float) + 0.5 * np.pi)
        return _interval_sin(lo, hi)


def _interval_sin(lo, hi):
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    slo = np.sin(lo)
    shi = np.sin(hi)
    out_lo = np.minimum(slo, shi)
    out_hi = np.maximum(slo, shi)
    two_pi = 2.0 * np.pi
    # a maximum lies inside iff some pi/2 + 2*pi*k is in [lo, hi]
    has_max = np.floor((hi - 0.5 * np.pi) / two_pi) >= np.ceil((lo - 0.5 * np.pi) / two_pi)
    has_min = np.floor((hi + 0.5 * np.pi) / two_pi) >= np.ceil((lo + 0.5 * np.pi) / two_pi)
    wide = (hi - lo) >= two_pi
    out_hi = np.where(np.logical_or(has_max, wide), 1.0, out_hi)
    out_lo = np.where(np.logical_or(has_min, wide), -1.0, out_lo)
    lo2, hi2 = _widen(out_lo, out_hi)
    return Interval(np.maximum(lo2, -1.0), np.minimum(hi2, 1.0))


# ---------------------------------------------------------------------------
# expression nodes
# ---------------------------------------------------------------------------

_INTERN: dict = {}


def _make(kind, args, payload=None):
    key = (kind, payload, tuple(id(a) for a in args))
    node = _INTERN.get(key)
    if node is None:
        node = Expr(kind, args, payload)
        _INTERN[key] = node
    return node


def as_expr(value) -> "Expr":
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float, np.integer, np.floating)):
        return constant(float(value))
    raise ExpressionError(f"cannot interpret {value!r} as an expression")


def constant(value: float) -> "Expr":
    value = float(value)
    if math.isnan(value) or math.isinf(value):
        raise ExpressionError("non-finite constant")
    return _make("const", (), value)


def variable(axis) -> "Expr":
    if isinstance(axis, str):
        axis = VAR_NAMES.index(axis)
    if axis not in (0, 1, 2):
        raise ExpressionError(f"variable axis must be 0..2, got {axis}")
    return _make("var", (), axis)


class Expr:
    """One node of an immutable expression DAG; build through the operators."""

    __slots__ = ("kind", "args", "payload", "_derivs", "_prog")

    def __init__(self, kind, args, payload=None):
        self.kind = kind
        self.args = args
        self.payload = payload
        self._derivs = {}
        self._prog = None

    # -- construction -------------------------------------------------------
    # ndarray operands defer to numpy so object arrays broadcast elementwise

    def __add__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented
        other = as_expr(other)
        if self.kind == "const" and other.kind == "const":
            return constant(self.payload + other.payload)
        if self.kind == "const" and self.payload == 0.0:
            return other
        if other.kind == "const" and other.payload == 0.0:
            return self
        return _make("add", (self, other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented
        other = as_expr(other)
        if self.kind == "const" and other.kind == "const":
            return constant(self.payload - other.payload)
        if other.kind == "const" and other.payload == 0.0:
            return self
        return _make("sub", (self, other))

    def __rsub__(self, other):
        return as_expr(other) - self

    def __mul__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented
        other = as_expr(other)
        if self.kind == "const" and other.kind == "const":
            return constant(self.payload * other.payload)
        for a, b in ((self, other), (other, self)):
            if a.kind == "const":
                if a.payload == 0.0:
                    return a
                if a.payload == 1.0:
                    return b
        return _make("mul", (self, other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented
        other = as_expr(other)
        if other.kind == "const":
            if other.payload == 0.0:
                raise ExpressionError("division by constant zero")
            if other.payload == 1.0:
                return self
        if self.kind == "const" and self.payload == 0.0:
            return self
        if self.kind == "const" and other.kind == "const":
            return constant(self.payload / other.payload)
        return _make("div", (self, other))

    def __rtruediv__(self, other):
        return as_expr(other) / self

    def __neg__(self):
        return constant(-1.0) * self

    def __pow__(self, n):
        if isinstance(n, np.ndarray):
            return NotImplemented
        if isinstance(n, float):
            if n == 0.5:
                return self.sqrt()
            if not n.is_integer():
                raise ExpressionError("only integer powers and sqrt are supported")
            n = int(n)
        if not isinstance(n, (int, np.integer)):
            raise ExpressionError("exponent must be an integer")
        n = int(n)
        if n == 0:
            return constant(1.0)
        if n == 1:
            return self
        if self.kind == "const":
            return constant(self.payload ** n)
        return _make("pow", (self,), n)

    def sin(self):
        if self.kind == "const":
            return constant(math.sin(self.payload))
        return _make("sin", (self,))

    def cos(self):
        if self.kind == "const":
            return constant(math.cos(self.payload))
        return _make("cos", (self,))

    def exp(self):
        if self.kind == "const":
            return constant(math.exp(self.payload))
        return _make("exp", (self,))

    def sqrt(self):
        if self.kind == "const":
            if self.payload < 0.0:
                raise ExpressionError("sqrt of negative constant")
            return constant(math.sqrt(self.payload))
        return _make("sqrt", (self,))

    # -- differentiation ----------------------------------------------------

    def diff(self, axis) -> "Expr":
        """Exact partial derivative with respect to x, y or z (again an Expr)."""
        if isinstance(axis, str):
            axis = VAR_NAMES.index(axis)
        cached = self._derivs.get(axis)
        if cached is not None:
            return cached
        k = self.kind
        if k == "const":
            d = constant(0.0)
        elif k == "var":
            d = constant(1.0 if self.payload == axis else 0.0)
        elif k == "add":
            d = self.args[0].diff(axis) + self.args[1].diff(axis)
        elif k == "sub":
            d = self.args[0].diff(axis) - self.args[1].diff(axis)
        elif k == "mul":
            a, b = self.args
            d = a.diff(axis) * b + a * b.diff(axis)
        elif k == "div":
            a, b = self.args
            d = (a.diff(axis) * b - a * b.diff(axis)) / (b * b)
        elif k == "pow":
            (a,) = self.args
            n = self.payload
            d = constant(float(n)) * a ** (n - 1) * a.diff(axis)
        elif k == "sin":
            d = self.args[0].cos() * self.args[0].diff(axis)
        elif k == "cos":
            d = -self.args[0].sin() * self.args[0].diff(axis)
        elif k == "exp":
            d = self * self.args[0].diff(axis)
        elif k == "sqrt":
            d = self.args[0].diff(axis) / (constant(2.0) * self)
        else:  # pragma: no cover
            raise ExpressionError(f"unknown node kind {k}")
        self._derivs[axis] = d
        return d

    def diff_multi(self, alpha) -> "Expr":
        """Derivative for a multi-index (ax, ay, az)."""
        e = self
        for axis, count in enumerate(alpha):
            for _ in range(count):
                e = e.diff(axis)
        return e

    # -- evaluation ----------------------------------------------------------

    def __call__(self, pts):
        """Evaluate at points.

        ``pts`` is an (N, 3) array, a length-3 sequence of coordinate arrays,
        or a single 3-vector.  Returns an (N,) array (scalar for a 3-vector).
        """
        scalar = False
        if isinstance(pts, (tuple, list)) and len(pts) == 3:
            coords = [np.asarray(c, float) for c in pts]
        else:
            pts = np.asarray(pts, float)
            if pts.ndim == 1:
                scalar = True
                pts = pts[None, :]
            coords = [pts[:, 0], pts[:, 1], pts[:, 2]]
        out = eval_many(self, coords)
        if scalar:
            return float(out[0])
        return out

    def interval(self, box_intervals) -> Interval:
        """Enclosure of the range over a box given as three (lo, hi) pairs."""
        return interval_eval(self, box_intervals)

    def substitute(self, axis, value) -> "Expr":
        """Replace one coordinate with a constant or another expression."""
        if isinstance(axis, str):
            axis = VAR_NAMES.index(axis)
        value = as_expr(value)
        memo = {}

        def rec(node):
            got = memo.get(id(node))
            if got is not None:
                return got
            if node.kind == "var":
                out = value if node.payload == axis else node
            elif node.kind == "const":
                out = node
            else:
                out = _rebuild(node, tuple(rec(a) for a in node.args))
            memo[id(node)] = out
            return out

        return rec(self)

    # -- misc -----------------------------------------------------------------

    def node_count(self) -> int:
        seen = set()
        stack = [self]
        while stack:
            n = stack.pop()
            if id(n) in seen:
                continue
            seen.add(id(n))
            stack.extend(n.args)
        return len(seen)

    def __repr__(self):
        return f"Expr<{to_text(self)}>"


def _rebuild(node, new_args):
    k = node.kind
    if k == "add":
        return new_args[0] + new_args[1]
    if k == "sub":
        return new_args[0] - new_args[1]
    if k == "mul":
        return new_args[0] * new_args[1]
    if k == "div":
        return new_args[0] / new_args[1]
    if k == "pow":
        return new_args[0] ** node.payload
    if k in ("sin", "cos", "exp", "sqrt"):
        return getattr(new_args[0], k)()
    raise ExpressionError(f"cannot rebuild node kind {k}")


def _compile(root: Expr) -> list:
    """Flat postorder program: (kind, payload, arg slots..., own slot)."""
    if root._prog is not None:
        return root._prog
    slots: dict[int, int] = {}
    prog = []
    stack = [root]
    while stack:
        node = stack[-1]
        if id(node) in slots:
            stack.pop()
            continue
        pending = [a for a in node.args if id(a) not in slots]
        if pending:
            stack.extend(pending)
            continue
        stack.pop()
        slot = len(prog)
        slots[id(node)] = slot
        prog.append((node.kind, node.payload, tuple(slots[id(a)] for a in node.args), slot))
    root._prog = prog
    return prog


def eval_many(root: Expr, coords) -> np.ndarray:
    """Evaluate a DAG once over a batch of points (one numpy op per node)."""
    prog = _compile(root)
    regs = [None] * len(prog)
    for kind, payload, args, slot in prog:
        if kind == "const":
            v = payload
        elif kind == "var":
            v = coords[payload]
        elif kind == "add":
            v = regs[args[0]] + regs[args[1]]
        elif kind == "sub":
            v = regs[args[0]] - regs[args[1]]
        elif kind == "mul":
            v = regs[args[0]] * regs[args[1]]
        elif kind == "div":
            denom = regs[args[1]]
            if np.any(denom == 0.0):
                raise EvalDomainError("division by zero during evaluation")
            v = regs[args[0]] / denom
        elif kind == "pow":
            v = regs[args[0]] ** payload
        elif kind == "sqrt":
            arg = regs[args[0]]
            if np.any(arg < 0.0):
                raise EvalDomainError("sqrt of negative value during evaluation")
            v = np.sqrt(arg)
        elif kind == "sin":
            v = np.sin(regs[args[0]])
        elif kind == "cos":
            v = np.cos(regs[args[0]])
        else:
            v = np.exp(regs[args[0]])
        regs[slot] = v
    out = regs[-1]
    shape = np.broadcast_shapes(*[np.shape(c) for c in coords])
    return np.broadcast_to(np.asarray(out, float), shape).copy()


def eval_scalar(root: Expr, x: float, y: float, z: float) -> float:
    """Pure-float evaluation at one point (fast path for root finding)."""
    coords = (x, y, z)
    prog = _compile(root)
    regs = [0.0] * len(prog)
    for kind, payload, args, slot in prog:
        if kind == "const":
            v = payload
        elif kind == "var":
            v = coords[payload]
        elif kind == "add":
            v = regs[args[0]] + regs[args[1]]
        elif kind == "sub":
            v = regs[args[0]] - regs[args[1]]
        elif kind == "mul":
            v = regs[args[0]] * regs[args[1]]
        elif kind == "div":
            d = regs[args[1]]
            if d == 0.0:
                raise EvalDomainError("division by zero during evaluation")
            v = regs[args[0]] / d
        elif kind == "pow":
            v = regs[args[0]] ** payload
        elif kind == "sqrt":
            a = regs[args[0]]
            if a < 0.0:
                raise EvalDomainError("sqrt of negative value during evaluation")
            v = math.sqrt(a)
        elif kind == "sin":
            v = math.sin(regs[args[0]])
        elif kind == "cos":
            v = math.cos(regs[args[0]])
        else:
            v = math.exp(regs[args[0]])
        regs[slot] = v
    return regs[-1]


def _sw(lo: float, hi: float):
    return lo - (_EPS4 * abs(lo) + _TINY), hi + (_EPS4 * abs(hi) + _TINY)


def _ssin(lo: float, hi: float):
    two_pi = 2.0 * math.pi
    if hi - lo >= two_pi:
        return -1.0, 1.0
    slo, shi = math.sin(lo), math.sin(hi)
    out_lo, out_hi = min(slo, shi), max(slo, shi)
    if math.floor((hi - 0.5 * math.pi) / two_pi) >= math.ceil((lo - 0.5 * math.pi) / two_pi):
        out_hi = 1.0
    if math.floor((hi + 0.5 * math.pi) / two_pi) >= math.ceil((lo + 0.5 * math.pi) / two_pi):
        out_lo = -1.0
    lo2, hi2 = _sw(out_lo, out_hi)
    return max(lo2, -1.0), min(hi2, 1.0)


def interval_bounds(root: Expr, box_intervals) -> tuple:
    """Scalar natural interval extension: widened (lo, hi) as plain floats.

    Same containment contract as interval_eval but an order of magnitude
    faster for single boxes; the quadrature recursion leans on this.
    """
    ivs = [(float(lo), float(hi)) for lo, hi in box_intervals]
    prog = _compile(root)
    regs = [(0.0, 0.0)] * len(prog)
    for k, payload, args, slot in prog:
        if k == "const":
            v = (payload, payload)
        elif k == "var":
            v = ivs[payload]
        elif k == "add":
            (a0, a1), (b0, b1) = regs[args[0]], regs[args[1]]
            v = _sw(a0 + b0, a1 + b1)
        elif k == "sub":
            (a0, a1), (b0, b1) = regs[args[0]], regs[args[1]]
            v = _sw(a0 - b1, a1 - b0)
        elif k == "mul":
            (a0, a1), (b0, b1) = regs[args[0]], regs[args[1]]
            c = (a0 * b0, a0 * b1, a1 * b0, a1 * b1)
            v = _sw(min(c), max(c))
        elif k == "div":
            (a0, a1), (b0, b1) = regs[args[0]], regs[args[1]]
            if b0 <= 0.0 <= b1:
                raise IntervalDomainError("division by an interval containing zero")
            r0, r1 = _sw(1.0 / b1, 1.0 / b0)
            c = (a0 * r0, a0 * r1, a1 * r0, a1 * r1)
            v = _sw(min(c), max(c))
        elif k == "pow":
            a0, a1 = regs[args[0]]
            n = payload
            if n < 0:
                if a0 <= 0.0 <= a1:
                    raise IntervalDomainError("negative power of interval containing zero")
                p0, p1 = sorted((a0 ** n, a1 ** n))
                v = _sw(p0, p1)
            elif n % 2 == 1:
                v = _sw(a0 ** n, a1 ** n)
            else:
                p0, p1 = a0 ** n, a1 ** n
                lo = 0.0 if a0 <= 0.0 <= a1 else min(p0, p1)
                v = _sw(lo, max(p0, p1))
        elif k == "sqrt":
            a0, a1 = regs[args[0]]
            if a0 < 0.0:
                raise IntervalDomainError("sqrt of an interval reaching below zero")
            v = _sw(math.sqrt(a0), math.sqrt(a1))
        elif k == "exp":
            a0, a1 = regs[args[0]]
            v = _sw(math.exp(a0), math.exp(a1))
        elif k == "sin":
            v = _ssin(*regs[args[0]])
        elif k == "cos":
            a0, a1 = regs[args[0]]
            v = _ssin(*_sw(a0 + 0.5 * math.pi, a1 + 0.5 * math.pi))
        else:  # pragma: no cover
            raise ExpressionError(f"unknown node kind {k}")
        regs[slot] = v
    return regs[-1]


def interval_eval(root: Expr, box_intervals) -> Interval:
    """Natural interval extension over a box (three (lo, hi) pairs).

    The result is a guaranteed superset of the exact range; each elementary
    operation widens outward, so containment survives floating point.
    """
    ivs = [Interval(np.asarray(lo, float), np.asarray(hi, float)) for lo, hi in box_intervals]
    memo: dict[int, Interval] = {}
    stack = [root]
    while stack:
        node = stack[-1]
        if id(node) in memo:
            stack.pop()
            continue
        pending = [a for a in node.args if id(a) not in memo]
        if pending:
            stack.extend(pending)
            continue
        stack.pop()
        k = node.kind
        if k == "const":
            v = Interval(node.payload, node.payload)
        elif k == "var":
            v = ivs[node.payload]
        elif k == "add":
            v = memo[id(node.args[0])] + memo[id(node.args[1])]
        elif k == "sub":
            v = memo[id(node.args[0])] - memo[id(node.args[1])]
        elif k == "mul":
            v = memo[id(node.args[0])] * memo[id(node.args[1])]
        elif k == "div":
            v = memo[id(node.args[0])] / memo[id(node.args[1])]
        elif k == "pow":
            v = memo[id(node.args[0])].power(node.payload)
        else:
            v = getattr(memo[id(node.args[0])], k)()
        memo[id(node)] = v
    return memo[id(root)]


def check_finite_on(expr: Expr, box_intervals) -> Interval:
    """Verify by interval evaluation that ``expr`` is finite on the box.

    Returns the computed enclosure; raises ExpressionError when a singular
    node (division by zero, sqrt of negative) cannot be excluded.
    """
    try:
        iv = interval_eval(expr, box_intervals)
    except IntervalDomainError as err:
        raise ExpressionError(f"expression may be singular on the box: {err}") from err
    if not (np.all(np.isfinite(iv.lo)) and np.all(np.isfinite(iv.hi))):
        raise ExpressionError("expression range unbounded on the box")
    return iv


# ---------------------------------------------------------------------------
# derivative tables
# ---------------------------------------------------------------------------

def multi_indices(order: int):
    """All multi-indices (ax, ay, az) with |alpha| <= order."""
    out = []
    for total in range(order + 1):
        for ax in range(total + 1):
            for ay in range(total - ax + 1):
                out.append((ax, ay, total - ax - ay))
    return out


def eval_derivs(f: Expr, x, order: int) -> dict:
    """Table of all partial derivatives of ``f`` at ``x`` up to ``order``.

    Keys are multi-indices (ax, ay, az); values are floats (arrays when ``x``
    is a batch of points).  Symmetry in index permutations holds by
    construction since mixed derivatives are generated in a canonical order.
    """
    if order < 0 or order > 4:
        raise ExpressionError("derivative order must be in 0..4")
    return {alpha: f.diff_multi(alpha)(x) for alpha in multi_indices(order)}


def gradient_exprs(f: Expr):
    """The three first partials as an object array."""
    g = np.empty(3, dtype=object)
    for d in range(3):
        g[d] = f.diff(d)
    return g


def hessian_exprs(f: Expr):
    h = np.empty((3, 3), dtype=object)
    for i in range(3):
        for j in range(3):
            h[i, j] = f.diff(i).diff(j)
    return h


# ---------------------------------------------------------------------------
# parsing: infix syntax with x, y, z, + - * / ^, sin cos exp sqrt, literals
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[()+\-*/^,]))"
)

_FUNCTIONS = ("sin", "cos", "exp", "sqrt")
_CONSTANTS = {"pi": math.pi}


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].strip()
            if not stripped:
                break
            raise ExpressionError(f"cannot tokenize {stripped[:12]!r} at position {pos}")
        pos = m.end()
        if m.lastgroup == "num":
            tokens.append(("num", float(m.group("num"))))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group("name")))
        else:
            op = m.group("op")
            tokens.append(("op", "^" if op == "**" else op))
    tokens.append(("end", None))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, val = self.take()
        if kind != "op" or val != op:
            raise ExpressionError(f"expected {op!r}, got {val!r}")

    def parse(self):
        e = self.expr()
        if self.peek()[0] != "end":
            raise ExpressionError(f"unexpected trailing token {self.peek()[1]!r}")
        return e

    def expr(self):
        kind, val = self.peek()
        negate = False
        while kind == "op" and val in ("+", "-"):
            self.take()
            if val == "-":
                negate = not negate
            kind, val = self.peek()
        e = self.term()
        if negate:
            e = -e
        while True:
            kind, val = self.peek()
            if kind == "op" and val in ("+", "-"):
                self.take()
                rhs = self.term()
                e = e + rhs if val == "+" else e - rhs
            else:
                return e

    def term(self):
        e = self.unary()
        while True:
            kind, val = self.peek()
            if kind == "op" and val in ("*", "/"):
                self.take()
                rhs = self.unary()
                e = e * rhs if val == "*" else e / rhs
            else:
                return e

    def unary(self):
        kind, val = self.peek()
        if kind == "op" and val in ("+", "-"):
            self.take()
            inner = self.unary()
            return -inner if val == "-" else inner
        return self.power()

    def power(self):
        base = self.atom()
        kind, val = self.peek()
        if kind == "op" and val == "^":
            self.take()
            exp = self.unary()  # right associative, allows -2 exponents
            if exp.kind != "const":
                raise ExpressionError("exponent must be a constant")
            p = exp.payload
            if p == 0.5:
                return base.sqrt()
            if not float(p).is_integer():
                raise ExpressionError("only integer exponents and ^0.5 are supported")
            return base ** int(p)
        return base

    def atom(self):
        kind, val = self.take()
        if kind == "num":
            return constant(val)
        if kind == "name":
            if val in VAR_NAMES:
                return variable(val)
            if val in _CONSTANTS:
                return constant(_CONSTANTS[val])
            if val in _FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return getattr(arg, val)()
            raise ExpressionError(f"unknown identifier {val!r}")
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        raise ExpressionError(f"unexpected token {val!r}")


def parse_expression(text: str) -> Expr:
    """Parse plain-text infix syntax into an expression DAG."""
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("empty expression")
    return _Parser(_tokenize(text)).parse()


def to_text(e: Expr) -> str:
    """Serialize back to the infix syntax (parse(to_text(e)) evaluates equal)."""
    k = e.kind
    if k == "const":
        return repr(e.payload)
    if k == "var":
        return VAR_NAMES[e.payload]
    if k in ("add", "sub"):
        op = "+" if k == "add" else "-"
        return f"({to_text(e.args[0])} {op} {to_text(e.args[1])})"
    if k in ("mul", "div"):
        op = "*" if k == "mul" else "/"
        return f"({to_text(e.args[0])} {op} {to_text(e.args[1])})"
    if k == "pow":
        return f"({to_text(e.args[0])})^{e.payload}"
    return f"{k}({to_text(e.args[0])})"


X, Y, Z = variable(0), variable(1), variable(2)
