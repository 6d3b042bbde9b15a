"""Time-dependent coefficient functions: parsing, evaluation, derivatives.

All physical inputs of the oscillator pair (masses, angular frequencies,
drive forces, coupling strength) are scalar functions of time.  They are
represented as small immutable expression trees that evaluate vectorized
and expose analytic first and second time derivatives; the transformed
system needs mdot and mddot, so every node must be C^2 on the working
interval.

Two construction routes exist:

* :func:`parse` for the expression grammar

      expr   := term (('+'|'-') term)*
      term   := factor (('*'|'/') factor)*
      factor := ['-'] atom ['^' number]
      atom   := number | 't' | func '(' expr ')' | '(' expr ')'
      func   := 'exp' | 'sin' | 'cos'

* :class:`Tabulated` for sampled data (two-column CSV), evaluated by cubic
  interpolation with finite-difference derivatives on the sample grid.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np


class ParseError(ValueError):
    """Syntax or symbol error in a coefficient expression.

    Carries the 0-based ``position`` of the offending token in the source.
    """

    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class DomainError(ValueError):
    """Evaluation requested outside the validated domain of a function."""


# ---------------------------------------------------------------------------
# expression tree
# ---------------------------------------------------------------------------


class TimeFunction:
    """A scalar function of time with analytic first and second derivatives.

    Instances are immutable and evaluation is pure, so a TimeFunction may be
    shared freely across workers.  All three accessors accept a float or an
    ndarray and broadcast elementwise.
    """

    def eval(self, t):
        raise NotImplementedError

    def deriv1(self, t):
        raise NotImplementedError

    def deriv2(self, t):
        raise NotImplementedError

    def __call__(self, t):
        return self.eval(t)

    def to_source(self):
        """Render as a string that re-parses to a semantically equal tree."""
        raise NotImplementedError

    def validate_on(self, t_lo, t_hi, samples=1024):
        """Check that the function is usable on ``[t_lo, t_hi]``.

        Tabulated nodes must cover the interval; denominators must not
        cross zero (checked by sign sampling on a ``samples``-point grid);
        fractional powers need a positive base.  Raises
        :class:`DomainError` on the first violation.
        """
        grid = np.linspace(t_lo, t_hi, samples)
        self._validate(grid)

    def _validate(self, grid):
        for child in self._children():
            child._validate(grid)

    def _children(self):
        return ()

    def __str__(self):
        return self.to_source()


@dataclass(frozen=True)
class Constant(TimeFunction):
    value: float

    def eval(self, t):
        return self.value * np.ones_like(np.asarray(t, dtype=float))

    def deriv1(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    deriv2 = deriv1

    def to_source(self):
        return _fmt(self.value)


@dataclass(frozen=True)
class Exponential(TimeFunction):
    """``amplitude * exp(rate * t)``; rate has units of inverse time."""

    amplitude: float
    rate: float

    def eval(self, t):
        return self.amplitude * np.exp(self.rate * np.asarray(t, dtype=float))

    def deriv1(self, t):
        return self.rate * self.eval(t)

    def deriv2(self, t):
        return self.rate ** 2 * self.eval(t)

    def to_source(self):
        if self.amplitude == 1.0:
            return f"exp({_fmt(self.rate)}*t)"
        return f"{_fmt(self.amplitude)}*exp({_fmt(self.rate)}*t)"


@dataclass(frozen=True)
class Polynomial(TimeFunction):
    """``sum(coeffs[k] * t**k)`` with ascending coefficients."""

    coeffs: tuple

    def eval(self, t):
        return np.polynomial.polynomial.polyval(np.asarray(t, dtype=float), self.coeffs)

    def deriv1(self, t):
        c = np.polynomial.polynomial.polyder(self.coeffs)
        return np.polynomial.polynomial.polyval(np.asarray(t, dtype=float), c)

    def deriv2(self, t):
        c = np.polynomial.polynomial.polyder(self.coeffs, 2)
        return np.polynomial.polynomial.polyval(np.asarray(t, dtype=float), c)

    def to_source(self):
        parts = []
        for k, c in enumerate(self.coeffs):
            if c == 0.0 and len(self.coeffs) > 1:
                continue
            if k == 0:
                parts.append(_fmt(c))
            elif k == 1:
                parts.append(f"{_fmt(c)}*t")
            else:
                parts.append(f"{_fmt(c)}*t^{k}")
        return " + ".join(parts) if parts else "0"


@dataclass(frozen=True)
class Sinusoid(TimeFunction):
    """``amplitude * sin(omega * t + phase)``."""

    amplitude: float
    omega: float
    phase: float = 0.0

    def eval(self, t):
        return self.amplitude * np.sin(self.omega * np.asarray(t, dtype=float) + self.phase)

    def deriv1(self, t):
        return self.amplitude * self.omega * np.cos(
            self.omega * np.asarray(t, dtype=float) + self.phase
        )

    def deriv2(self, t):
        return -self.omega ** 2 * self.eval(t)

    def to_source(self):
        arg = f"{_fmt(self.omega)}*t"
        if self.phase != 0.0:
            arg += f" + {_fmt(self.phase)}"
        if self.amplitude == 1.0:
            return f"sin({arg})"
        return f"{_fmt(self.amplitude)}*sin({arg})"


class Tabulated(TimeFunction):
    """Sampled function given as strictly increasing ``(t, value)`` pairs.

    Evaluation uses a cubic spline (linear below four samples).  Derivatives
    are formed on the sample grid: fourth-order central stencils where the
    stencil fits and the spacing is uniform, second-order one-sided stencils
    at the ends, ``numpy.gradient`` on non-uniform grids.  Off-grid
    derivative values are linearly interpolated.  Noisy second differences
    would corrupt the effective frequencies, hence the high-order interior
    stencil.
    """

    def __init__(self, ts, values):
        ts = np.asarray(ts, dtype=float)
        values = np.asarray(values, dtype=float)
        if ts.ndim != 1 or ts.shape != values.shape:
            raise ValueError("tabulated data must be two equal-length 1-D arrays")
        if ts.size < 2:
            raise ValueError("tabulated function needs at least 2 samples")
        if not np.all(np.diff(ts) > 0):
            raise ValueError("tabulated sample times must strictly increase")
        self.ts = ts
        self.values = values
        if ts.size >= 4:
            from scipy.interpolate import CubicSpline

            self._spline = CubicSpline(ts, values)
        else:
            self._spline = None
        self._d1 = self._grid_derivative(values)
        self._d2 = self._grid_second_derivative(values)

    def _uniform_step(self):
        dt = np.diff(self.ts)
        if np.allclose(dt, dt[0], rtol=1e-9, atol=0.0):
            return dt[0]
        return None

    def _grid_derivative(self, f):
        h = self._uniform_step()
        n = f.size
        if h is None or n < 5:
            return np.gradient(f, self.ts)
        d = np.empty(n)
        d[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
        # 2nd-order one-sided / skewed stencils near the ends
        d[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
        d[1] = (f[2] - f[0]) / (2 * h)
        d[-2] = (f[-1] - f[-3]) / (2 * h)
        d[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
        return d

    def _grid_second_derivative(self, f):
        h = self._uniform_step()
        n = f.size
        if h is None or n < 5:
            return np.gradient(self._grid_derivative(f), self.ts)
        d = np.empty(n)
        d[2:-2] = (-f[:-4] + 16 * f[1:-3] - 30 * f[2:-2] + 16 * f[3:-1] - f[4:]) / (12 * h * h)
        d[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / (h * h)
        d[1] = (f[0] - 2 * f[1] + f[2]) / (h * h)
        d[-2] = (f[-3] - 2 * f[-2] + f[-1]) / (h * h)
        d[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / (h * h)
        return d

    def _check_range(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.ts[0] - 1e-12) or np.any(t > self.ts[-1] + 1e-12):
            raise DomainError(
                f"time outside tabulated range [{self.ts[0]}, {self.ts[-1]}]"
            )
        return t

    def eval(self, t):
        t = self._check_range(t)
        if self._spline is not None:
            return self._spline(t)
        return np.interp(t, self.ts, self.values)

    def deriv1(self, t):
        t = self._check_range(t)
        return np.interp(t, self.ts, self._d1)

    def deriv2(self, t):
        t = self._check_range(t)
        return np.interp(t, self.ts, self._d2)

    def to_source(self):
        return f"tabulated(n={self.ts.size})"

    def _validate(self, grid):
        self._check_range(grid)

    @classmethod
    def from_csv(cls, path):
        """Load two-column ``t,value`` CSV data; a non-numeric header is skipped."""
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                fields = [p.strip() for p in line.split(",")]
                try:
                    rows.append((float(fields[0]), float(fields[1])))
                except (ValueError, IndexError):
                    if not rows:
                        continue  # header line
                    raise ValueError(f"malformed CSV row: {line!r}")
        if len(rows) < 2:
            raise ValueError("tabulated function needs at least 2 samples")
        data = np.array(rows)
        return cls(data[:, 0], data[:, 1])


@dataclass(frozen=True)
class Sum(TimeFunction):
    terms: tuple

    def eval(self, t):
        out = self.terms[0].eval(t)
        for f in self.terms[1:]:
            out = out + f.eval(t)
        return out

    def deriv1(self, t):
        out = self.terms[0].deriv1(t)
        for f in self.terms[1:]:
            out = out + f.deriv1(t)
        return out

    def deriv2(self, t):
        out = self.terms[0].deriv2(t)
        for f in self.terms[1:]:
            out = out + f.deriv2(t)
        return out

    def to_source(self):
        return " + ".join(f"({f.to_source()})" for f in self.terms)

    def _children(self):
        return self.terms


@dataclass(frozen=True)
class Product(TimeFunction):
    left: TimeFunction
    right: TimeFunction

    def eval(self, t):
        return self.left.eval(t) * self.right.eval(t)

    def deriv1(self, t):
        return self.left.deriv1(t) * self.right.eval(t) + self.left.eval(t) * self.right.deriv1(t)

    def deriv2(self, t):
        return (
            self.left.deriv2(t) * self.right.eval(t)
            + 2 * self.left.deriv1(t) * self.right.deriv1(t)
            + self.left.eval(t) * self.right.deriv2(t)
        )

    def to_source(self):
        return f"({self.left.to_source()})*({self.right.to_source()})"

    def _children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Scale(TimeFunction):
    factor: float
    inner: TimeFunction

    def eval(self, t):
        return self.factor * self.inner.eval(t)

    def deriv1(self, t):
        return self.factor * self.inner.deriv1(t)

    def deriv2(self, t):
        return self.factor * self.inner.deriv2(t)

    def to_source(self):
        return f"{_fmt(self.factor)}*({self.inner.to_source()})"

    def _children(self):
        return (self.inner,)


@dataclass(frozen=True)
class Quotient(TimeFunction):
    num: TimeFunction
    den: TimeFunction

    def eval(self, t):
        return self.num.eval(t) / self.den.eval(t)

    def deriv1(self, t):
        g = self.den.eval(t)
        return (self.num.deriv1(t) * g - self.num.eval(t) * self.den.deriv1(t)) / (g * g)

    def deriv2(self, t):
        f, g = self.num.eval(t), self.den.eval(t)
        f1, g1 = self.num.deriv1(t), self.den.deriv1(t)
        f2, g2 = self.num.deriv2(t), self.den.deriv2(t)
        return (f2 * g * g - 2 * f1 * g1 * g - f * g2 * g + 2 * f * g1 * g1) / (g * g * g)

    def to_source(self):
        return f"({self.num.to_source()})/({self.den.to_source()})"

    def _children(self):
        return (self.num, self.den)

    def _validate(self, grid):
        super()._validate(grid)
        d = np.asarray(self.den.eval(grid))
        if np.any(np.abs(d) < 1e-300) or np.any(d > 0) and np.any(d < 0):
            raise DomainError(
                f"denominator ({self.den.to_source()}) crosses zero on the interval"
            )


@dataclass(frozen=True)
class Power(TimeFunction):
    """``base ** exponent`` with a constant real exponent."""

    base: TimeFunction
    exponent: float

    def eval(self, t):
        return np.power(self.base.eval(t), self.exponent)

    def deriv1(self, t):
        p = self.exponent
        return p * np.power(self.base.eval(t), p - 1) * self.base.deriv1(t)

    def deriv2(self, t):
        p = self.exponent
        b = self.base.eval(t)
        b1 = self.base.deriv1(t)
        return p * (p - 1) * np.power(b, p - 2) * b1 * b1 + p * np.power(b, p - 1) * self.base.deriv2(t)

    def to_source(self):
        return f"({self.base.to_source()})^{_fmt(self.exponent)}"

    def _children(self):
        return (self.base,)

    def _validate(self, grid):
        super()._validate(grid)
        b = np.asarray(self.base.eval(grid))
        if self.exponent != round(self.exponent):
            if np.any(b <= 0):
                raise DomainError(
                    f"fractional power of non-positive base ({self.base.to_source()})"
                )
        elif self.exponent < 0:
            if np.any(np.abs(b) < 1e-300) or (np.any(b > 0) and np.any(b < 0)):
                raise DomainError(
                    f"negative power of base crossing zero ({self.base.to_source()})"
                )


# unary wrappers for non-affine arguments of exp/sin/cos


@dataclass(frozen=True)
class ExpOf(TimeFunction):
    arg: TimeFunction

    def eval(self, t):
        return np.exp(self.arg.eval(t))

    def deriv1(self, t):
        return self.eval(t) * self.arg.deriv1(t)

    def deriv2(self, t):
        g1 = self.arg.deriv1(t)
        return self.eval(t) * (self.arg.deriv2(t) + g1 * g1)

    def to_source(self):
        return f"exp({self.arg.to_source()})"

    def _children(self):
        return (self.arg,)


@dataclass(frozen=True)
class SinOf(TimeFunction):
    arg: TimeFunction

    def eval(self, t):
        return np.sin(self.arg.eval(t))

    def deriv1(self, t):
        return np.cos(self.arg.eval(t)) * self.arg.deriv1(t)

    def deriv2(self, t):
        g = self.arg.eval(t)
        g1 = self.arg.deriv1(t)
        return np.cos(g) * self.arg.deriv2(t) - np.sin(g) * g1 * g1

    def to_source(self):
        return f"sin({self.arg.to_source()})"

    def _children(self):
        return (self.arg,)


@dataclass(frozen=True)
class CosOf(TimeFunction):
    arg: TimeFunction

    def eval(self, t):
        return np.cos(self.arg.eval(t))

    def deriv1(self, t):
        return -np.sin(self.arg.eval(t)) * self.arg.deriv1(t)

    def deriv2(self, t):
        g = self.arg.eval(t)
        g1 = self.arg.deriv1(t)
        return -np.sin(g) * self.arg.deriv2(t) - np.cos(g) * g1 * g1

    def to_source(self):
        return f"cos({self.arg.to_source()})"

    def _children(self):
        return (self.arg,)


class DerivedTimeFunction(TimeFunction):
    """Wrap arbitrary callables as a TimeFunction.

    Used for quantities computed from other TimeFunctions (effective
    frequencies, normal-mode frequencies, rotated forces).  When no
    derivative callables are supplied, central finite differences with
    roundoff-balanced steps are used.
    """

    def __init__(self, fn, d1=None, d2=None, label="derived"):
        self._fn = fn
        self._d1 = d1
        self._d2 = d2
        self.label = label

    def eval(self, t):
        return self._fn(np.asarray(t, dtype=float))

    def deriv1(self, t):
        if self._d1 is not None:
            return self._d1(np.asarray(t, dtype=float))
        t = np.asarray(t, dtype=float)
        h = 6e-6 * np.maximum(1.0, np.abs(t))
        return (self._fn(t + h) - self._fn(t - h)) / (2 * h)

    def deriv2(self, t):
        if self._d2 is not None:
            return self._d2(np.asarray(t, dtype=float))
        t = np.asarray(t, dtype=float)
        h = 1.2e-4 * np.maximum(1.0, np.abs(t))
        return (self._fn(t + h) - 2 * self._fn(t) + self._fn(t - h)) / (h * h)

    def to_source(self):
        return f"<{self.label}>"


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)

_FUNCS = ("exp", "sin", "cos")


@dataclass
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.lastgroup is None:
            stripped = source[pos:].lstrip()
            if not stripped:
                break
            raise ParseError(f"unexpected character {stripped[0]!r}", len(source) - len(stripped))
        tokens.append(_Token(m.lastgroup, m.group(m.lastgroup), m.start(m.lastgroup)))
        pos = m.end()
    tokens.append(_Token("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        tok = self.next()
        if tok.kind != "op" or tok.text != op:
            raise ParseError(f"expected {op!r}, found {tok.text or 'end of input'!r}", tok.pos)
        return tok

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ParseError(f"unexpected trailing input {tok.text!r}", tok.pos)
        return node

    def expr(self):
        terms = [self.term()]
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.next().text
            rhs = self.term()
            terms.append(rhs if op == "+" else _negate(rhs))
        if len(terms) == 1:
            return terms[0]
        return Sum(tuple(terms))

    def term(self):
        node = self.factor()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.next().text
            rhs = self.factor()
            node = _multiply(node, rhs) if op == "*" else _divide(node, rhs, self.peek().pos)
        return node

    def factor(self):
        negated = False
        if self.peek().kind == "op" and self.peek().text == "-":
            self.next()
            negated = True
        node = self.atom()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.next()
            node = _power(node, self._exponent())
        return _negate(node) if negated else node

    def _exponent(self):
        sign = 1.0
        if self.peek().kind == "op" and self.peek().text == "-":
            self.next()
            sign = -1.0
        tok = self.next()
        if tok.kind != "number":
            raise ParseError("exponent must be a number", tok.pos)
        return sign * float(tok.text)

    def atom(self):
        tok = self.next()
        if tok.kind == "number":
            return Constant(float(tok.text))
        if tok.kind == "ident":
            if tok.text == "t":
                return Polynomial((0.0, 1.0))
            if tok.text in _FUNCS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return _apply_func(tok.text, arg)
            raise ParseError(f"unknown identifier {tok.text!r}", tok.pos)
        if tok.kind == "op" and tok.text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ParseError(f"unexpected token {tok.text or 'end of input'!r}", tok.pos)


def _is_const(node):
    return isinstance(node, Constant)


def _negate(node):
    return _scale(-1.0, node)


def _scale(c, node):
    """Fold a scalar factor into amplitude-bearing nodes where possible."""
    if c == 1.0:
        return node
    if isinstance(node, Constant):
        return Constant(c * node.value)
    if isinstance(node, Exponential):
        return Exponential(c * node.amplitude, node.rate)
    if isinstance(node, Sinusoid):
        return Sinusoid(c * node.amplitude, node.omega, node.phase)
    if isinstance(node, Polynomial):
        return Polynomial(tuple(c * x for x in node.coeffs))
    if isinstance(node, Scale):
        return _scale(c * node.factor, node.inner)
    return Scale(c, node)


def _multiply(a, b):
    if _is_const(a) and _is_const(b):
        return Constant(a.value * b.value)
    if _is_const(a):
        return _scale(a.value, b)
    if _is_const(b):
        return _scale(b.value, a)
    return Product(a, b)


def _divide(a, b, pos):
    if _is_const(b):
        if b.value == 0.0:
            raise ParseError("division by constant zero", pos)
        return _scale(1.0 / b.value, a)
    return Quotient(a, b)


def _power(base, exponent):
    if exponent == 0.0:
        return Constant(1.0)
    if exponent == 1.0:
        return base
    if _is_const(base):
        return Constant(base.value ** exponent)
    return Power(base, exponent)


def _as_affine(node):
    """Return (a, b) if ``node`` is a + b*t, else None."""
    if isinstance(node, Constant):
        return (node.value, 0.0)
    if isinstance(node, Polynomial) and len(node.coeffs) <= 2:
        c = tuple(node.coeffs) + (0.0, 0.0)
        return (c[0], c[1])
    if isinstance(node, Scale):
        inner = _as_affine(node.inner)
        if inner is not None:
            return (node.factor * inner[0], node.factor * inner[1])
        return None
    if isinstance(node, Sum):
        a, b = 0.0, 0.0
        for term in node.terms:
            ab = _as_affine(term)
            if ab is None:
                return None
            a, b = a + ab[0], b + ab[1]
        return (a, b)
    if isinstance(node, Product):
        la, ra = _as_affine(node.left), _as_affine(node.right)
        if la is not None and la[1] == 0.0 and ra is not None:
            return (la[0] * ra[0], la[0] * ra[1])
        if ra is not None and ra[1] == 0.0 and la is not None:
            return (ra[0] * la[0], ra[0] * la[1])
        return None
    return None


def _apply_func(name, arg):
    """Lower exp/sin/cos with affine arguments to their parametric nodes."""
    affine = _as_affine(arg)
    if affine is not None:
        a, b = affine
        if name == "exp":
            return Exponential(math.exp(a), b)
        if name == "sin":
            return Sinusoid(1.0, b, a)
        if name == "cos":
            return Sinusoid(1.0, b, a + math.pi / 2)
    if name == "exp":
        return ExpOf(arg)
    if name == "sin":
        return SinOf(arg)
    return CosOf(arg)


def parse(source):
    """Parse an expression into a :class:`TimeFunction`.

    Raises :class:`ParseError` with the offending position on syntax
    errors and unknown identifiers.
    """
    return _Parser(source).parse()


def _fmt(x):
    """Shortest representation that round-trips the double exactly."""
    return repr(float(x))
