"""Small expression language with truncated Taylor arithmetic.

Expressions are plain arithmetic strings such as ``"tanh(x2) + 0.5*x1**2"``.
Allowed: numbers, variables, ``+ - * / **`` (constant exponents only) and
the functions ``tanh, sin, cos, exp``. ``pi`` is predefined.

Derivatives are exact: every expression can be evaluated on a :class:`Jet`,
a truncated Taylor series in one direction, so first and higher
derivatives come out without finite differences.
"""

import ast
import math

import numpy as np

from .errors import EvaluationError, SchemaError

FUNCTIONS = ("tanh", "sin", "cos", "exp")
CONSTANTS = {"pi": math.pi}


class Jet:
    """Truncated Taylor series ``sum_k c[k] s**k`` (coefficients f^(k)/k!)."""

    __slots__ = ("c",)

    def __init__(self, coeffs):
        self.c = list(coeffs)

    @property
    def order(self):
        return len(self.c) - 1

    @classmethod
    def variable(cls, value, order, slope=1.0):
        zero = np.zeros_like(np.asarray(value, dtype=float))
        c = [np.asarray(value, dtype=float) + zero, zero + slope]
        c += [zero] * (order - 1)
        return cls(c[: order + 1])

    @classmethod
    def const(cls, value, order):
        v = np.asarray(value, dtype=float)
        return cls([v] + [np.zeros_like(v)] * order)

    def derivative(self, k):
        return self.c[k] * math.factorial(k)

    def _lift(self, other):
        if isinstance(other, Jet):
            return other
        return Jet.const(other, self.order)

    def __add__(self, other):
        o = self._lift(other)
        return Jet([a + b for a, b in zip(self.c, o.c)])

    __radd__ = __add__

    def __neg__(self):
        return Jet([-a for a in self.c])

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        o = self._lift(other)
        K = self.order
        return Jet([sum(self.c[j] * o.c[k - j] for j in range(k + 1)) for k in range(K + 1)])

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        q = []
        for k in range(self.order + 1):
            acc = self.c[k] - sum(o.c[j] * q[k - j] for j in range(1, k + 1))
            q.append(acc / o.c[0])
        return Jet(q)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, r):
        if isinstance(r, Jet):
            raise EvaluationError("exponent must be a constant")
        r = float(r)
        if r.is_integer() and r >= 0:
            n = int(r)
            out = Jet.const(np.ones_like(self.c[0]), self.order)
            base = self
            while n:
                if n & 1:
                    out = out * base
                base = base * base
                n >>= 1
            return out
        if r.is_integer():
            return 1.0 / (self ** (-r))
        a0 = self.c[0]
        p = [a0 ** r]
        for k in range(1, self.order + 1):
            acc = sum(((r + 1) * j - k) * self.c[j] * p[k - j] for j in range(1, k + 1))
            p.append(acc / (k * a0))
        return Jet(p)

    def exp(self):
        e = [np.exp(self.c[0])]
        for k in range(1, self.order + 1):
            e.append(sum(j * self.c[j] * e[k - j] for j in range(1, k + 1)) / k)
        return Jet(e)

    def _sincos(self):
        s = [np.sin(self.c[0])]
        c = [np.cos(self.c[0])]
        for k in range(1, self.order + 1):
            s.append(sum(j * self.c[j] * c[k - j] for j in range(1, k + 1)) / k)
            c.append(-sum(j * self.c[j] * s[k - j] for j in range(1, k + 1)) / k)
        return Jet(s), Jet(c)

    def sin(self):
        return self._sincos()[0]

    def cos(self):
        return self._sincos()[1]

    def tanh(self):
        t = [np.tanh(self.c[0])]
        w = [1.0 - t[0] ** 2]
        for k in range(1, self.order + 1):
            t.append(sum(j * self.c[j] * w[k - j] for j in range(1, k + 1)) / k)
            w.append(-sum(t[i] * t[k - i] for i in range(k + 1)))
        return Jet(t)


_NUMPY_FUNCS = {"tanh": np.tanh, "sin": np.sin, "cos": np.cos, "exp": np.exp}


def _apply(name, arg):
    if isinstance(arg, Jet):
        return getattr(arg, name)()
    return _NUMPY_FUNCS[name](arg)


class Expression:
    """Parsed, validated expression.

    >>> Expression("x1**2 + 1")({"x1": 2.0})
    5.0
    """

    def __init__(self, source, variables=None, params=None):
        if not isinstance(source, str):
            source = repr(float(source))
        self.source = source
        self.params = dict(params or {})
        try:
            tree = ast.parse(source, mode="eval")
        except SyntaxError as exc:
            raise SchemaError(f"cannot parse expression {source!r}: {exc.msg}") from None
        self._tree = tree.body
        allowed = set(variables) if variables is not None else None
        self.names = set()
        self._check(self._tree, allowed)

    def _check(self, node, allowed):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise SchemaError(f"bad literal in {self.source!r}")
        elif isinstance(node, ast.Name):
            if node.id in CONSTANTS or node.id in self.params:
                return
            if allowed is not None and node.id not in allowed:
                raise SchemaError(f"unknown variable {node.id!r} in {self.source!r}")
            self.names.add(node.id)
        elif isinstance(node, ast.BinOp):
            if not isinstance(node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)):
                raise SchemaError(f"operator not allowed in {self.source!r}")
            self._check(node.left, allowed)
            self._check(node.right, allowed)
            if isinstance(node.op, ast.Pow) and not self._is_constant(node.right):
                raise SchemaError(f"exponent must be constant in {self.source!r}")
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.UAdd, ast.USub)):
                raise SchemaError(f"operator not allowed in {self.source!r}")
            self._check(node.operand, allowed)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                raise SchemaError(f"function not allowed in {self.source!r}")
            if len(node.args) != 1 or node.keywords:
                raise SchemaError(f"functions take one argument in {self.source!r}")
            self._check(node.args[0], allowed)
        else:
            raise SchemaError(f"construct not allowed in {self.source!r}")

    def _is_constant(self, node):
        if isinstance(node, ast.Constant):
            return True
        if isinstance(node, ast.Name):
            return node.id in CONSTANTS or node.id in self.params
        if isinstance(node, ast.UnaryOp):
            return self._is_constant(node.operand)
        if isinstance(node, ast.BinOp):
            return self._is_constant(node.left) and self._is_constant(node.right)
        return False

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id in env:
                return env[node.id]
            if node.id in self.params:
                return float(self.params[node.id])
            if node.id in CONSTANTS:
                return CONSTANTS[node.id]
            raise EvaluationError(f"variable {node.id!r} not supplied")
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp):
            a = self._eval(node.left, env)
            b = self._eval(node.right, env)
            op = node.op
            if isinstance(op, ast.Add):
                return a + b
            if isinstance(op, ast.Sub):
                return a - b
            if isinstance(op, ast.Mult):
                return a * b
            if isinstance(op, ast.Div):
                return a / b
            if isinstance(b, Jet):
                b = b.c[0]
            return a ** b
        return _apply(node.func.id, self._eval(node.args[0], env))

    def __call__(self, env):
        with np.errstate(all="ignore"):
            out = self._eval(self._tree, env)
        if isinstance(out, Jet):
            return out
        # constants must broadcast against the inputs
        shape = np.broadcast(*[np.asarray(v) for v in env.values()]).shape if env else ()
        out = np.asarray(out, dtype=float) + np.zeros(shape)
        if out.ndim == 0:
            out = float(out)
        return out

    def jet(self, env, direction, order):
        """Taylor jet of the expression along ``direction`` (dict of slopes)."""
        jenv = {}
        ref = np.broadcast(*[np.asarray(v, dtype=float) for v in env.values()])
        for name, value in env.items():
            v = np.asarray(value, dtype=float) + np.zeros(ref.shape)
            jenv[name] = Jet.variable(v, order, slope=direction.get(name, 0.0))
        with np.errstate(all="ignore"):
            out = self._eval(self._tree, jenv)
        if not isinstance(out, Jet):
            out = Jet.const(np.asarray(out, dtype=float) + np.zeros(ref.shape), order)
        return out

    def __repr__(self):
        return f"Expression({self.source!r})"


class Profile1D:
    """Scalar function of one variable with exact derivatives.

    Built from an expression in ``x`` (or ``x1``), or from a constant.
    """

    def __init__(self, source, var=None, params=None):
        if isinstance(source, (int, float)):
            source = repr(float(source))
        self.source = source
        probe = Expression(source, params=params)
        names = probe.names
        if var is None:
            var = next(iter(names)) if names else "x"
        if names - {var}:
            raise SchemaError(f"profile {source!r} must depend on {var!r} only")
        self.var = var
        self.expr = probe

    def __call__(self, x):
        return self.expr({self.var: np.asarray(x, dtype=float)})

    def derivatives(self, x, order):
        """Return [f, f', ..., f^(order)] at ``x``."""
        j = self.expr.jet({self.var: np.asarray(x, dtype=float)}, {self.var: 1.0}, order)
        return [j.derivative(k) for k in range(order + 1)]

    def d(self, x, k=1):
        return self.derivatives(x, k)[k]

    def is_constant(self):
        return not self.expr.names

    def __repr__(self):
        return f"Profile1D({self.source!r})"
