"""Small arithmetic grammar for spatially varying inputs.

Allowed: numeric literals, ``x``, ``y``, ``pi``, ``+ - * /``, unary minus,
parentheses and the functions ``sin``, ``cos``, ``exp``.  Anything else is
rejected at parse time, so evaluation never touches Python builtins.
"""
from __future__ import annotations

import ast
import math

import numpy as np

__all__ = ["ExpressionError", "Expression", "parse_expression"]

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_CONSTS = {"pi": math.pi}
_VARS = ("x", "y")
_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
}


class ExpressionError(ValueError):
    """Invalid expression; ``col`` is 1-based within the expression text."""

    def __init__(self, message, text, col=None):
        self.text = text
        self.col = col
        where = f" at column {col}" if col is not None else ""
        super().__init__(f"{message}{where} in {text!r}")


def _check(node, text, variables):
    if isinstance(node, ast.Expression):
        return _check(node.body, text, variables)
    col = getattr(node, "col_offset", None)
    col = None if col is None else col + 1
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"unsupported literal {node.value!r}", text, col)
    elif isinstance(node, ast.Name):
        if node.id not in variables and node.id not in _CONSTS:
            raise ExpressionError(f"unknown name {node.id!r}", text, col)
    elif isinstance(node, ast.BinOp):
        if type(node.op) not in _BINOPS:
            raise ExpressionError("unsupported operator", text, col)
        _check(node.left, text, variables)
        _check(node.right, text, variables)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.USub, ast.UAdd)):
            raise ExpressionError("unsupported unary operator", text, col)
        _check(node.operand, text, variables)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
            raise ExpressionError("only sin, cos and exp may be called", text, col)
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError(f"{node.func.id} takes exactly one argument", text, col)
        _check(node.args[0], text, variables)
    else:
        raise ExpressionError(f"unsupported syntax {type(node).__name__}", text, col)


def _eval(node, env):
    if isinstance(node, ast.Expression):
        return _eval(node.body, env)
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return env[node.id] if node.id in env else _CONSTS[node.id]
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        v = _eval(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    return _FUNCS[node.func.id](_eval(node.args[0], env))


class Expression:
    """A parsed expression; call it with coordinate arrays."""

    def __init__(self, text, tree):
        self.text = text
        self._tree = tree

    def __call__(self, x, y=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        env = {"x": x, "y": np.zeros_like(x) if y is None else np.asarray(y, dtype=float)}
        with np.errstate(all="ignore"):
            out = _eval(self._tree, env)
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape).copy()

    def __repr__(self):
        return f"Expression({self.text!r})"


def parse_expression(text: str, variables=_VARS) -> Expression:
    """Parse ``text``; raises :class:`ExpressionError` with a column on failure."""
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("empty expression", str(text))
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"syntax error: {exc.msg}", text, exc.offset) from None
    _check(tree, text, variables)
    return Expression(text, tree)
