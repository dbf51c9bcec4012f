"""Safe evaluation of small arithmetic expressions such as ``"0.5*sin(x)*y"``.

Only numeric literals, the variables handed to :func:`compile_expression`,
the constants ``pi`` and ``e`` and a fixed set of numpy ufuncs are allowed.
"""

import ast

import numpy as np

from .errors import ConfigError

_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "tanh": np.tanh,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "arctan": np.arctan,
}
_CONSTANTS = {"pi": np.pi, "e": np.e}
_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_UNARYOPS = (ast.UAdd, ast.USub)


def _check(node, variables):
    if isinstance(node, ast.Expression):
        _check(node.body, variables)
    elif isinstance(node, ast.BinOp):
        if not isinstance(node.op, _BINOPS):
            raise ConfigError(f"operator {type(node.op).__name__} not allowed")
        _check(node.left, variables)
        _check(node.right, variables)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, _UNARYOPS):
            raise ConfigError(f"operator {type(node.op).__name__} not allowed")
        _check(node.operand, variables)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
            raise ConfigError("only calls to " + ", ".join(sorted(_FUNCTIONS)) + " are allowed")
        if node.keywords or len(node.args) != 1:
            raise ConfigError(f"{node.func.id} takes exactly one positional argument")
        _check(node.args[0], variables)
    elif isinstance(node, ast.Name):
        if node.id not in variables and node.id not in _CONSTANTS:
            raise ConfigError(f"unknown name {node.id!r} in expression")
    elif isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ConfigError(f"literal {node.value!r} is not a number")
    else:
        raise ConfigError(f"syntax element {type(node).__name__} not allowed")


def compile_expression(text, variables=("x", "y")):
    """Compile ``text`` into a vectorised function of ``variables``.

    Parameters
    ----------
    text : str or float
        Expression source. Plain numbers are accepted and yield constants.
    variables : tuple of str
        Names of the positional arguments of the returned function.

    Returns
    -------
    callable
        ``f(*arrays)`` returning a float array broadcast against the inputs.

    Raises
    ------
    ConfigError
        On syntax errors or disallowed names/operations.
    """
    if isinstance(text, bool):
        raise ConfigError("expression must be a number or a string")
    if isinstance(text, (int, float)):
        text = repr(float(text))
    if not isinstance(text, str) or not text.strip():
        raise ConfigError("expression must be a non-empty string")
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"malformed expression {text!r}: {exc.msg}") from None
    _check(tree, variables)
    code = compile(tree, "<expression>", "eval")
    namespace = {"__builtins__": {}, **_FUNCTIONS, **_CONSTANTS}

    def func(*args):
        if len(args) != len(variables):
            raise TypeError(f"expected {len(variables)} arguments")
        local = dict(zip(variables, (np.asarray(a, dtype=float) for a in args)))
        with np.errstate(all="ignore"):
            value = eval(code, namespace, local)  # noqa: S307 - AST whitelisted above
        shape = np.broadcast_shapes(*(np.shape(a) for a in args)) if args else ()
        return np.broadcast_to(np.asarray(value, dtype=float), shape).copy()

    func.source = text
    return func


def evaluate_constant(text):
    """Evaluate an expression without free variables, e.g. ``"2*pi"``."""
    return float(compile_expression(text, variables=())())
