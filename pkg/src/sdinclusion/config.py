"""Scenario files: a small INI-like format with constructor-term values.

    [space]
    dE = 1
    T = 8.0
    xi = [1.0]

    [operator]
    A = scaled_identity(1, -0.25)

Each line is ``key = value`` inside a ``[section]``; ``#`` and ``;`` start
comment lines.  Values are numbers, ``true``/``false``, quoted strings,
lists, bare names (``steiner``) or calls with positional and keyword
arguments (``ball(center=[0, 0], radius=1)``).  Numeric arithmetic such as
``1/128`` is folded at parse time.  Unknown sections or keys are errors.
"""

from __future__ import annotations

import ast
import json
import math
import operator
from dataclasses import dataclass, field

import numpy as np

from . import coefficients as co
from . import convexset as cs
from . import semigroup as sg
from .driver import grid_steps
from .tonelli import InclusionScenario, InitialCondition, lag_steps

__all__ = ["ConfigError", "Term", "ScenarioConfig", "parse_config", "load_config",
           "format_config", "build_scenario", "SchemeSettings", "DiagnosticsSettings"]


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class Term:
    name: str
    args: tuple = ()
    kwargs: tuple = ()
    bare: bool = False

    def kw(self):
        return dict(self.kwargs)


REQUIRED = object()

# section -> key -> default (REQUIRED for mandatory keys)
SCHEMA = {
    "space": {"dE": REQUIRED, "dH": 1, "T": REQUIRED, "xi": REQUIRED},
    "operator": {"A": REQUIRED},
    "coefficients": {"F": REQUIRED, "G": REQUIRED, "L": REQUIRED, "p": 4, "eta": REQUIRED},
    "scheme": {"n_ladder": REQUIRED, "dt": REQUIRED, "paths": REQUIRED, "seed": 0,
               "selector": Term("steiner", bare=True), "store_selections": True,
               "norm_cap": 1e12},
    "diagnostics": {"samples": 1000, "box": 5.0, "osgood_k": [1.0], "osgood_R0": 1.0,
                    "osgood_grid": 400, "osgood_iters": 400, "aldous_deltas": [],
                    "aldous_eta": 0.5, "bl_anchors": 16, "cover_radii": [],
                    "cover_anchors": 8, "conv_paths": 2000},
    "output": {"dir": "out", "write_ensembles": True},
}

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}


def _convert(node, line):
    if isinstance(node, ast.Constant):
        if isinstance(node.value, (bool, int, float, str)):
            return node.value
        raise ConfigError(f"unsupported literal {node.value!r}", line)
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _convert(node.operand, line)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError("sign applied to a non-number", line)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        a, b = _convert(node.left, line), _convert(node.right, line)
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in (a, b)):
            raise ConfigError("arithmetic on non-numbers", line)
        try:
            v = _BINOPS[type(node.op)](a, b)
        except ZeroDivisionError:
            raise ConfigError("division by zero", line) from None
        return float(v) if isinstance(node.op, ast.Div) else v
    if isinstance(node, (ast.List, ast.Tuple)):
        return [_convert(e, line) for e in node.elts]
    if isinstance(node, ast.Name):
        if node.id in ("true", "false"):
            return node.id == "true"
        if node.id == "inf":
            return math.inf
        return Term(node.id, bare=True)
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        args = tuple(_convert(a, line) for a in node.args)
        kwargs = []
        for k in node.keywords:
            if k.arg is None:
                raise ConfigError("** arguments are not allowed", line)
            kwargs.append((k.arg, _convert(k.value, line)))
        return Term(node.func.id, args, tuple(kwargs))
    raise ConfigError(f"cannot parse value near {ast.dump(node)[:40]!r}", line)


def parse_value(text, line=None):
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError:
        raise ConfigError(f"malformed value {text.strip()!r}", line) from None
    return _convert(tree.body, line)


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return "inf" if v == math.inf else ("-inf" if v == -math.inf else repr(v))
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(format_value(e) for e in v) + "]"
    if isinstance(v, Term):
        if v.bare:
            return v.name
        parts = [format_value(a) for a in v.args]
        parts += [f"{k}={format_value(x)}" for k, x in v.kwargs]
        return f"{v.name}({', '.join(parts)})"
    raise TypeError(f"cannot format {v!r}")


@dataclass
class ScenarioConfig:
    sections: dict
    lines: dict = field(default_factory=dict, compare=False)
    source: str = field(default="<config>", compare=False)

    def get(self, section, key):
        vals = self.sections.get(section, {})
        if key in vals:
            return vals[key]
        default = SCHEMA[section][key]
        if default is REQUIRED:
            raise ConfigError(f"missing required key '{key}' in [{section}]")
        return default

    def line(self, section, key):
        return self.lines.get((section, key))

    def set(self, section, key, value):
        if key not in SCHEMA.get(section, {}):
            raise ConfigError(f"unknown key '{key}' in [{section}]")
        self.sections.setdefault(section, {})[key] = value


def parse_config(text: str, source="<config>") -> ScenarioConfig:
    sections, lines = {}, {}
    current = None
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("["):
            if not s.endswith("]"):
                raise ConfigError(f"malformed section header {s!r}", no)
            current = s[1:-1].strip()
            if current not in SCHEMA:
                raise ConfigError(f"unknown section [{current}]", no)
            if current in sections:
                raise ConfigError(f"section [{current}] appears twice", no)
            sections[current] = {}
            continue
        if "=" not in s:
            raise ConfigError(f"expected 'key = value', got {s!r}", no)
        if current is None:
            raise ConfigError("key outside of any section", no)
        key, _, value = s.partition("=")
        key = key.strip()
        if key not in SCHEMA[current]:
            raise ConfigError(f"unknown key '{key}' in [{current}]", no)
        if key in sections[current]:
            raise ConfigError(f"duplicate key '{key}' in [{current}]", no)
        sections[current][key] = parse_value(value, no)
        lines[(current, key)] = no
    for sec, keys in SCHEMA.items():
        for key, default in keys.items():
            if default is REQUIRED and key not in sections.get(sec, {}):
                raise ConfigError(f"missing required key '{key}' in [{sec}]")
    return ScenarioConfig(sections, lines, source)


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        return parse_config(fh.read(), str(path))


def format_config(cfg: ScenarioConfig, sections=None) -> str:
    """Canonical text: schema order of sections and keys, one key per line."""
    out = []
    for sec in SCHEMA:
        if sections is not None and sec not in sections:
            continue
        vals = cfg.sections.get(sec)
        if vals is None:
            continue
        out.append(f"[{sec}]")
        for key in SCHEMA[sec]:
            if key in vals:
                out.append(f"{key} = {format_value(vals[key])}")
        out.append("")
    return "\n".join(out)


# --------------------------------------------------------------------------
# interpretation


def _array(v, what, ndim=None):
    if isinstance(v, Term) and v.name == "matrix" and len(v.args) == 1:
        v = v.args[0]
    try:
        a = np.array(v, dtype=float)
    except (TypeError, ValueError):
        raise ValueError(f"{what} must be numeric, got {format_value(v)}") from None
    if ndim is not None and a.ndim != ndim:
        raise ValueError(f"{what} must be a {ndim}-dimensional array")
    return a


def _number(v, what):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"{what} must be a number")
    return float(v)


def _call_args(t: Term, names, defaults=None):
    """Bind positional and keyword arguments of a term to parameter names."""
    defaults = defaults or {}
    if len(t.args) > len(names):
        raise ValueError(f"{t.name}() takes at most {len(names)} arguments")
    bound = dict(zip(names, t.args))
    for k, v in t.kwargs:
        if k not in names:
            raise ValueError(f"{t.name}() has no parameter '{k}'")
        if k in bound:
            raise ValueError(f"{t.name}() got '{k}' twice")
        bound[k] = v
    for k in names:
        if k not in bound:
            if k not in defaults:
                raise ValueError(f"{t.name}() is missing '{k}'")
            bound[k] = defaults[k]
    return bound


def body_from_term(t) -> cs.ConvexBody:
    if not isinstance(t, Term):
        return cs.Point(_array(t, "point", 1))
    if t.name == "point":
        return cs.Point(_array(_call_args(t, ["c"])["c"], "point", 1))
    if t.name == "ball":
        b = _call_args(t, ["center", "radius"])
        return cs.Ball(_array(b["center"], "ball center", 1), _number(b["radius"], "radius"))
    if t.name == "hull":
        return cs.Hull(_array(_call_args(t, ["points"])["points"], "hull points", 2))
    if t.name == "msum":
        b = _call_args(t, ["a", "b"])
        return cs.MinkowskiSum(body_from_term(b["a"]), body_from_term(b["b"]))
    if t.name == "scaled":
        b = _call_args(t, ["factor", "body"])
        return cs.Scaled(_number(b["factor"], "factor"), body_from_term(b["body"]))
    if t.name == "translated":
        b = _call_args(t, ["offset", "body"])
        return cs.Translated(_array(b["offset"], "offset", 1), body_from_term(b["body"]))
    raise ValueError(f"unknown body constructor '{t.name}'")


def generator_from_term(v, dE):
    if isinstance(v, Term) and v.name != "matrix":
        if v.name == "zero":
            A = sg.zero(int(_call_args(v, ["d"])["d"]))
        elif v.name == "scaled_identity":
            b = _call_args(v, ["d", "lam"])
            A = sg.scaled_identity(int(b["d"]), _number(b["lam"], "lam"))
        elif v.name == "shift_nilpotent":
            A = sg.shift_nilpotent(int(_call_args(v, ["d"])["d"]))
        elif v.name == "rotation2d":
            A = sg.rotation2d(_number(_call_args(v, ["theta_rate"])["theta_rate"], "theta_rate"))
        else:
            raise ValueError(f"unknown generator '{v.name}'")
    else:
        A = _array(v, "A", 2)
    if A.shape != (dE, dE):
        raise ValueError(f"A has shape {A.shape}, expected ({dE}, {dE})")
    return A


def _radius_fn(v):
    if isinstance(v, Term):
        if v.name != "affine":
            raise ValueError(f"unknown radius function '{v.name}'")
        b = _call_args(v, ["a", "b"], {"b": 0.0})
        return co.Affine(_number(b["a"], "a"), _number(b["b"], "b"))
    return co.Affine(_number(v, "radius_fn"))


def multimap_from_term(v, dE, cod, what, T):
    if not isinstance(v, Term):
        raise ValueError(f"{what} must be a constructor such as tube(...) or singleton(...)")
    label = f"{what}={format_value(v)}"
    if v.name == "tube":
        b = _call_args(v, ["center", "matrix", "body", "radius_fn"],
                       {"matrix": None, "radius_fn": 1.0})
        center = _array(b["center"], "tube center").reshape(-1)
        matrix = (np.zeros((cod, dE)) if b["matrix"] is None
                  else _array(b["matrix"], "tube matrix").reshape(cod, -1))
        rf = _radius_fn(b["radius_fn"])
        if rf.min_on(T) < 0:
            raise ValueError(f"{what}: radius function is negative on [0, T]")
        return co.Tube(center, matrix, body_from_term(b["body"]), rf, description=label)
    if v.name == "singleton":
        b = _call_args(v, ["offset", "matrix", "matrix_fn"],
                       {"offset": None, "matrix": None, "matrix_fn": None})
        if (b["offset"] is None) == (b["matrix_fn"] is None):
            raise ValueError(f"{what}: give exactly one of offset= or matrix_fn=")
        off = b["offset"] if b["offset"] is not None else b["matrix_fn"]
        off = _array(off, "singleton value").reshape(-1)
        mat = (np.zeros((off.size, dE)) if b["matrix"] is None
               else _array(b["matrix"], "singleton matrix").reshape(off.size, -1))
        return co.Singleton(off, mat, description=label)
    if v.name == "osgood":
        b = _call_args(v, ["kappa", "p"], {"p": 4.0})
        if dE != 1:
            raise ValueError("osgood() is a scalar family (dE = 1)")
        return co.OsgoodScalar(_number(b["kappa"], "kappa"), _number(b["p"], "p"),
                               description=label)
    raise ValueError(f"unknown coefficient family '{v.name}'")


def modulus_from_term(v):
    if not isinstance(v, Term):
        raise ValueError("L must be linear(C=...), loglinear(C=...), sqrt(C=...) or zero")
    if v.name == "zero":
        return co.zero_modulus()
    makers = {"linear": co.linear, "loglinear": co.loglinear, "sqrt": co.sqrt_modulus}
    if v.name not in makers:
        raise ValueError(f"unknown modulus '{v.name}'")
    C = _number(_call_args(v, ["C"], {"C": 1.0})["C"], "C")
    if C < 0:
        raise ValueError("modulus constant must be nonnegative")
    return makers[v.name](C)


def selector_from_term(v, dE):
    if not isinstance(v, Term):
        raise ValueError("selector must be steiner, support(u=...) or vertex_random")
    if v.name == "steiner":
        return co.Steiner()
    if v.name == "support":
        u = _array(_call_args(v, ["u"])["u"], "support direction", 1)
        if u.size != dE:
            raise ValueError("support direction has the wrong dimension")
        return co.Support(co.Direction.of(u))
    if v.name == "vertex_random":
        b = _call_args(v, ["seed"], {"seed": None})
        return co.VertexRandom(None if b["seed"] is None else int(b["seed"]))
    raise ValueError(f"unknown selector '{v.name}'")


def initial_from_term(v, dE):
    if isinstance(v, Term):
        if v.name != "gaussian":
            raise ValueError(f"unknown initial condition '{v.name}'")
        b = _call_args(v, ["mean", "cov"])
        xi = InitialCondition(_array(b["mean"], "mean", 1), _array(b["cov"], "cov", 2))
    else:
        xi = InitialCondition(_array(v, "xi", 1))
    if xi.dim != dE:
        raise ValueError(f"xi has dimension {xi.dim}, expected {dE}")
    return xi


def _positive_int(v, what):
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ValueError(f"{what} must be a positive integer, got {format_value(v)}")
    return v


@dataclass
class SchemeSettings:
    n_ladder: list
    dt: float
    paths: int
    seed: int
    store_selections: bool
    norm_cap: float


@dataclass
class DiagnosticsSettings:
    samples: int
    box: float
    osgood_k: list
    osgood_R0: float
    osgood_grid: int
    osgood_iters: int
    aldous_deltas: list
    aldous_eta: float
    bl_anchors: int
    cover_radii: list
    cover_anchors: int
    conv_paths: int


class _Binder:
    """Evaluates keys one at a time so errors carry the key's line number."""

    def __init__(self, cfg):
        self.cfg = cfg

    def __call__(self, section, key, fn=lambda v: v):
        try:
            return fn(self.cfg.get(section, key))
        except ConfigError:
            raise
        except (ValueError, TypeError, np.linalg.LinAlgError) as exc:
            raise ConfigError(f"[{section}] {key}: {exc}", self.cfg.line(section, key)) from None


def build_scenario(cfg: ScenarioConfig, seed: int | None = None):
    """(InclusionScenario, SchemeSettings, DiagnosticsSettings) from a config."""
    b = _Binder(cfg)
    dE = b("space", "dE", lambda v: _positive_int(v, "dE"))
    dH = b("space", "dH", lambda v: _positive_int(v, "dH"))

    def _T(v):
        T = _number(v, "T")
        if not T > 0:
            raise ValueError("T must be positive")
        return T

    T = b("space", "T", _T)
    xi = b("space", "xi", lambda v: initial_from_term(v, dE))
    A = b("operator", "A", lambda v: generator_from_term(v, dE))
    op = b("operator", "A", lambda v: sg.SemigroupOperator.from_matrix(A, T))
    F = b("coefficients", "F", lambda v: multimap_from_term(v, dE, dE, "F", T))
    G = b("coefficients", "G", lambda v: multimap_from_term(v, dE, dE * dH, "G", T))
    L = b("coefficients", "L", modulus_from_term)
    p = b("coefficients", "p", lambda v: _number(v, "p"))
    eta = b("coefficients", "eta", lambda v: _number(v, "eta"))
    if p <= 2:
        raise ConfigError("[coefficients] p: must exceed 2", cfg.line("coefficients", "p"))
    hyp = b("coefficients", "eta", lambda v: co.CoefficientHypotheses(eta, L, p))
    rule = b("scheme", "selector", lambda v: selector_from_term(v, dE))

    def _ladder(v):
        if not isinstance(v, list) or not v:
            raise ValueError("n_ladder must be a nonempty list")
        return [_positive_int(n, "n") for n in v]

    def _dt(v):
        dt = _number(v, "dt")
        if not dt > 0:
            raise ValueError("dt must be positive")
        return dt

    def _bool(v):
        if not isinstance(v, bool):
            raise ValueError("expected true or false")
        return v

    ladder = b("scheme", "n_ladder", _ladder)
    dt = b("scheme", "dt", _dt)
    b("scheme", "dt", lambda v: grid_steps(T, dt))
    b("scheme", "n_ladder", lambda v: [lag_steps(n, dt) for n in ladder])
    scheme = SchemeSettings(
        ladder, dt,
        b("scheme", "paths", lambda v: _positive_int(v, "paths")),
        seed if seed is not None else b("scheme", "seed", lambda v: int(v)),
        b("scheme", "store_selections", _bool),
        b("scheme", "norm_cap", lambda v: _number(v, "norm_cap")),
    )
    if scheme.seed < 0 or scheme.seed >= 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer", cfg.line("scheme", "seed"))

    def _nums(v):
        if not isinstance(v, list):
            raise ValueError("expected a list of numbers")
        return [_number(x, "entry") for x in v]

    diag = DiagnosticsSettings(
        b("diagnostics", "samples", lambda v: _positive_int(v, "samples")),
        b("diagnostics", "box", lambda v: _number(v, "box")),
        b("diagnostics", "osgood_k", _nums),
        b("diagnostics", "osgood_R0", lambda v: _number(v, "osgood_R0")),
        b("diagnostics", "osgood_grid", lambda v: _positive_int(v, "osgood_grid")),
        b("diagnostics", "osgood_iters", lambda v: _positive_int(v, "osgood_iters")),
        b("diagnostics", "aldous_deltas", _nums),
        b("diagnostics", "aldous_eta", lambda v: _number(v, "aldous_eta")),
        b("diagnostics", "bl_anchors", lambda v: _positive_int(v, "bl_anchors")),
        b("diagnostics", "cover_radii", _nums),
        b("diagnostics", "cover_anchors", lambda v: _positive_int(v, "cover_anchors")),
        b("diagnostics", "conv_paths", lambda v: _positive_int(v, "conv_paths")),
    )
    fingerprint = format_config(cfg, sections=("space", "operator", "coefficients")) + \
        f"selector = {format_value(cfg.get('scheme', 'selector'))}\n"
    sc = InclusionScenario(dE, dH, op, F, G, hyp, xi, T, rule, scheme.norm_cap, fingerprint)
    return sc, scheme, diag
