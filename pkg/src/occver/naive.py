"""Direct constraint encoding of occlusion robustness, the baseline for the ONN pipeline.

The encoding states that some integer occlusion position inside a region
produces an occluded image ``x'`` on which a label other than ``q`` scores at
least as high as ``q``.  It is satisfiable exactly when the instance is not
robust.  Two consumers exist: :func:`emit_smtlib` renders SMT-LIB2 (QF_LRA)
for an external solver and :func:`eval_constraints` checks an assignment in
process.

Pixel membership uses half-open integer bands: pixel ``(i, j)`` is occluded
iff ``a <= i <= a + w - 1`` and ``b <= j <= b + h - 1``.
"""
from __future__ import annotations

import os
import re
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .model import Network, forward
from .occlusion import Image, OcclusionSpec, Placement, Uniform, occlude
from .onn import PositionRegion

EQ_TOL = 1e-9
SOLVER_ENV = "OCC_SMT_SOLVER"


class UnsupportedModeError(ValueError):
    """The naive encoding only covers uniform colouring at integer positions."""


# -- constraint terms ---------------------------------------------------------
# A linear term is a tuple of (coefficient, variable) pairs plus a constant.

@dataclass(frozen=True)
class Lin:
    terms: tuple = ()
    const: Fraction = Fraction(0)

    def value(self, env) -> float:
        return float(self.const) + sum(float(c) * env[v] for c, v in self.terms)


def var(name: str) -> Lin:
    return Lin(((Fraction(1), name),))


def const(v) -> Lin:
    return Lin((), Fraction(v))


def shifted(name: str, k) -> Lin:
    return Lin(((Fraction(1), name),), Fraction(k))


@dataclass(frozen=True)
class Cmp:
    op: str  # one of <=, <, >=, >, =
    lhs: Lin
    rhs: Lin


@dataclass(frozen=True)
class And:
    args: tuple


@dataclass(frozen=True)
class Or:
    args: tuple


@dataclass(frozen=True)
class Relu:
    """``out = max(inp, 0)``."""
    out: str
    inp: Lin


@dataclass
class NaiveEncoding:
    variables: list
    position: list            # bounds and integrality of a, b
    pixels: list              # one constraint per pixel value
    network: list             # affine equalities and ReLU definitions
    adversarial: Or           # some other label reaches q
    label: int
    shape: tuple
    region: PositionRegion
    meta: dict = field(default_factory=dict)

    @property
    def constraints(self) -> list:
        return self.position + self.pixels + self.network + [self.adversarial]


def _pixel_name(i, j, k):
    return f"xp_{i}_{j}_{k}"


def build_naive(x: Image, f: Network, spec: OcclusionSpec, region: PositionRegion | None,
                q: int) -> NaiveEncoding:
    """Constraints that are satisfiable iff some placement in ``region`` flips label ``q``."""
    if not isinstance(spec.coloring, Uniform):
        raise UnsupportedModeError("the naive encoding supports uniform colouring only")
    if spec.positions != "int":
        raise UnsupportedModeError("the naive encoding supports integer positions only")
    m, n, c = x.m, x.n, x.c
    spec.check_fits(m, n, c)
    if f.input_dim != m * n * c:
        raise ValueError(f"network expects {f.input_dim} inputs, image has {m * n * c} values")
    if not 0 <= q < f.output_dim:
        raise ValueError(f"label {q} outside 0..{f.output_dim - 1}")
    region = region or PositionRegion.full(m, n)
    region.check(m, n)
    a_lo, a_hi = int(np.ceil(region.a_lo)), int(np.floor(region.a_hi))
    b_lo, b_hi = int(np.ceil(region.b_lo)), int(np.floor(region.b_hi))
    if a_lo > a_hi or b_lo > b_hi:
        raise ValueError(f"region {region} contains no integer position")

    variables = ["a", "b"]
    position = [
        Cmp("<=", const(a_lo), var("a")), Cmp("<=", var("a"), const(a_hi)),
        Cmp("<=", const(b_lo), var("b")), Cmp("<=", var("b"), const(b_hi)),
        Or(tuple(Cmp("=", var("a"), const(v)) for v in range(a_lo, a_hi + 1))),
        Or(tuple(Cmp("=", var("b"), const(v)) for v in range(b_lo, b_hi + 1))),
    ]

    pixels = []
    inputs = []
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            inside = (Cmp("<=", var("a"), const(i)), Cmp("<=", const(i), shifted("a", spec.w - 1)),
                      Cmp("<=", var("b"), const(j)), Cmp("<=", const(j), shifted("b", spec.h - 1)))
            outside = Or((Cmp(">", var("a"), const(i)), Cmp("<", shifted("a", spec.w - 1), const(i)),
                          Cmp(">", var("b"), const(j)), Cmp("<", shifted("b", spec.h - 1), const(j))))
            for k in range(c):
                name = _pixel_name(i, j, k)
                variables.append(name)
                inputs.append(name)
                mu = Fraction(spec.coloring.channel(k))
                orig = Fraction(float(x.at(i, j, k)))
                pixels.append(Or((And(inside + (Cmp("=", var(name), const(mu)),)),
                                  And((outside, Cmp("=", var(name), const(orig)))))))

    network = []
    prev = inputs
    for t, layer in enumerate(f.layers):
        names = []
        for r in range(layer.out_dim):
            z = f"z_{t + 1}_{r}"
            terms = tuple((Fraction(float(w)), v) for w, v in zip(layer.weights[r], prev) if w != 0.0)
            variables.append(z)
            network.append(Cmp("=", var(z), Lin(terms, Fraction(float(layer.biases[r])))))
            if layer.relu:
                y = f"y_{t + 1}_{r}"
                variables.append(y)
                network.append(Relu(y, var(z)))
                names.append(y)
            else:
                names.append(z)
        prev = names
    outputs = prev
    adversarial = Or(tuple(Cmp(">=", var(outputs[l]), var(outputs[q]))
                           for l in range(f.output_dim) if l != q))
    return NaiveEncoding(variables, position, pixels, network, adversarial, q, (m, n, c), region,
                         meta={"outputs": outputs, "inputs": inputs, "w": spec.w, "h": spec.h})


# -- evaluation -----------------------------------------------------------------

def _holds(node, env) -> bool:
    if isinstance(node, Cmp):
        lv, rv = node.lhs.value(env), node.rhs.value(env)
        if node.op == "=":
            return abs(lv - rv) <= EQ_TOL
        if node.op == "<=":
            return lv <= rv
        if node.op == "<":
            return lv < rv
        if node.op == ">=":
            return lv >= rv
        return lv > rv
    if isinstance(node, And):
        return all(_holds(a, env) for a in node.args)
    if isinstance(node, Or):
        return any(_holds(a, env) for a in node.args)
    if isinstance(node, Relu):
        return abs(env[node.out] - max(node.inp.value(env), 0.0)) <= EQ_TOL
    raise TypeError(f"unknown constraint node {node!r}")


def eval_constraints(enc: NaiveEncoding, assignment) -> bool:
    """True iff every constraint holds; equalities are compared with tolerance 1e-9."""
    missing = [v for v in enc.variables if v not in assignment]
    if missing:
        raise KeyError(f"assignment lacks {len(missing)} variables, e.g. {missing[0]!r}")
    env = {v: float(assignment[v]) for v in enc.variables}
    return all(_holds(node, env) for node in enc.constraints)


def assignment_for(enc: NaiveEncoding, f: Network, x: Image, spec: OcclusionSpec,
                   placement: Placement) -> dict:
    """Full assignment induced by occluding ``x`` at ``placement`` and running ``f``."""
    xp = occlude(x, spec, placement)
    env = {"a": float(placement.a), "b": float(placement.b)}
    m, n, c = enc.shape
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            for k in range(c):
                env[_pixel_name(i, j, k)] = xp.at(i, j, k)
    trace = forward(f, xp.flat(), return_all=True)
    for t, layer in enumerate(f.layers):
        z = trace[t + 1] if not layer.relu else layer.weights @ trace[t] + layer.biases
        for r in range(layer.out_dim):
            env[f"z_{t + 1}_{r}"] = float(z[r])
            if layer.relu:
                env[f"y_{t + 1}_{r}"] = float(max(z[r], 0.0))
    return env


# -- SMT-LIB2 -------------------------------------------------------------------

def _num(v: Fraction) -> str:
    v = Fraction(v)
    mag = abs(v)
    s = f"{mag.numerator}.0" if mag.denominator == 1 else f"(/ {mag.numerator}.0 {mag.denominator}.0)"
    return f"(- {s})" if v < 0 else s


def _lin(e: Lin) -> str:
    parts = []
    for cf, v in e.terms:
        parts.append(v if cf == 1 else f"(* {_num(cf)} {v})")
    if e.const != 0 or not parts:
        parts.append(_num(e.const))
    return parts[0] if len(parts) == 1 else "(+ " + " ".join(parts) + ")"


def _sexpr(node) -> str:
    if isinstance(node, Cmp):
        return f"({node.op} {_lin(node.lhs)} {_lin(node.rhs)})"
    if isinstance(node, And):
        return "(and " + " ".join(_sexpr(a) for a in node.args) + ")"
    if isinstance(node, Or):
        if len(node.args) == 1:
            return _sexpr(node.args[0])
        return "(or " + " ".join(_sexpr(a) for a in node.args) + ")"
    if isinstance(node, Relu):
        z = _lin(node.inp)
        return f"(= {node.out} (ite (>= {z} 0.0) {z} 0.0))"
    raise TypeError(f"unknown constraint node {node!r}")


def emit_smtlib(enc: NaiveEncoding) -> str:
    """SMT-LIB2 text (QF_LRA); identical input yields identical bytes."""
    m, n, c = enc.shape
    lines = [
        f"; occlusion robustness, label {enc.label}, image {m}x{n}x{c}, "
        f"occlusion {enc.meta['w']}x{enc.meta['h']}",
        "(set-logic QF_LRA)",
        "(set-option :produce-models true)",
    ]
    lines += [f"(declare-fun {v} () Real)" for v in enc.variables]
    lines += [f"(assert {_sexpr(node)})" for node in enc.constraints]
    lines += ["(check-sat)", "(get-model)", ""]
    return "\n".join(lines)


# -- external solver ------------------------------------------------------------

@dataclass
class SolverResult:
    status: str               # "sat", "unsat", "unknown" or "timeout"
    model: dict
    seconds: float
    output: str = ""


def _tokens(text):
    return re.findall(r"\(|\)|[^\s()]+", text)


def _parse_sexprs(text):
    stack = [[]]
    for tok in _tokens(text):
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if len(stack) == 1:
                raise ValueError("unbalanced ')' in solver output")
            done = stack.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(tok)
    return stack[0]


def _value(expr) -> Fraction:
    if isinstance(expr, str):
        return Fraction(expr)
    head, *rest = expr
    if head == "-" and len(rest) == 1:
        return -_value(rest[0])
    if head == "/":
        return _value(rest[0]) / _value(rest[1])
    if head == "-":
        return _value(rest[0]) - sum(_value(r) for r in rest[1:])
    if head == "+":
        return sum((_value(r) for r in rest), Fraction(0))
    raise ValueError(f"cannot read model value {expr!r}")


def parse_model(text: str) -> dict:
    """Variable values from a ``(get-model)`` response."""
    model = {}

    def walk(node):
        if isinstance(node, list):
            if len(node) == 5 and node[0] == "define-fun" and node[2] == []:
                try:
                    model[node[1]] = float(_value(node[4]))
                except (ValueError, ZeroDivisionError):
                    pass
                return
            for child in node:
                walk(child)

    walk(_parse_sexprs(text))
    return model


def solver_path() -> str | None:
    path = os.environ.get(SOLVER_ENV)
    return path or None


def run_solver(text: str, solver: str | None = None, timeout: float = 60.0) -> SolverResult:
    """Run an SMT-LIB2 solver that takes the problem as a file argument."""
    solver = solver or solver_path()
    if not solver:
        raise RuntimeError(f"no solver configured; set {SOLVER_ENV}")
    with tempfile.NamedTemporaryFile("w", suffix=".smt2", delete=False) as fh:
        fh.write(text)
        path = fh.name
    start = time.perf_counter()
    try:
        proc = subprocess.run([solver, path], capture_output=True, text=True, timeout=timeout)
        out = proc.stdout
    except subprocess.TimeoutExpired:
        return SolverResult("timeout", {}, time.perf_counter() - start)
    finally:
        os.unlink(path)
    elapsed = time.perf_counter() - start
    first = out.strip().split("\n", 1)[0].strip() if out.strip() else ""
    status = first if first in ("sat", "unsat") else "unknown"
    model = parse_model(out.split("\n", 1)[1]) if status == "sat" and "\n" in out else {}
    return SolverResult(status, model, elapsed, out)


def model_placement(model: dict) -> Placement:
    """Occlusion position carried by a solver model."""
    return Placement(float(round(model["a"])), float(round(model["b"])))
