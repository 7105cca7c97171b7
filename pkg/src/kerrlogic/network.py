"""Declarative network descriptions (YAML) built into SLH triples.

A description lists its numeric parameters, its drive names and a composition
tree. Tree nodes::

    {series: [G_n, ..., G_1]}        # G_n ◁ ... ◁ G_1, inputs enter G_1
    {concat: [G_1, ..., G_n]}
    {feedback: {system: G, out: k, in: l}}

Leaves::

    {identity: n}  {beamsplitter: expr}  {phase: expr}  {permutation: [..]}
    {displacement: name-or-number}
    {cavity: mode}  {kerr_half1: mode}  {kerr_half2: mode}

Angle expressions may use numbers, parameter names, ``pi`` and ``sqrt``.
"""
from __future__ import annotations

import ast
import math
import operator
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from . import slh
from .slh import CavityModel, SlhTriple

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {"sqrt": math.sqrt, "sin": math.sin, "cos": math.cos}


class NetworkError(ValueError):
    pass


def eval_expr(expr, params: Mapping[str, float]) -> float:
    """Evaluate a small arithmetic expression over ``params``."""
    if isinstance(expr, (int, float, complex)):
        return expr
    env = {"pi": math.pi, **params}

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float, complex)):
            return node.value
        if isinstance(node, ast.Name):
            if node.id not in env:
                raise NetworkError(f"unknown parameter {node.id!r}")
            return env[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand))
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
            return _FUNCS[node.func.id](*[ev(a) for a in node.args])
        raise NetworkError(f"unsupported expression {expr!r}")

    return ev(ast.parse(str(expr), mode="eval"))


class NetworkDescription:
    def __init__(self, spec: Mapping[str, Any]):
        for field in ("name", "network"):
            if field not in spec:
                raise NetworkError(f"network description lacks {field!r}")
        self.name = spec["name"]
        self.description = spec.get("description", "")
        self.modes = int(spec.get("modes", 1))
        self.parameters = list(spec.get("parameters", []))
        self.drives = list(spec.get("drives", []))
        self.outputs = dict(spec.get("outputs", {}))
        self.tree = spec["network"]

    @classmethod
    def from_yaml(cls, text: str) -> "NetworkDescription":
        return cls(yaml.safe_load(text))

    @classmethod
    def from_file(cls, path) -> "NetworkDescription":
        return cls.from_yaml(Path(path).read_text())

    def build(self, params: Mapping[str, float], cavities: Sequence[CavityModel]) -> SlhTriple:
        missing = [p for p in self.parameters if p not in params]
        if missing:
            raise NetworkError(f"{self.name}: missing parameters {missing}")
        if len(cavities) != self.modes:
            raise NetworkError(f"{self.name}: expects {self.modes} cavities, got {len(cavities)}")
        values = {p: float(params[p]) for p in self.parameters}
        return self._node(self.tree, values, cavities)

    def _cavity(self, arg, cavities) -> CavityModel:
        mode = int(arg["mode"] if isinstance(arg, Mapping) else arg)
        if not 0 <= mode < len(cavities):
            raise NetworkError(f"{self.name}: cavity mode {mode} out of range")
        return cavities[mode]

    def _node(self, node, params, cavities) -> SlhTriple:
        if not isinstance(node, Mapping) or len(node) != 1:
            raise NetworkError(f"{self.name}: malformed node {node!r}")
        (kind, arg), = node.items()
        if kind == "series":
            return slh.series_all(*[self._node(c, params, cavities) for c in arg])
        if kind == "concat":
            return slh.concat_all(*[self._node(c, params, cavities) for c in arg])
        if kind == "feedback":
            inner = self._node(arg["system"], params, cavities)
            return slh.feedback(inner, int(arg["out"]), int(arg["in"]))
        if kind == "identity":
            return slh.identity_system(int(arg))
        if kind == "beamsplitter":
            return slh.beamsplitter(eval_expr(arg, params))
        if kind == "phase":
            return slh.phase(eval_expr(arg, params))
        if kind == "permutation":
            return slh.permutation(arg)
        if kind == "displacement":
            if isinstance(arg, str) and arg in self.drives:
                return slh.displacement(arg)
            return slh.displacement(eval_expr(arg, params))
        if kind == "cavity":
            return self._cavity(arg, cavities).full()
        if kind == "kerr_half1":
            return self._cavity(arg, cavities).half1()
        if kind == "kerr_half2":
            return self._cavity(arg, cavities).half2()
        raise NetworkError(f"{self.name}: unknown node kind {kind!r}")


def bundled(name: str) -> NetworkDescription:
    """Load one of the packaged networks: ``and_gate``, ``not_gate``, ``nand_latch``, ``driven_cavity``."""
    text = resources.files("kerrlogic.networks").joinpath(f"{name}.yaml").read_text()
    return NetworkDescription.from_yaml(text)
