"""Line-oriented run configuration: ``section.key = value`` with ``#`` comments.

Lists are comma separated, booleans are ``true``/``false``. Every key has a
default (see ``SCHEMA``); ``kernel.epsilon`` has none and is required when
``kernel.mode = fixed``.
"""
from __future__ import annotations

import difflib
import math
from dataclasses import dataclass, field

from .errors import ConfigError

COMMANDS = ("build-graph", "eig-check", "node-gap", "graph-gap", "reg-sweep")


@dataclass(frozen=True)
class Key:
    kind: str  # int | float | bool | str | choice | ints | floats | strs
    default: object
    choices: tuple = ()
    check: object = None  # predicate on the parsed value
    rule: str = ""


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _unit_open(v):
    return 0 < v < 1


def _beta(v):
    return 0 <= v < 1


def _all_pos(v):
    return all(x > 0 for x in v)


def _ascending(v):
    return len(v) > 0 and v[0] >= 2 and all(b > a for a, b in zip(v, v[1:]))


def _nonneg_all(v):
    return all(x >= 0 for x in v)


SCHEMA = {
    "manifold.kind": Key("choice", "circle", ("circle", "torus", "mesh")),
    "manifold.radii": Key("floats", (1.0,), check=_all_pos, rule="positive radii"),
    "manifold.density": Key("choice", "uniform", ("uniform", "vonmises")),
    "manifold.vm_location": Key("float", 0.0),
    "manifold.vm_concentration": Key("float", 0.0, check=_nonneg, rule=">= 0"),
    "manifold.mesh": Key("str", ""),
    "kernel.kind": Key("choice", "gaussian", ("gaussian", "epsilon")),
    "kernel.mode": Key("choice", "schedule", ("schedule", "fixed")),
    "kernel.epsilon": Key("float", None, check=_pos, rule="> 0"),
    "kernel.delta": Key("float", 0.1, check=_unit_open, rule="in (0, 1)"),
    "kernel.c": Key("float", 1.0, check=_pos, rule="> 0"),
    "kernel.response": Key("choice", "polynomial", ("polynomial", "exponential")),
    "task.m_band": Key("int", 5, check=_pos, rule=">= 1"),
    "task.input_coeffs": Key("floats", (0.0, 1.0, 0.0, 0.5, 0.0)),
    "task.target_coeffs": Key("floats", (0.0, 0.6, 0.0, 0.0, 0.3)),
    "task.normalize_input": Key("bool", True),
    "task.loss": Key("choice", "abs", ("abs", "ce")),
    "architecture.layers": Key("int", 2, check=_pos, rule=">= 1"),
    "architecture.width": Key("int", 4, check=_pos, rule=">= 1"),
    "architecture.taps": Key("int", 4, check=_pos, rule=">= 1"),
    "architecture.activation": Key("choice", "tanh", ("relu", "tanh", "identity")),
    "training.lr": Key("float", 0.005, check=_nonneg, rule=">= 0"),
    "training.beta1": Key("float", 0.9, check=_beta, rule="in [0, 1)"),
    "training.beta2": Key("float", 0.999, check=_beta, rule="in [0, 1)"),
    "training.epochs": Key("int", 40, check=_pos, rule=">= 1"),
    "training.batch_size": Key("int", 10, check=_pos, rule=">= 1"),
    "training.reg_weight": Key("float", 0.0, check=_nonneg, rule=">= 0"),
    "training.weights": Key("choice", "trained", ("trained", "random")),
    "sweep.n_values": Key("ints", (32, 64, 128, 256, 512, 1024), check=_ascending,
                          rule="strictly ascending, first >= 2"),
    "sweep.trials": Key("int", 10, check=_pos, rule=">= 1"),
    "sweep.mu_values": Key("floats", (0.0, 1e-3, 1e-2), check=_nonneg_all, rule="all >= 0"),
    "sweep.eval_n": Key("int", 4096, check=_pos, rule=">= 1"),
    "sweep.estimator": Key("choice", "fresh", ("fresh", "exact")),
    "sweep.i_max": Key("int", 6, check=lambda v: v >= 2, rule=">= 2"),
    "graph.radii": Key("floats", (1.0, 1.5), check=_all_pos, rule="positive radii"),
    "graph.inputs": Key("strs", ("constant", "harmonic")),
    "graph.labels": Key("floats", (0.0, 1.0)),
    "graph.meshes": Key("strs", ()),
    "run.seed": Key("int", 0, check=_nonneg, rule=">= 0"),
    "run.threads": Key("int", 1, check=_pos, rule=">= 1"),
}


@dataclass(frozen=True)
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def section(self, name) -> dict:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def with_values(self, **updates) -> "RunConfig":
        """Copy with ``section__key=value`` overrides, re-validated."""
        vals = dict(self.values)
        for k, v in updates.items():
            vals[k.replace("__", ".")] = v
        _validate(self.command, vals)
        return RunConfig(self.command, vals)


def _convert(key, spec: Key, raw: str, line):
    def scalar(kind, tok):
        tok = tok.strip()
        if kind == "int":
            return int(tok)
        if kind == "float":
            v = float(tok)
            if not math.isfinite(v):
                raise ValueError("not finite")
            return v
        if kind == "bool":
            low = tok.lower()
            if low not in ("true", "false"):
                raise ValueError("expected true or false")
            return low == "true"
        return tok

    try:
        if spec.kind in ("ints", "floats", "strs"):
            toks = [t for t in raw.split(",") if t.strip()]
            value = tuple(scalar(spec.kind[:-1] if spec.kind != "strs" else "str", t) for t in toks)
        elif spec.kind == "choice":
            value = raw.strip()
            if value not in spec.choices:
                raise ValueError(f"expected one of {', '.join(spec.choices)}")
        else:
            value = scalar(spec.kind, raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot read {raw.strip()!r} as {spec.kind} ({exc})", line, key) from None
    if spec.check is not None and value is not None and not spec.check(value):
        raise ConfigError(f"{key} must be {spec.rule}, got {raw.strip()!r}", line, key)
    return value


def _validate(command, vals):
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
    if vals["kernel.mode"] == "fixed" and vals["kernel.epsilon"] is None:
        raise ConfigError("kernel.mode = fixed needs kernel.epsilon", key="kernel.epsilon")
    kind = vals["manifold.kind"]
    nr = len(vals["manifold.radii"])
    if kind == "circle" and nr != 1:
        raise ConfigError("a circle takes exactly one value in manifold.radii", key="manifold.radii")
    if kind == "torus" and nr != 2:
        raise ConfigError("a torus takes two values in manifold.radii", key="manifold.radii")
    if kind == "mesh" and not vals["manifold.mesh"]:
        raise ConfigError("manifold.kind = mesh needs manifold.mesh", key="manifold.mesh")
    if vals["manifold.density"] == "vonmises" and kind != "circle":
        raise ConfigError("the von Mises density needs manifold.kind = circle", key="manifold.density")
    if command == "eig-check" and kind == "mesh":
        raise ConfigError("eig-check needs an analytic manifold", key="manifold.kind")
    if command in ("node-gap", "reg-sweep"):
        if kind == "mesh":
            raise ConfigError(f"{command} needs an analytic manifold for its signals", key="manifold.kind")
        for k in ("task.input_coeffs", "task.target_coeffs"):
            if not 1 <= len(vals[k]) <= vals["task.m_band"]:
                raise ConfigError(f"{k} needs between 1 and task.m_band values", key=k)
    if command == "reg-sweep" and len(set(vals["sweep.mu_values"])) != len(vals["sweep.mu_values"]):
        raise ConfigError("sweep.mu_values must be distinct", key="sweep.mu_values")
    if command == "graph-gap":
        meshes = vals["graph.meshes"]
        count = len(meshes) if meshes else len(vals["graph.radii"])
        if not (count == len(vals["graph.inputs"]) == len(vals["graph.labels"])) or count < 2:
            raise ConfigError("graph.radii (or graph.meshes), graph.inputs and graph.labels "
                              "need the same length >= 2", key="graph.labels")
        if vals["sweep.eval_n"] < vals["sweep.n_values"][-1]:
            raise ConfigError("sweep.eval_n must be >= the largest of sweep.n_values", key="sweep.eval_n")


def defaults(command: str) -> RunConfig:
    vals = {k: s.default for k, s in SCHEMA.items()}
    _validate(command, vals)
    return RunConfig(command, vals)


def parse_config(text: str, command: str) -> RunConfig:
    """Parse and validate; missing keys take their defaults."""
    vals = {k: s.default for k, s in SCHEMA.items()}
    seen = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'section.key = value', got {line!r}", no)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            near = difflib.get_close_matches(key, SCHEMA, n=1, cutoff=0.0)
            hint = f"; did you mean {near[0]!r}?" if near else ""
            raise ConfigError(f"unknown key {key!r}{hint}", no, key)
        if key in seen:
            raise ConfigError(f"{key} already set on line {seen[key]}", no, key)
        seen[key] = no
        vals[key] = _convert(key, SCHEMA[key], value, no)
    _validate(command, vals)
    return RunConfig(command, vals)


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def serialize(cfg: RunConfig) -> str:
    """Every key in schema order (unset optional keys are omitted)."""
    return "".join(f"{k} = {_format(cfg.values[k])}\n" for k in SCHEMA if cfg.values[k] is not None)


def load_config(path, command: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_config(text, command)
