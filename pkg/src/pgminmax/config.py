"""Experiment configuration: a flat ``section.key = value`` text format.

Example::

    # synthetic imbalanced data
    data.source = synthetic
    data.n_pos = 1000
    split.neg_keep_fraction = 0.2
    solver.name = pg-smd-d2
    solver.T = 50

Blank lines and ``#`` comments are ignored. Every key must appear in
:data:`SCHEMA`; values are converted to the declared type and validated before
any computation starts. A summary JSON file written by ``run`` (which embeds
the resolved configuration under ``"config"``) is accepted as well.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .errors import ConfigurationError, ParseError

SOLVERS = ("pg-smd-d1", "pg-smd-d2", "pg-svrg", "pl-smd", "pl-svrg", "erm-sgd")
AUTO = "auto"


@dataclass(frozen=True)
class Key:
    kind: str  # str, int, float, bool, floats, ints, opt_float, opt_int
    default: object
    choices: tuple = ()
    check: str = ""  # "pos", "nonneg", "unit" (0,1], "frac" [0,1)


SCHEMA = {
    "data.source": Key("str", "synthetic", ("synthetic", "libsvm")),
    "data.path": Key("str", ""),
    "data.name": Key("str", "synthetic"),
    "data.seed": Key("int", 0, check="nonneg"),
    "data.n_pos": Key("int", 1000, check="pos"),
    "data.n_neg": Key("int", 1000, check="pos"),
    "data.d": Key("int", 10, check="pos"),
    "data.separation": Key("float", 2.0, check="nonneg"),
    "data.normalize": Key("bool", True),
    "split.seed": Key("int", 0, check="nonneg"),
    "split.neg_keep_fraction": Key("float", 1.0, check="unit"),
    "split.test_fraction": Key("float", 0.2, check="frac"),
    "split.flip_fraction": Key("float", 0.0, check="frac"),
    "problem.alpha": Key("float", 2.0, check="pos"),
    "problem.theta": Key("float", 10.0, check="nonneg"),
    "problem.constraint": Key("str", "ball", ("ball", "box", "free")),
    "problem.radius": Key("float", 10.0, check="pos"),
    "problem.geometry": Key("str", "entropy", ("entropy", "euclidean")),
    "solver.name": Key("str", "pg-smd-d2", SOLVERS),
    "solver.T": Key("int", 20, check="pos"),
    "solver.batch": Key("int", 1, check="pos"),
    "solver.gamma": Key("opt_float", None, check="pos"),
    "solver.eta_x_scale": Key("float", 1.0, check="pos"),
    "solver.eta_y_scale": Key("float", 1.0, check="pos"),
    "solver.C_k": Key("float", 4.0, check="pos"),
    "solver.svrg_J": Key("opt_int", None, check="pos"),
    "solver.svrg_eta_x": Key("opt_float", None, check="pos"),
    "solver.svrg_eta_y": Key("opt_float", None, check="pos"),
    "solver.pl_eta": Key("float", 0.1, check="pos"),
    "solver.pl_inner_iters": Key("int", 200, check="pos"),
    "solver.pl_eta_x": Key("opt_float", None, check="pos"),
    "solver.pl_eta_y": Key("opt_float", None, check="pos"),
    "solver.pl_stages": Key("int", 2, check="pos"),
    "solver.pl_lam": Key("float", 1.0, check="pos"),
    "solver.pl_dual_init": Key("str", "argmax", ("argmax", "uniform")),
    "solver.erm_steps": Key("int", 10000, check="pos"),
    "solver.erm_step_sizes": Key("floats", [0.1]),
    "solver.erm_step_starts": Key("ints", [0]),
    "run.seed": Key("int", 0, check="nonneg"),
    "diagnostics.psi_stride": Key("int", 1, check="pos"),
    "diagnostics.moreau_stride": Key("int", 10, check="pos"),
    "diagnostics.tol": Key("float", 1e-8, check="pos"),
    "diagnostics.max_iters": Key("int", 100000, check="pos"),
    "diagnostics.metrics": Key("bool", True),
    "diagnostics.wall_clock": Key("bool", False),
    "output.dir": Key("str", "out"),
    "output.prefix": Key("str", ""),
}


def _convert(key, spec, raw, line=None):
    def fail(msg):
        raise ConfigurationError(f"{key}: {msg}" + (f" (line {line})" if line else ""))

    if isinstance(raw, str):
        text = raw.strip()
    else:
        text = raw
    try:
        if spec.kind == "str":
            val = str(text)
        elif spec.kind == "bool":
            if isinstance(text, bool):
                val = text
            elif str(text).lower() in ("true", "yes", "1", "on"):
                val = True
            elif str(text).lower() in ("false", "no", "0", "off"):
                val = False
            else:
                fail(f"expected a boolean, got {text!r}")
        elif spec.kind in ("int", "opt_int"):
            if spec.kind == "opt_int" and (text is None or str(text).lower() == AUTO):
                return None
            if isinstance(text, float) and not text.is_integer():
                fail(f"expected an integer, got {text!r}")
            val = int(text)
        elif spec.kind in ("float", "opt_float"):
            if spec.kind == "opt_float" and (text is None or str(text).lower() == AUTO):
                return None
            val = float(text)
            if not math.isfinite(val):
                fail("must be finite")
        elif spec.kind in ("floats", "ints"):
            items = text if isinstance(text, list) else [s for s in str(text).split(",") if s.strip()]
            cast = float if spec.kind == "floats" else int
            val = [cast(s) for s in items]
            if not val:
                fail("expected a non-empty list")
        else:  # pragma: no cover - schema error
            raise AssertionError(spec.kind)
    except (TypeError, ValueError):
        fail(f"cannot convert {text!r} to {spec.kind}")
    if spec.choices and val not in spec.choices:
        fail(f"must be one of {', '.join(spec.choices)}; got {val!r}")
    values = val if isinstance(val, list) else [val]
    for v in values:
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            if spec.check == "pos" and not v > 0:
                fail("must be positive")
            if spec.check == "nonneg" and not v >= 0:
                fail("must be nonnegative")
            if spec.check == "unit" and not 0 < v <= 1:
                fail("must lie in (0, 1]")
            if spec.check == "frac" and not 0 <= v < 1:
                fail("must lie in [0, 1)")
    return val


def resolve(overrides: dict) -> dict:
    """Defaults updated with ``overrides``; unknown keys are rejected."""
    unknown = sorted(set(overrides) - set(SCHEMA))
    if unknown:
        raise ConfigurationError(f"unknown configuration key(s): {', '.join(unknown)}")
    cfg = {k: (list(v.default) if isinstance(v.default, list) else v.default) for k, v in SCHEMA.items()}
    for k, v in overrides.items():
        cfg[k] = _convert(k, SCHEMA[k], v)
    _cross_validate(cfg)
    return cfg


def _cross_validate(cfg):
    if cfg["data.source"] == "libsvm" and not cfg["data.path"]:
        raise ConfigurationError("data.path: required when data.source = libsvm")
    if len(cfg["solver.erm_step_sizes"]) != len(cfg["solver.erm_step_starts"]):
        raise ConfigurationError("solver.erm_step_starts: needs one entry per solver.erm_step_sizes value")
    if cfg["solver.name"] == "pl-smd" and (cfg["solver.pl_eta_x"] is None or cfg["solver.pl_eta_y"] is None):
        raise ConfigurationError("solver.pl_eta_x: pl-smd needs explicit solver.pl_eta_x and solver.pl_eta_y")
    if cfg["solver.name"] == "pg-smd-d2" and cfg["problem.theta"] == 0:
        raise ConfigurationError("problem.theta: pg-smd-d2 needs theta > 0")
    if cfg["data.d"] < 2 and cfg["data.source"] == "synthetic":
        raise ConfigurationError("data.d: synthetic data needs d >= 2 (one column is the bias)")


def parse_config_text(text: str) -> dict:
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from None
        if not isinstance(doc, dict):
            raise ParseError("JSON configuration must be an object")
        raw = doc.get("config", doc)
        if not isinstance(raw, dict):
            raise ParseError("embedded configuration must be an object")
        return resolve(raw)
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError("expected 'section.key = value'", lineno)
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigurationError(f"unknown configuration key {key!r} (line {lineno})")
        if key in raw:
            raise ConfigurationError(f"duplicate configuration key {key!r} (line {lineno})")
        raw[key] = _convert(key, SCHEMA[key], value, lineno)
    return resolve(raw)


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def dump_config(cfg: dict) -> str:
    lines = []
    for k in SCHEMA:
        v = cfg[k]
        if v is None:
            v = AUTO
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, list):
            v = ",".join(repr(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
