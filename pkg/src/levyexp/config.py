"""Flat ``key = value`` experiment configuration.

Grammar: one assignment per line, ``#`` starts a comment, keys are dotted
names, values are numbers, words, ``true``/``false`` or comma-separated
number lists.  Jump-measure keys pass through under ``triplet.jump.*`` and
``env.jump.*`` (see :func:`levyexp.levy_core.jumps_from_params`).

Validation collects every problem before reporting; see :func:`validate_config`.
"""
from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field

from .errors import ConfigError
from .levy_core import (
    LevyTriplet,
    exponent_domain,
    jumps_from_params,
    triplet_from_params,
    validate_triplet,
)
from .path_sim import SimConfig

KINDS = ("exponent", "simulate", "firstpassage", "asymptotics", "cbre", "acceptance")

# key -> type; "floats"/"ints" are comma-separated lists
SCHEMA = {
    "kind": "str",
    "seed": "int",
    "name": "str",
    "alpha": "float",
    "beta": "float",
    "tilt": "str",
    "triplet.drift_a": "float",
    "triplet.sigma": "float",
    "env.beta_drift": "float",
    "env.sigma": "float",
    "cbre.x0": "float",
    "cbre.c": "float",
    "cbre.alpha": "float",
    "f.family": "str",
    "f.K": "float",
    "f.beta": "float",
    "f.alpha": "float",
    "f.beta0": "float",
    "f.x0": "float",
    "f.c": "float",
    "grid.lambda": "floats",
    "grid.t": "floats",
    "grid.x": "floats",
    "grid.y": "floats",
    "sim.step_h": "float",
    "sim.n_paths": "int",
    "sim.batch_size": "int",
    "sim.horizon_t": "float",
    "sim.small_jump_cutoff": "float",
    "sim.rel_tol": "float",
    "sim.workers": "int",
    "coeff.which": "str",
    "coeff.horizon": "float",
    "fp.x": "float",
    "simulate.binary": "bool",
    "check.rate_rel": "float",
    "check.poly_abs": "float",
    "check.closed_form_abs": "float",
    "acceptance.criteria": "ints",
    "report.csv": "bool",
}
JUMP_PREFIXES = ("triplet.jump.", "env.jump.")
COEFFS = ("none", "D2", "D3", "D4", "regime5", "c_rho")

REQUIRED = {
    "exponent": ("grid.lambda",),
    "simulate": ("sim.horizon_t",),
    "firstpassage": ("fp.x", "grid.t"),
    "asymptotics": ("grid.t", "f.family", "alpha", "beta"),
    "cbre": ("cbre.x0", "cbre.c", "cbre.alpha", "grid.t"),
    "acceptance": (),
}

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z0-9_]+)*$")


@dataclass(frozen=True)
class ExperimentConfig:
    entries: dict = field(default_factory=dict)

    def get(self, key, default=None):
        return self.entries.get(key, default)

    @property
    def kind(self) -> str:
        return self.entries["kind"]

    @property
    def seed(self) -> int:
        return self.entries["seed"]

    def with_(self, **updates) -> "ExperimentConfig":
        new = dict(self.entries)
        for k, v in updates.items():
            new[k.replace("__", ".")] = v
        return ExperimentConfig(new)

    def prefixed(self, prefix: str) -> dict:
        return {k[len(prefix):]: v for k, v in self.entries.items() if k.startswith(prefix)}

    def triplet(self) -> LevyTriplet:
        return triplet_from_params(self.prefixed("triplet."))

    def sim(self, **over) -> SimConfig:
        kw = {k: v for k, v in self.prefixed("sim.").items()}
        kw["seed"] = self.seed
        kw.update(over)
        return SimConfig(**kw)

    def digest(self) -> str:
        return hashlib.sha256(serialize(self).encode()).hexdigest()


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize(config: ExperimentConfig) -> str:
    """Canonical text: kind and seed first, remaining keys sorted."""
    head = [k for k in ("kind", "seed") if k in config.entries]
    rest = sorted(k for k in config.entries if k not in head)
    return "".join(f"{k} = {_format(config.entries[k])}\n" for k in head + rest)


def _convert(kind, raw):
    if kind == "str":
        return raw
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"expected true/false, got {raw!r}")
    if kind == "int":
        return int(raw, 0)
    if kind == "float":
        return float(raw)
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    return [int(p, 0) for p in parts] if kind == "ints" else [float(p) for p in parts]


def _jump_value(raw):
    try:
        return float(raw)
    except ValueError:
        return raw


def parse_config(text: str) -> tuple[dict, list[str]]:
    """Typed entries plus line-numbered syntax diagnostics."""
    entries, diags = {}, []
    for no, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            diags.append(f"line {no}: expected 'key = value'")
            continue
        key, raw = (s.strip() for s in body.split("=", 1))
        if not _KEY.match(key):
            diags.append(f"line {no}: malformed key {key!r}")
            continue
        if key in entries:
            diags.append(f"line {no}: duplicate key {key!r}")
            continue
        if key.startswith(JUMP_PREFIXES):
            entries[key] = _jump_value(raw)
            continue
        if key not in SCHEMA:
            diags.append(f"line {no}: unknown key {key!r}")
            continue
        try:
            entries[key] = _convert(SCHEMA[key], raw)
        except ValueError:
            diags.append(f"line {no}: {key}: cannot read {raw!r} as {SCHEMA[key]}")
    return entries, diags


def _check_grid(e, key, diags, positive=False):
    g = e.get(key)
    if g is None:
        return
    if not g:
        diags.append(f"{key}: grid must be nonempty")
    elif any(not math.isfinite(v) for v in g):
        diags.append(f"{key}: grid values must be finite")
    elif positive and any(v < 0 for v in g):
        diags.append(f"{key}: grid values must be >= 0")


def semantic_diagnostics(e: dict) -> list[str]:
    diags = []
    kind = e.get("kind")
    if kind is None:
        diags.append("kind required (one of " + ", ".join(KINDS) + ")")
    elif kind not in KINDS:
        diags.append(f"kind: unknown experiment kind {kind!r}")
    if "seed" not in e:
        diags.append("seed required")
    elif not 0 <= e["seed"] < 2**64:
        diags.append("seed: must be an unsigned 64-bit integer")
    for key in REQUIRED.get(kind, ()):
        if key not in e:
            diags.append(f"{key} required for kind {kind}")
    for key in ("grid.lambda", "grid.x", "grid.y"):
        _check_grid(e, key, diags)
    _check_grid(e, "grid.t", diags, positive=True)

    trip = None
    if kind in ("exponent", "simulate", "firstpassage", "asymptotics"):
        params = {k[len("triplet."):]: v for k, v in e.items() if k.startswith("triplet.")}
        try:
            jumps = jumps_from_params({k[5:]: v for k, v in params.items() if k.startswith("jump.")})
            probe = LevyTriplet.__new__(LevyTriplet)
            object.__setattr__(probe, "drift_a", float(params.get("drift_a", 0.0)))
            object.__setattr__(probe, "sigma", float(params.get("sigma", 0.0)))
            object.__setattr__(probe, "jumps", jumps)
            problems = validate_triplet(probe)
            diags.extend(f"triplet: {p}" for p in problems)
            if not problems:
                trip = triplet_from_params(params)
        except (KeyError, ValueError, TypeError) as exc:
            diags.append(f"triplet.jump: {exc}")
    if kind == "cbre":
        for key, ok, what in (
            ("cbre.x0", lambda v: v > 0, "x0 must be > 0"),
            ("cbre.c", lambda v: v >= 0, "c must be >= 0"),
            ("cbre.alpha", lambda v: 0 < v <= 1, "alpha must lie in (0, 1]"),
            ("env.sigma", lambda v: v >= 0, "sigma must be >= 0"),
        ):
            if key in e and not ok(e[key]):
                diags.append(f"{key}: {what} (got {e[key]})")
        try:
            jumps_from_params({k[len("env.jump."):]: v for k, v in e.items() if k.startswith("env.jump.")}).validate()
        except (KeyError, ValueError, TypeError) as exc:
            diags.append(f"env.jump: {exc}")
    if "alpha" in e and not e["alpha"] > 0:
        diags.append(f"alpha: must be > 0 (got {e['alpha']})")
    if "beta" in e:
        b = e["beta"]
        if trip is not None:
            dom = exponent_domain(trip)
            if not (b > 0 and dom.interior(b)):
                diags.append(
                    f"beta={b:g} outside the interior of the positive exponent domain: need 0 < beta < {dom.upper:g} "
                    f"(domain {dom})"
                )
        elif not b > 0:
            diags.append(f"beta: must be > 0 (got {b})")
    fam = e.get("f.family")
    if fam is not None and fam not in ("power_tail", "cbre_tail"):
        diags.append(f"f.family: unknown F family {fam!r}")
    if fam == "power_tail":
        for key in ("f.K", "f.beta", "f.alpha"):
            if key not in e:
                diags.append(f"{key} required for f.family = power_tail")
    if fam == "cbre_tail":
        for key in ("f.x0", "f.c", "f.alpha"):
            if key not in e:
                diags.append(f"{key} required for f.family = cbre_tail")
    if e.get("coeff.which", "none") not in COEFFS:
        diags.append(f"coeff.which: must be one of {', '.join(COEFFS)}")
    if e.get("coeff.which", "none") in ("D2", "D3", "D4") and ("grid.x" not in e or "coeff.horizon" not in e):
        diags.append("grid.x and coeff.horizon required for D2, D3 and D4")
    if e.get("coeff.which") == "D3" and "grid.y" not in e:
        diags.append("grid.y required for D3")
    tilt = e.get("tilt")
    if tilt is not None and tilt not in ("auto", "none"):
        try:
            float(tilt)
        except ValueError:
            diags.append(f"tilt: expected auto, none or a number (got {tilt!r})")
    sim_kw = {k[4:]: v for k, v in e.items() if k.startswith("sim.")}
    if "seed" in e:
        try:
            diags.extend(f"sim: {p}" for p in SimConfig(seed=e["seed"] % 2**64, **sim_kw).validate())
        except TypeError as exc:
            diags.append(f"sim: {exc}")
    crit = e.get("acceptance.criteria")
    if crit is not None and any(not 1 <= c <= 12 for c in crit):
        diags.append("acceptance.criteria: criterion numbers run from 1 to 12")
    return diags


def config_diagnostics(text: str) -> list[str]:
    entries, diags = parse_config(text)
    return diags + semantic_diagnostics(entries)


def validate_config(text: str) -> ExperimentConfig:
    """Parse and validate; raises ConfigError listing every violation."""
    entries, diags = parse_config(text)
    diags += semantic_diagnostics(entries)
    if diags:
        raise ConfigError(diags)
    return ExperimentConfig(entries)
