"""Experiment configuration: JSON schema checks and resolution to runtime objects.

Errors carry ``path:line`` anchors pointing at the offending key in the JSON
source so they can be fixed without hunting.
"""
from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .envs import KNOBS, CartPoleSpec, ChainSpec, MountainCarSpec
from .errors import ConfigError, RobustLSPIError

ALGORITHMS = ("rlspi", "lspi", "exact-robust-pi", "exact-pi")
ENV_KINDS = {"chain": ChainSpec, "cartpole": CartPoleSpec, "mountain_car": MountainCarSpec}
UNCERTAINTY_KINDS = ("none", "sphere", "slip_sets")

_TOP = {
    "environment": dict,
    "algorithm": str,
    "features": dict,
    "uncertainty": dict,
    "alpha": float,
    "lam": float,
    "eps0": float,
    "K": int,
    "t": int,
    "h": int,
    "exploration": float,
    "inner_min_steps": int,
    "inner_max_steps": int,
    "sweep": dict,
    "replications": int,
    "base_seed": int,
    "output": str,
    "eval_episodes": int,
    "ridge": float,
}


@dataclass(frozen=True)
class ExperimentConfig:
    environment: dict
    algorithm: str = "rlspi"
    features: dict = field(default_factory=dict)
    uncertainty: dict = field(default_factory=lambda: {"kind": "none"})
    alpha: float = 0.9
    lam: float = 0.0
    eps0: float = 0.1
    K: int = 20
    t: int = 20
    h: int = 50
    exploration: float = 0.05
    inner_min_steps: int | None = None
    inner_max_steps: int = 1_000_000
    sweep: dict = field(default_factory=dict)
    replications: int = 20
    base_seed: int = 0
    output: str = "results"
    eval_episodes: int = 20
    ridge: float | None = None

    @property
    def env_kind(self) -> str:
        return self.environment["kind"]

    @property
    def tabular(self) -> bool:
        return self.env_kind == "chain"

    def env_spec(self):
        fields = {k: v for k, v in self.environment.items() if k != "kind"}
        if self.tabular:
            fields["discount"] = self.alpha
            if "reward_states" in fields:
                fields["reward_states"] = tuple(fields["reward_states"])
        return ENV_KINDS[self.env_kind](**fields)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class _Anchor:
    """Maps keys to line numbers of their first appearance in the source text."""

    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source

    def line(self, key: str | None) -> int:
        if key is None:
            return 1
        m = re.search(r'"' + re.escape(key) + r'"\s*:', self.text)
        return self.text.count("\n", 0, m.start()) + 1 if m else 1

    def error(self, key: str | None, message: str) -> ConfigError:
        return ConfigError(f"{self.source}:{self.line(key)}: {message}")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    return parse_config(text, str(path))


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    anchor = _Anchor(text, source)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise anchor.error(None, "top level must be a JSON object")
    for key, value in doc.items():
        if key not in _TOP:
            raise anchor.error(key, f"unknown key {key!r}; valid keys: {', '.join(sorted(_TOP))}")
        want = _TOP[key]
        if value is None and key in ("inner_min_steps", "ridge"):
            continue
        ok = isinstance(value, want) and not isinstance(value, bool)
        if want is float:
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if not ok:
            raise anchor.error(key, f"{key!r} must be of type {want.__name__}, got {type(value).__name__}")
    if "environment" not in doc:
        raise anchor.error(None, "missing required key 'environment'")
    fields = {k: (float(v) if _TOP[k] is float and v is not None else v) for k, v in doc.items()}
    try:
        cfg = ExperimentConfig(**fields)
    except TypeError as exc:
        raise anchor.error(None, str(exc)) from exc
    _validate(cfg, anchor)
    return resolve_defaults(cfg)


def _validate(cfg: ExperimentConfig, anchor: _Anchor) -> None:
    env = cfg.environment
    kind = env.get("kind")
    if kind not in ENV_KINDS:
        raise anchor.error("environment", f"environment kind must be one of {sorted(ENV_KINDS)}, got {kind!r}")
    spec_cls = ENV_KINDS[kind]
    allowed = {f.name for f in dataclasses.fields(spec_cls)} - {"discount"}
    for key in env:
        if key != "kind" and key not in allowed:
            raise anchor.error(key, f"unknown {kind} parameter {key!r}; valid: {', '.join(sorted(allowed))}")
    try:
        cfg.env_spec()
    except (RobustLSPIError, TypeError, ValueError) as exc:
        raise anchor.error("environment", f"invalid environment: {exc}") from exc
    if cfg.algorithm not in ALGORITHMS:
        raise anchor.error("algorithm", f"algorithm must be one of {', '.join(ALGORITHMS)}, got {cfg.algorithm!r}")
    if cfg.algorithm.startswith("exact") and not cfg.tabular:
        raise anchor.error("algorithm", f"{cfg.algorithm} needs a finite (chain) environment")
    if not 0 < cfg.alpha < 1:
        raise anchor.error("alpha", "alpha must lie in (0, 1)")
    if not 0 <= cfg.lam < 1:
        raise anchor.error("lam", "lam must lie in [0, 1)")
    if not cfg.eps0 > 0:
        raise anchor.error("eps0", "eps0 must be positive")
    for key in ("K", "t", "h", "replications", "eval_episodes", "inner_max_steps"):
        if getattr(cfg, key) < 1:
            raise anchor.error(key, f"{key} must be at least 1")
    if cfg.ridge is not None and not cfg.ridge > 0:
        raise anchor.error("ridge", "ridge must be positive")
    if not 0 <= cfg.exploration <= 1:
        raise anchor.error("exploration", "exploration must lie in [0, 1]")
    unc = cfg.uncertainty
    ukind = unc.get("kind", "none")
    if ukind not in UNCERTAINTY_KINDS:
        raise anchor.error("uncertainty", f"uncertainty kind must be one of {', '.join(UNCERTAINTY_KINDS)}, got {ukind!r}")
    if ukind == "sphere":
        if unc.get("radius_rule", "absolute") not in ("absolute", "frobenius_scaled"):
            raise anchor.error("radius_rule", "radius_rule must be 'absolute' or 'frobenius_scaled'")
        r = unc.get("radius")
        if not isinstance(r, (int, float)) or isinstance(r, bool) or r < 0:
            raise anchor.error("radius", "sphere radius must be a nonnegative number")
    if ukind == "slip_sets":
        if not cfg.tabular:
            raise anchor.error("uncertainty", "slip_sets needs the chain environment")
        slips = unc.get("slips")
        if not isinstance(slips, list) or not slips or not all(isinstance(p, (int, float)) and 0 <= p <= 0.5 for p in slips):
            raise anchor.error("slips", "slips must be a non-empty list of numbers in [0, 0.5]")
    if cfg.algorithm == "exact-robust-pi" and ukind != "slip_sets":
        key = "uncertainty" if anchor.line("uncertainty") > 1 else "algorithm"
        raise anchor.error(key, "exact-robust-pi needs slip_sets uncertainty")
    if cfg.sweep:
        knob, values = cfg.sweep.get("knob"), cfg.sweep.get("values")
        valid = KNOBS[ENV_KINDS[kind]]
        if knob not in valid and knob not in ("p", "action-noise"):
            raise anchor.error("knob", f"unknown knob {knob!r} for {kind}; valid knobs: {', '.join(valid)}")
        if not isinstance(values, list) or not values or not all(isinstance(v, (int, float)) for v in values):
            raise anchor.error("values", "sweep values must be a non-empty list of numbers")
    fkind = cfg.features.get("kind")
    if fkind is not None and fkind not in ("tabular", "polynomial", "rbf"):
        raise anchor.error("features", f"state feature kind must be tabular, polynomial or rbf, got {fkind!r}")
    if fkind == "tabular" and not cfg.tabular:
        raise anchor.error("features", "tabular features need a finite environment")


def resolve_defaults(cfg: ExperimentConfig) -> ExperimentConfig:
    """Fill feature, uncertainty and sweep defaults that depend on the environment."""
    spec = cfg.env_spec()
    feats = dict(cfg.features)
    if not feats:
        if cfg.tabular:
            feats = {"kind": "polynomial", "degree": 2}
        else:
            feats = {"kind": "rbf", "counts": [3] * len(spec.state_low)}
    if feats["kind"] == "tabular":
        feats.setdefault("n", spec.n_states)
    elif cfg.tabular:
        feats.setdefault("low", [0.0])
        feats.setdefault("high", [float(spec.n_states - 1)])
    else:
        feats.setdefault("low", list(spec.state_low))
        feats.setdefault("high", list(spec.state_high))
    unc = {"kind": "none", **cfg.uncertainty}
    if unc["kind"] == "sphere":
        unc.setdefault("radius_rule", "absolute")
        unc.setdefault("sum_zero", False)
    sweep = dict(cfg.sweep)
    if not sweep:
        knob = KNOBS[type(spec)][0]
        sweep = {"knob": knob, "values": [getattr(spec, knob)]}
    return dataclasses.replace(cfg, features=feats, uncertainty=unc, sweep=sweep)
