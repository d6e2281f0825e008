"""Declarative YAML run configuration with market, engine and experiment sections."""
from __future__ import annotations

import copy
from dataclasses import fields
from typing import Optional

import yaml

from .engine import EngineConfig
from .harness import BASE_SEED, ExperimentSpec
from .market_core import RESERVE_RULES, ConfigurationError
from .state import MarketState, SellerState
from .strategy import BuyerProfile

PRESETS = ("random", "ladder", "appendix", "explicit")

DEFAULTS = {
    "market": {
        "preset": "random",
        "buyers": 8,
        "sellers": 2,
        "capacities": [60.0, 40.0],
        "connectivity_percent": 50.0,
        "base_seed": BASE_SEED,
        "q_bar_range": [10.0, 60.0],
        "kappa_range": [1.0, 3.5],
        "budget_range": [100.0, 1000.0],
        "epsilon": 2.5,
    },
    "engine": {
        "max_steps": 10_000,
        "convergence_window": 200,
        "reserve_rule": "reactive",
        "rng_seed": None,
        "buyer_mode": "best_response",
        "per_seller_price": False,
    },
    "experiment": {
        "levels": list(range(0, 101, 10)),
        "seeds_per_level": 20,
        "jobs": 1,
        "delta": 0.1,
        "shift_epsilon": 0.1,
    },
}


class ConfigError(ConfigurationError):
    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field, self.line = field, line
        where = []
        if field:
            where.append(f"field '{field}'")
        if line:
            where.append(f"line {line}")
        super().__init__(f"{message}" + (f" ({', '.join(where)})" if where else ""))


def _key_lines(node, prefix="", out=None) -> dict:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}{k.value}"
            out[path] = k.start_mark.line + 1
            _key_lines(v, path + ".", out)
    return out


def _merge(base: dict, extra: dict, lines: dict):
    for k, v in extra.items():
        if k not in base:
            raise ConfigError("unknown section", k, lines.get(k))
        if not isinstance(v, dict):
            raise ConfigError("expected a mapping", k, lines.get(k))
        _merge_section(base[k], v, lines, k + ".")


def _merge_section(base: dict, extra: dict, lines: dict, prefix: str):
    for k, v in extra.items():
        path = f"{prefix}{k}"
        # explicit markets carry free-form lists of agents and bids
        if k not in base and not (prefix == "market." and k in ("buyer_list", "seller_list", "bids", "links")):
            raise ConfigError("unknown key", path, lines.get(path))
        base[k] = v


def load_text(text: str, overrides=()) -> dict:
    try:
        raw = yaml.safe_load(text) or {}
        lines = _key_lines(yaml.compose(text)) if text.strip() else {}
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(e, 'problem', e)}",
                          line=None if mark is None else mark.line + 1) from None
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", line=1)
    cfg = copy.deepcopy(DEFAULTS)
    _merge(cfg, raw, lines)
    for item in overrides:
        apply_override(cfg, item)
    validate(cfg, lines)
    return cfg


def load(path: Optional[str], overrides=()) -> dict:
    if path is None:
        return load_text("", overrides)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", field=str(path)) from None
    return load_text(text, overrides)


def apply_override(cfg: dict, item: str):
    if "=" not in item:
        raise ConfigError(f"override must be key=value, got {item!r}")
    key, _, value = item.partition("=")
    parts = key.strip().split(".")
    if len(parts) != 2 or parts[0] not in cfg:
        raise ConfigError("override key must be section.field", key)
    try:
        cfg[parts[0]][parts[1]] = yaml.safe_load(value)
    except yaml.YAMLError:
        raise ConfigError(f"cannot parse override value {value!r}", key) from None


def _check(cond, message, path, lines):
    if not cond:
        raise ConfigError(message, path, lines.get(path))


def validate(cfg: dict, lines: Optional[dict] = None):
    """Build every object the config describes, turning failures into ConfigError."""
    lines = lines or {}
    m, e, x = cfg["market"], cfg["engine"], cfg["experiment"]
    _check(m["preset"] in PRESETS, f"preset must be one of {PRESETS}", "market.preset", lines)
    for name, typ in (("buyers", int), ("sellers", int), ("base_seed", int)):
        _check(isinstance(m[name], typ) and not isinstance(m[name], bool), f"expected {typ.__name__}",
               f"market.{name}", lines)
    for name in ("q_bar_range", "kappa_range", "budget_range", "capacities"):
        _check(isinstance(m[name], list) and all(isinstance(v, (int, float)) for v in m[name]),
               "expected a list of numbers", f"market.{name}", lines)
    for name in ("q_bar_range", "kappa_range", "budget_range"):
        _check(len(m[name]) == 2, "expected [low, high]", f"market.{name}", lines)
    _check(isinstance(x["levels"], list) and x["levels"]
           and all(isinstance(v, (int, float)) and 0 <= v <= 100 for v in x["levels"]),
           "levels must be a nonempty list of percents in [0, 100]", "experiment.levels", lines)
    _check(isinstance(x["seeds_per_level"], int) and x["seeds_per_level"] > 0,
           "must be a positive integer", "experiment.seeds_per_level", lines)
    _check(isinstance(x["jobs"], int) and x["jobs"] > 0, "must be a positive integer", "experiment.jobs", lines)
    for name in ("delta", "shift_epsilon"):
        _check(isinstance(x[name], (int, float)) and x[name] >= 0, "must be a nonnegative number",
               f"experiment.{name}", lines)
    _check(x["shift_epsilon"] > 0, "must be > 0", "experiment.shift_epsilon", lines)
    _check(isinstance(m["epsilon"], (int, float)) and m["epsilon"] > 0, "must be > 0", "market.epsilon", lines)
    _check(all(c > 0 for c in m["capacities"]), "capacities must be > 0", "market.capacities", lines)
    _check(isinstance(m["connectivity_percent"], (int, float)) and 0 <= m["connectivity_percent"] <= 100,
           "must lie in [0, 100]", "market.connectivity_percent", lines)
    _check(isinstance(e["max_steps"], int) and e["max_steps"] > 0, "must be a positive integer",
           "engine.max_steps", lines)
    _check(isinstance(e["convergence_window"], int) and e["convergence_window"] >= 0,
           "must be a nonnegative integer", "engine.convergence_window", lines)
    _check(e["reserve_rule"] in RESERVE_RULES, f"must be one of {RESERVE_RULES}", "engine.reserve_rule", lines)
    _check(e["buyer_mode"] in ("best_response", "static"), "must be best_response or static",
           "engine.buyer_mode", lines)
    _check(e["rng_seed"] is None or isinstance(e["rng_seed"], int), "must be an integer or null",
           "engine.rng_seed", lines)
    try:
        experiment_spec(cfg)
    except (ConfigurationError, TypeError) as err:
        raise ConfigError(str(err), "market", lines.get("market")) from None
    try:
        engine_config(cfg)
    except (ConfigurationError, TypeError) as err:
        raise ConfigError(str(err), "engine", lines.get("engine")) from None
    if m["preset"] == "explicit":
        try:
            explicit_market(m)
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigError(f"bad explicit market: {err}", "market", lines.get("market")) from None


def experiment_spec(cfg: dict) -> ExperimentSpec:
    m = cfg["market"]
    names = {f.name for f in fields(ExperimentSpec)}
    kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in m.items() if k in names}
    return ExperimentSpec(**kw)


def engine_config(cfg: dict) -> EngineConfig:
    e = cfg["engine"]
    seed = e["rng_seed"] if e["rng_seed"] is not None else cfg["market"]["base_seed"]
    return EngineConfig(max_steps=e["max_steps"], epsilon=cfg["market"]["epsilon"],
                        convergence_window=e["convergence_window"], reserve_rule=e["reserve_rule"],
                        rng_seed=seed, buyer_mode=e["buyer_mode"],
                        per_seller_price=e["per_seller_price"])


def explicit_market(m: dict) -> MarketState:
    """Market from ``buyer_list``, ``seller_list``, ``bids`` and optional extra ``links``."""
    buyers = [BuyerProfile(b["id"], float(b["q_bar"]), float(b["kappa"]), float(b.get("budget", 0.0)))
              for b in m.get("buyer_list", [])]
    sellers = [SellerState(s["id"], float(s["capacity"]), float(s.get("reserve", 0.0)))
               for s in m.get("seller_list", [])]
    bids = {(b["buyer"], b["seller"]): (float(b["quantity"]), float(b["price"])) for b in m.get("bids", [])}
    links = set(bids) | {(l[0], l[1]) for l in m.get("links", [])}
    ids_b = {b.buyer_id for b in buyers}
    ids_s = {s.seller_id for s in sellers}
    for i, j in links:
        if i not in ids_b or j not in ids_s:
            raise ValueError(f"link ({i!r}, {j!r}) names an unknown agent")
    return MarketState.build(buyers, sellers, links, float(m["epsilon"]), bids)
