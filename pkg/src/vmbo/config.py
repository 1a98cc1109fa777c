"""Flat ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Keys::

    label             free-form name used in summaries (default: method)
    method            naive | augmented | hybrid | random
    switch_step       hybrid: measurements before switching to the forest (default n_initial + 2)
    kernel            rbf | matern12 | matern32 | matern52
    signal_variance   GP prior variance on standardized targets (default 1)
    length_scales     one value, or 4 comma-separated values (default 1)
    noise_variance    GP diagonal term on standardized targets (default 1e-4)
    xi                EI exploration margin, standardized units (default 0.01)
    hyper_grid        true: pick a shared length scale by marginal likelihood
    n_trees           forest size (default 100)
    min_samples_leaf  default 2
    max_features      all | sqrt
    forest_seed       extra seed mixed into every forest fit (default 0)
    self_pairs        include (j, j) rows in pairwise training (default true)
    objective         time | cost | time_cost_product
    stopping          fixed_budget | ei_fraction | prediction_delta
    budget            fixed_budget: measurement count, or "all" (default)
    ei_fraction       ei_fraction: threshold q (default 0.1)
    theta             prediction_delta: threshold (default 1.1)
    n_initial         default 3
    init_strategy     random | maxmin | explicit
    initial_vms       explicit: comma-separated VM names
    seed              base seed of a single search
    fail_policy       raise | worst_case (unset: failed pairs are a replay error)
    workloads         replay: "all" or comma-separated ids
    n_repeats         replay: repeats per workload (default 100)
    base_seed         replay: repeat r uses seed base_seed + r (default 0)
    thresholds        sweep: comma-separated thresholds
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .dataset import ObjectiveKind
from .errors import ConfigError
from .forest import ForestParams
from .gp import Kernel, KernelVariant
from .optimizer import EiFraction, FixedBudget, Method, PredictionDelta, SearchConfig

SEARCH_KEYS = (
    "label", "method", "switch_step", "kernel", "signal_variance", "length_scales",
    "noise_variance", "xi", "hyper_grid", "n_trees", "min_samples_leaf", "max_features",
    "forest_seed", "self_pairs", "objective", "stopping", "budget", "ei_fraction", "theta",
    "n_initial", "init_strategy", "initial_vms", "seed", "fail_policy",
)
PLAN_KEYS = ("workloads", "n_repeats", "base_seed", "thresholds")
KNOWN_KEYS = SEARCH_KEYS + PLAN_KEYS

DEFAULT_THRESHOLDS = (0.9, 1.0, 1.1, 1.2, 1.25, 1.3)


@dataclass(frozen=True)
class PlanOptions:
    workloads: Optional[tuple] = None  # None: every workload in the table
    n_repeats: int = 100
    base_seed: int = 0
    thresholds: tuple = DEFAULT_THRESHOLDS


def parse_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = value
    return out


def parse_overrides(overrides: Iterable[str]) -> dict:
    out = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = value
    return out


def _int(key, raw) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None


def _float(key, raw) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None


def _bool(key, raw) -> bool:
    v = raw.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {raw!r}")


def _list(raw) -> tuple:
    return tuple(p.strip() for p in raw.split(",") if p.strip())


def search_config_from_mapping(values: Mapping[str, str]) -> SearchConfig:
    v = dict(values)
    unknown = set(v) - set(KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    try:
        method = Method.parse(v.get("method", "naive"))
        try:
            variant = KernelVariant.parse(v.get("kernel", "matern52"))
        except ValueError as exc:
            raise ConfigError(f"kernel: {exc}") from None
        scales = tuple(_float("length_scales", s) for s in _list(v.get("length_scales", "1")))
        if len(scales) == 1:
            scales = scales * 4
        kernel = Kernel(variant, _float("signal_variance", v.get("signal_variance", "1")), scales)
        forest = ForestParams(
            n_trees=_int("n_trees", v.get("n_trees", "100")),
            min_samples_leaf=_int("min_samples_leaf", v.get("min_samples_leaf", "2")),
            max_features=v.get("max_features", "all"),
            seed=_int("forest_seed", v.get("forest_seed", "0")),
        )
        # every rule is built so that a bad threshold fails even when another rule is active
        budget = v.get("budget", "all").strip().lower()
        rules = {
            "fixed_budget": FixedBudget(None if budget in ("all", "") else _int("budget", budget)),
            "ei_fraction": EiFraction(_float("ei_fraction", v.get("ei_fraction", "0.1"))),
            "prediction_delta": PredictionDelta(_float("theta", v.get("theta", "1.1"))),
        }
        stopping_kind = v.get("stopping", "fixed_budget").strip().lower()
        if stopping_kind not in rules:
            raise ConfigError(f"stopping: unknown rule {stopping_kind!r}")
        stopping = rules[stopping_kind]
        try:
            objective = ObjectiveKind.parse(v.get("objective", "time"))
        except ValueError as exc:
            raise ConfigError(f"objective: {exc}") from None
        switch = v.get("switch_step", "").strip()
        fail = v.get("fail_policy", "").strip() or None
        return SearchConfig(
            method=method,
            kernel=kernel,
            forest=forest,
            objective=objective,
            stopping=stopping,
            n_initial=_int("n_initial", v.get("n_initial", "3")),
            init_strategy=v.get("init_strategy", "random").strip().lower(),
            initial_vms=_list(v.get("initial_vms", "")),
            seed=_int("seed", v.get("seed", "0")),
            switch_step=_int("switch_step", switch) if switch else None,
            noise_variance=_float("noise_variance", v.get("noise_variance", "1e-4")),
            xi=_float("xi", v.get("xi", "0.01")),
            hyper_grid=_bool("hyper_grid", v.get("hyper_grid", "false")),
            self_pairs=_bool("self_pairs", v.get("self_pairs", "true")),
            fail_policy=fail,
            label=v.get("label") or None,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def plan_options_from_mapping(values: Mapping[str, str]) -> PlanOptions:
    ws = values.get("workloads", "all").strip()
    thresholds = values.get("thresholds")
    opts = PlanOptions(
        workloads=None if ws in ("", "all") else _list(ws),
        n_repeats=_int("n_repeats", values.get("n_repeats", "100")),
        base_seed=_int("base_seed", values.get("base_seed", "0")),
        thresholds=(tuple(_float("thresholds", t) for t in _list(thresholds))
                    if thresholds is not None else DEFAULT_THRESHOLDS),
    )
    if opts.n_repeats < 1:
        raise ConfigError("n_repeats must be >= 1")
    if opts.base_seed < 0:
        raise ConfigError("base_seed must be nonnegative")
    return opts


def load_config(path: Optional[str], overrides: Iterable[str] = ()) -> tuple:
    """Read a config file (optional), apply overrides, return (SearchConfig, PlanOptions)."""
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_text(p.read_text(encoding="utf-8"), str(p)))
    values.update(parse_overrides(overrides))
    return search_config_from_mapping(values), plan_options_from_mapping(values)


def _num(x) -> str:
    return repr(float(x))


def config_to_mapping(cfg: SearchConfig) -> dict:
    out = {
        "method": cfg.method.value,
        "kernel": cfg.kernel.variant.value,
        "signal_variance": _num(cfg.kernel.signal_variance),
        "length_scales": ",".join(_num(s) for s in cfg.kernel.length_scales),
        "noise_variance": _num(cfg.noise_variance),
        "xi": _num(cfg.xi),
        "hyper_grid": str(cfg.hyper_grid).lower(),
        "n_trees": str(cfg.forest.n_trees),
        "min_samples_leaf": str(cfg.forest.min_samples_leaf),
        "max_features": cfg.forest.max_features,
        "forest_seed": str(cfg.forest.seed),
        "self_pairs": str(cfg.self_pairs).lower(),
        "objective": cfg.objective.value,
        "stopping": cfg.stopping.kind,
        "n_initial": str(cfg.n_initial),
        "init_strategy": cfg.init_strategy,
        "seed": str(cfg.seed),
    }
    if cfg.label:
        out["label"] = cfg.label
    if cfg.method is Method.HYBRID:
        out["switch_step"] = str(cfg.effective_switch_step)
    if isinstance(cfg.stopping, FixedBudget):
        out["budget"] = "all" if cfg.stopping.n is None else str(cfg.stopping.n)
    elif isinstance(cfg.stopping, EiFraction):
        out["ei_fraction"] = _num(cfg.stopping.fraction)
    else:
        out["theta"] = _num(cfg.stopping.theta)
    if cfg.initial_vms:
        out["initial_vms"] = ",".join(cfg.initial_vms)
    if cfg.fail_policy:
        out["fail_policy"] = cfg.fail_policy
    return out


def config_to_text(cfg: SearchConfig) -> str:
    mapping = config_to_mapping(cfg)
    return "".join(f"{k} = {mapping[k]}\n" for k in SEARCH_KEYS if k in mapping)


def with_overrides(cfg: SearchConfig, overrides: Iterable[str]) -> SearchConfig:
    values = config_to_mapping(cfg)
    values.update(parse_overrides(overrides))
    return search_config_from_mapping(values)
