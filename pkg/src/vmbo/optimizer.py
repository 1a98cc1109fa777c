"""Sequential model-based search over a VM catalog.

Four methods share one loop:

* ``naive``     GP surrogate on VM features, Expected Improvement acquisition.
* ``augmented`` pairwise Extra-Trees surrogate on (source VM, source low-level
  metrics, destination VM), Prediction Delta acquisition.
* ``hybrid``    naive until ``switch_step`` measurements, augmented afterwards.
* ``random``    uniform order without replacement (control baseline).

Every argmax/argmin over VMs breaks ties by lowest catalog index.
"""

from __future__ import annotations

import enum
import functools
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .dataset import LowLevelProfile, MeasurementTable, ObjectiveKind, VmSpec, objective_value
from .errors import ConfigError, FailedMeasurementError, FitError, ModelStateError, SearchError
from .forest import ForestModel, ForestParams, forest_fit
from .gp import Kernel, KernelVariant, expected_improvement, gp_fit, gp_fit_grid

# relative width of the band treated as a tie when picking the best candidate
TIE_RTOL = 1e-9

__all__ = [
    "ObjectiveKind", "Method", "FixedBudget", "EiFraction", "PredictionDelta",
    "SearchConfig", "TrialHistory", "SearchTrace", "StepRecord", "StepDiagnostics",
    "TableEvaluator", "select_initial", "build_pairwise_training", "predict_unmeasured",
    "stopping_check", "run_search", "run_naive_bo", "run_augmented_bo", "run_hybrid_bo",
    "run_random_search",
]


class Method(enum.Enum):
    NAIVE = "naive"
    AUGMENTED = "augmented"
    HYBRID = "hybrid"
    RANDOM = "random"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"random_search": "random", "randomsearch": "random", "naive_bo": "naive",
                   "augmented_bo": "augmented", "hybrid_bo": "hybrid"}
        key = aliases.get(key, key)
        for m in cls:
            if m.value == key:
                return m
        raise ConfigError(f"unknown method {value!r}")


@dataclass(frozen=True)
class FixedBudget:
    n: Optional[int] = None  # None: the whole catalog

    kind = "fixed_budget"


@dataclass(frozen=True)
class EiFraction:
    fraction: float = 0.10

    kind = "ei_fraction"

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise ConfigError(f"ei_fraction must be in (0, 1), got {self.fraction}")


@dataclass(frozen=True)
class PredictionDelta:
    theta: float = 1.1

    kind = "prediction_delta"

    def __post_init__(self):
        if not self.theta > 0:
            raise ConfigError(f"theta must be positive, got {self.theta}")


StoppingRule = Union[FixedBudget, EiFraction, PredictionDelta]

INIT_STRATEGIES = ("maxmin", "random", "explicit")
FAIL_POLICIES = (None, "raise", "worst_case")


@dataclass(frozen=True)
class SearchConfig:
    method: Method = Method.NAIVE
    kernel: Kernel = Kernel()
    forest: ForestParams = ForestParams()
    objective: ObjectiveKind = ObjectiveKind.TIME
    stopping: StoppingRule = FixedBudget()
    n_initial: int = 3
    init_strategy: str = "random"
    initial_vms: tuple = ()
    seed: int = 0
    switch_step: Optional[int] = None  # hybrid only; None means n_initial + 2
    noise_variance: float = 1e-4
    xi: float = 0.01
    hyper_grid: bool = False
    self_pairs: bool = True
    fail_policy: Optional[str] = None
    label: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        object.__setattr__(self, "objective", ObjectiveKind.parse(self.objective))
        object.__setattr__(self, "initial_vms", tuple(self.initial_vms))
        if self.init_strategy not in INIT_STRATEGIES:
            raise ConfigError(f"init_strategy must be one of {INIT_STRATEGIES}")
        if self.init_strategy == "explicit":
            if not self.initial_vms:
                raise ConfigError("init_strategy=explicit requires initial_vms")
            if len(self.initial_vms) != self.n_initial:
                object.__setattr__(self, "n_initial", len(self.initial_vms))
        if self.n_initial < 2:
            raise ConfigError("n_initial must be >= 2")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.fail_policy not in FAIL_POLICIES:
            raise ConfigError(f"fail_policy must be one of raise, worst_case")
        if self.noise_variance < 0:
            raise ConfigError("noise_variance must be nonnegative")
        if self.xi < 0:
            raise ConfigError("xi must be nonnegative")
        if self.switch_step is not None and self.switch_step < self.n_initial:
            raise ConfigError("switch_step must be >= n_initial")
        allowed = {
            Method.NAIVE: (FixedBudget, EiFraction),
            Method.AUGMENTED: (FixedBudget, PredictionDelta),
            Method.HYBRID: (FixedBudget, EiFraction, PredictionDelta),
            Method.RANDOM: (FixedBudget,),
        }[self.method]
        if not isinstance(self.stopping, allowed):
            raise ConfigError(
                f"stopping rule {self.stopping.kind} is not applicable to method {self.method.value}"
            )

    @property
    def name(self) -> str:
        return self.label or self.method.value

    @property
    def effective_switch_step(self) -> int:
        return self.n_initial + 2 if self.switch_step is None else self.switch_step

    def validate_for(self, catalog_size: int) -> None:
        if self.n_initial > catalog_size:
            raise ConfigError(f"n_initial={self.n_initial} exceeds catalog size {catalog_size}")
        if self.kernel.dim != 4:
            raise ConfigError("kernel needs one length scale per VM feature (4)")
        if isinstance(self.stopping, FixedBudget) and self.stopping.n is not None:
            if not self.n_initial <= self.stopping.n <= catalog_size:
                raise ConfigError(
                    f"budget {self.stopping.n} must lie between n_initial and catalog size {catalog_size}"
                )

    def with_seed(self, seed: int) -> "SearchConfig":
        return replace(self, seed=seed)

    def digest(self) -> str:
        from .config import config_to_text  # local import: config depends on this module

        return hashlib.sha256(config_to_text(self).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# history and traces

@dataclass
class TrialHistory:
    """Measurements so far, in acquisition order."""

    names: list = field(default_factory=list)
    values: list = field(default_factory=list)
    profiles: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.names)

    def add(self, vm_name: str, value: float, low_level: LowLevelProfile) -> None:
        if vm_name in self.names:
            raise SearchError(f"VM {vm_name} measured twice")
        self.names.append(vm_name)
        self.values.append(float(value))
        self.profiles.append(low_level)

    def best_so_far(self) -> float:
        if not self.values:
            raise ModelStateError("empty history has no best value")
        return min(self.values)

    @property
    def entries(self) -> list:
        return list(zip(self.names, self.values, self.profiles))


@dataclass(frozen=True)
class StepRecord:
    step_index: int
    vm_name: str
    objective_value: float
    best_so_far: float
    acquisition_score: Optional[float]
    stopped: bool = False

    def to_dict(self) -> dict:
        return {
            "step_index": self.step_index,
            "vm_name": self.vm_name,
            "objective_value": self.objective_value,
            "best_so_far": self.best_so_far,
            "acquisition_score": self.acquisition_score,
            "stopped": self.stopped,
        }


@dataclass(frozen=True)
class StepDiagnostics:
    """Acquisition summary computed before each model-guided pick."""

    measured: int
    phase: str  # "gp", "forest" or "random"
    best_so_far: float
    n_unmeasured: int
    chosen: Optional[str] = None
    max_ei: Optional[float] = None  # original objective units
    min_prediction: Optional[float] = None
    training_rows: Optional[int] = None
    n_queries: Optional[int] = None
    fired: bool = False

    @property
    def delta(self) -> Optional[float]:
        """best_so_far / min_prediction (> 1 means the model promises an improvement)."""
        if self.min_prediction is None or self.min_prediction <= 0:
            return None
        return self.best_so_far / self.min_prediction

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "measured", "phase", "best_so_far", "n_unmeasured", "chosen", "max_ei",
            "min_prediction", "training_rows", "n_queries", "fired")}
        out["delta"] = self.delta
        return out


@dataclass(frozen=True)
class SearchTrace:
    steps: tuple
    config_digest: str
    diagnostics: tuple = ()
    stop_reason: str = "exhausted"

    @property
    def measurements_used(self) -> int:
        return len(self.steps)

    @property
    def vm_sequence(self) -> list:
        return [s.vm_name for s in self.steps]

    @property
    def recommendation(self) -> str:
        best = min(s.objective_value for s in self.steps)
        return next(s.vm_name for s in self.steps if s.objective_value == best)

    @property
    def best_value(self) -> float:
        return min(s.objective_value for s in self.steps)

    def to_dict(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "measurements_used": self.measurements_used,
            "recommendation": self.recommendation if self.steps else None,
            "stop_reason": self.stop_reason,
            "steps": [s.to_dict() for s in self.steps],
            "diagnostics": [d.to_dict() for d in self.diagnostics],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, data: dict) -> "SearchTrace":
        steps = tuple(StepRecord(**s) for s in data["steps"])
        diags = []
        for d in data.get("diagnostics", []):
            d = dict(d)
            d.pop("delta", None)
            diags.append(StepDiagnostics(**d))
        return cls(steps, data["config_digest"], tuple(diags), data.get("stop_reason", "exhausted"))

    @classmethod
    def from_json(cls, text: str) -> "SearchTrace":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# evaluators

Evaluator = Callable[[str], tuple]


class TableEvaluator:
    """Replay black box: objective and low-level profile looked up from a table."""

    def __init__(self, table: MeasurementTable, workload_id: str, objective: ObjectiveKind):
        self.table = table
        self.workload_id = workload_id
        self.objective = ObjectiveKind.parse(objective)
        self.calls = 0

    def __call__(self, vm_name: str) -> tuple:
        self.calls += 1
        rec = self.table.lookup(self.workload_id, vm_name)
        return objective_value(rec, self.table.vm(vm_name), self.objective), rec.low_level


# ---------------------------------------------------------------------------
# catalog helpers

@functools.lru_cache(maxsize=64)
def _catalog_features(catalog: tuple) -> tuple:
    raw = np.array([vm.feature_vector() for vm in catalog])
    mu = raw.mean(axis=0)
    sd = raw.std(axis=0)
    sd[sd == 0] = 1.0
    std = (raw - mu) / sd
    raw.setflags(write=False)
    std.setflags(write=False)
    return raw, std


def _seed_stream(*parts: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(p) for p in parts]))


@functools.lru_cache(maxsize=8192)
def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0])


def _argbest(scores: np.ndarray, maximize: bool) -> int:
    """Index of the best score; anything within TIE_RTOL of it counts as tied."""
    best = scores.max() if maximize else scores.min()
    tol = TIE_RTOL * abs(best)
    if maximize:
        return int(np.flatnonzero(scores >= best - tol)[0])
    return int(np.flatnonzero(scores <= best + tol)[0])


def select_initial(catalog: Sequence[VmSpec], strategy: str, n: int, seed: int,
                   explicit: Sequence[str] = ()) -> list:
    """Pick ``n`` distinct VMs to seed the search."""
    catalog = tuple(catalog)
    names = [vm.name for vm in catalog]
    if not 2 <= n <= len(catalog):
        raise ConfigError(f"n_initial={n} must be between 2 and the catalog size {len(catalog)}")
    if strategy == "explicit":
        explicit = list(explicit)
        unknown = [v for v in explicit if v not in names]
        if unknown:
            raise ConfigError(f"initial VM(s) not in catalog: {', '.join(unknown)}")
        if len(set(explicit)) != len(explicit):
            raise ConfigError("initial_vms contains duplicates")
        if len(explicit) != n:
            raise ConfigError(f"initial_vms lists {len(explicit)} VMs but n_initial={n}")
        return explicit
    if n == len(catalog):
        return names
    rng = _seed_stream(seed, 0)
    if strategy == "random":
        return [names[i] for i in rng.choice(len(names), size=n, replace=False)]
    if strategy == "maxmin":
        _, X = _catalog_features(catalog)
        chosen = [int(rng.integers(len(names)))]
        mind = np.linalg.norm(X - X[chosen[0]], axis=1)
        mind[chosen[0]] = -np.inf
        while len(chosen) < n:
            nxt = int(np.argmax(mind))  # first maximum = lowest index
            chosen.append(nxt)
            mind = np.minimum(mind, np.linalg.norm(X - X[nxt], axis=1))
            mind[chosen] = -np.inf
        return [names[i] for i in chosen]
    raise ConfigError(f"unknown init strategy {strategy!r}")


# ---------------------------------------------------------------------------
# augmented surrogate

def _pair_matrix(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Row ``t * k + j`` is source row ``j`` followed by destination row ``t``."""
    k, q = len(src), len(dst)
    out = np.empty((q * k, src.shape[1] + dst.shape[1]))
    out[:, :src.shape[1]] = np.tile(src, (q, 1))
    out[:, src.shape[1]:] = np.repeat(dst, k, axis=0)
    return out


def _pairwise_rows(src: np.ndarray, feats: np.ndarray, values: np.ndarray, self_pairs: bool) -> tuple:
    k = len(src)
    X = _pair_matrix(src, feats)
    y = np.repeat(values, k)
    if not self_pairs:
        keep = np.arange(k * k) % (k + 1) != 0  # drop the diagonal t == j
        X, y = X[keep], y[keep]
    return X, y


def _source_rows(history: TrialHistory, catalog: Sequence[VmSpec]) -> tuple:
    index = {vm.name: i for i, vm in enumerate(catalog)}
    raw, _ = _catalog_features(tuple(catalog))
    feats = raw[[index[n] for n in history.names]]
    lows = np.array([p.as_array() for p in history.profiles]).reshape(len(history), -1)
    return np.hstack([feats, lows]), feats


def build_pairwise_training(history: TrialHistory, catalog: Sequence[VmSpec],
                            self_pairs: bool = True) -> tuple:
    """Rows ``[features(src) ++ low_level(src) ++ features(dst)] -> value(dst)``
    for every ordered pair of measured VMs (k*k rows with self pairs)."""
    if len(history) < 2:
        raise ModelStateError("pairwise training needs at least 2 measured VMs")
    src, feats = _source_rows(history, catalog)
    return _pairwise_rows(src, feats, np.asarray(history.values, dtype=float), self_pairs)


def _query_matrix(history: TrialHistory, catalog: Sequence[VmSpec], targets: Sequence[str]) -> np.ndarray:
    index = {vm.name: i for i, vm in enumerate(catalog)}
    raw, _ = _catalog_features(tuple(catalog))
    src, _ = _source_rows(history, catalog)
    return _pair_matrix(src, raw[[index[n] for n in targets]])


def predict_unmeasured(model: ForestModel, history: TrialHistory, catalog: Sequence[VmSpec]) -> dict:
    """Mean over measured sources of the forest's estimate for each unmeasured VM."""
    measured = set(history.names)
    targets = [vm.name for vm in catalog if vm.name not in measured]
    if not targets:
        return {}
    Q = _query_matrix(history, catalog, targets)
    mean, _ = model.predict(Q)
    per_target = mean.reshape(len(targets), len(history)).mean(axis=1)
    return dict(zip(targets, per_target.tolist()))


# ---------------------------------------------------------------------------
# stopping

def stopping_check(rule: StoppingRule, diagnostics: StepDiagnostics) -> bool:
    """True when the search should stop instead of making the pick in ``diagnostics``.

    PredictionDelta(theta) stops once every unmeasured VM is predicted worse
    than ``theta * best_so_far``; larger theta keeps searching longer.
    """
    if diagnostics.n_unmeasured == 0:
        return True
    if isinstance(rule, FixedBudget):
        return rule.n is not None and diagnostics.measured >= rule.n
    if isinstance(rule, EiFraction):
        if diagnostics.max_ei is None:
            raise ConfigError("EiFraction stopping needs an Expected Improvement diagnostic")
        return diagnostics.max_ei < rule.fraction * abs(diagnostics.best_so_far)
    if isinstance(rule, PredictionDelta):
        if diagnostics.min_prediction is None:
            raise ConfigError("PredictionDelta stopping needs a forest prediction diagnostic")
        return diagnostics.min_prediction > rule.theta * diagnostics.best_so_far
    raise ConfigError(f"unknown stopping rule {rule!r}")


# ---------------------------------------------------------------------------
# the loop

class _Search:
    def __init__(self, evaluator: Evaluator, catalog: Sequence[VmSpec], config: SearchConfig):
        self.f = evaluator
        self.catalog = tuple(catalog)
        self.names = [vm.name for vm in self.catalog]
        config.validate_for(len(self.catalog))
        self.config = config
        self.digest = config.digest()
        self.history = TrialHistory()
        self.steps: list = []
        self.diagnostics: list = []
        self.raw, self.std = _catalog_features(self.catalog)
        self.index = {n: i for i, n in enumerate(self.names)}
        self.rng = _seed_stream(config.seed, 1)
        # forest inputs of the measured VMs, grown as measurements arrive
        self.src_rows: list = []

    def trace(self, stop_reason: str = "exhausted") -> SearchTrace:
        steps = list(self.steps)
        if steps:
            steps[-1] = replace(steps[-1], stopped=True)
        return SearchTrace(tuple(steps), self.digest, tuple(self.diagnostics), stop_reason)

    def measure(self, name: str, score: Optional[float]) -> None:
        try:
            value, low = self.f(name)
        except FailedMeasurementError as exc:
            if self.config.fail_policy == "worst_case" and self.history.values:
                value, low = 10.0 * max(self.history.values), LowLevelProfile.zeros()
            else:
                raise SearchError(f"measurement of {name} failed: {exc}", trace=self.trace("error")) from exc
        self.history.add(name, value, low)
        self.src_rows.append(np.concatenate([self.raw[self.index[name]], low.as_array()]))
        self.steps.append(StepRecord(len(self.steps) + 1, name, float(value),
                                     self.history.best_so_far(), score))

    def unmeasured(self) -> list:
        done = set(self.history.names)
        return [n for n in self.names if n not in done]

    def gp_step(self, remaining: list) -> tuple:
        cfg = self.config
        X = self.std[[self.index[n] for n in self.history.names]]
        y = np.asarray(self.history.values)
        fit = gp_fit_grid if cfg.hyper_grid else gp_fit
        try:
            model = fit(X, y, cfg.kernel, cfg.noise_variance)
        except FitError as exc:
            raise SearchError(str(exc), trace=self.trace("error")) from exc
        Xq = self.std[[self.index[n] for n in remaining]]
        mu, var = model.predict(Xq)
        # EI on the standardized scale so the choice is invariant to affine target maps
        mu_s = (mu - model.target_mean) / model.target_std
        var_s = var / model.target_std ** 2
        ei = expected_improvement(mu_s, var_s, float(np.min(model.train_targets)), cfg.xi)
        pick = _argbest(ei, maximize=True)
        diag = StepDiagnostics(
            measured=len(self.history), phase="gp", best_so_far=self.history.best_so_far(),
            n_unmeasured=len(remaining), chosen=remaining[pick],
            max_ei=float(ei[pick]) * model.target_std,
        )
        return remaining[pick], float(ei[pick]) * model.target_std, diag

    def forest_step(self, remaining: list) -> tuple:
        cfg = self.config
        k = len(self.history)
        src = np.array(self.src_rows)
        X, y = _pairwise_rows(src, src[:, :self.raw.shape[1]], np.asarray(self.history.values), cfg.self_pairs)
        params = replace(cfg.forest, seed=_derived_seed(cfg.seed, cfg.forest.seed, k))
        model = forest_fit(X, y, params)
        Q = _pair_matrix(src, self.raw[[self.index[n] for n in remaining]])
        pred = model.tree_predictions(Q).mean(axis=1).reshape(len(remaining), k).mean(axis=1)
        pick = _argbest(pred, maximize=False)
        diag = StepDiagnostics(
            measured=k, phase="forest", best_so_far=self.history.best_so_far(),
            n_unmeasured=len(remaining), chosen=remaining[pick],
            min_prediction=float(pred[pick]), training_rows=len(y), n_queries=len(Q),
        )
        return remaining[pick], float(pred[pick]), diag

    def random_step(self, remaining: list) -> tuple:
        pick = int(self.rng.integers(len(remaining)))
        diag = StepDiagnostics(measured=len(self.history), phase="random",
                               best_so_far=self.history.best_so_far(),
                               n_unmeasured=len(remaining), chosen=remaining[pick])
        return remaining[pick], None, diag

    def phase(self) -> str:
        m = self.config.method
        if m is Method.NAIVE:
            return "gp"
        if m is Method.AUGMENTED:
            return "forest"
        if m is Method.RANDOM:
            return "random"
        return "gp" if len(self.history) < self.config.effective_switch_step else "forest"

    def rule_applies(self, phase: str) -> bool:
        rule = self.config.stopping
        if isinstance(rule, EiFraction):
            return phase == "gp"
        if isinstance(rule, PredictionDelta):
            return phase == "forest"
        return True

    def run(self) -> SearchTrace:
        cfg = self.config
        for name in select_initial(self.catalog, cfg.init_strategy, cfg.n_initial, cfg.seed, cfg.initial_vms):
            self.measure(name, None)
        rule = cfg.stopping
        while True:
            remaining = self.unmeasured()
            if not remaining:
                return self.trace("exhausted")
            if isinstance(rule, FixedBudget) and rule.n is not None and len(self.history) >= rule.n:
                return self.trace("budget")
            phase = self.phase()
            step = {"gp": self.gp_step, "forest": self.forest_step, "random": self.random_step}[phase]
            name, score, diag = step(remaining)
            fired = self.rule_applies(phase) and stopping_check(rule, diag)
            self.diagnostics.append(replace(diag, fired=fired))
            if fired:
                return self.trace(rule.kind)
            self.measure(name, score)


def run_search(f: Evaluator, catalog: Sequence[VmSpec], config: SearchConfig) -> SearchTrace:
    return _Search(f, catalog, config).run()


def _run_checked(method: Method, f, catalog, config) -> SearchTrace:
    if config.method is not method:
        raise ConfigError(f"config.method is {config.method.value}, expected {method.value}")
    return run_search(f, catalog, config)


def run_naive_bo(f: Evaluator, catalog, config: SearchConfig) -> SearchTrace:
    return _run_checked(Method.NAIVE, f, catalog, config)


def run_augmented_bo(f: Evaluator, catalog, config: SearchConfig) -> SearchTrace:
    return _run_checked(Method.AUGMENTED, f, catalog, config)


def run_hybrid_bo(f: Evaluator, catalog, config: SearchConfig) -> SearchTrace:
    return _run_checked(Method.HYBRID, f, catalog, config)


def run_random_search(f: Evaluator, catalog, config: SearchConfig) -> SearchTrace:
    return _run_checked(Method.RANDOM, f, catalog, config)
