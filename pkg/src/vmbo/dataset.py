"""Measurement tables: VM catalog, per-run records, CSV ingestion and synthesis.

A :class:`MeasurementTable` is the black box during replay: looking up
``(workload, vm)`` stands in for actually running the workload on that VM.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    DataError,
    DuplicateKeyError,
    EmptyInputError,
    FailedMeasurementError,
    ParseError,
    SchemaError,
    SyntheticSpecError,
)

VM_FEATURES = ("cpu_family_code", "cores", "ram_per_core_gb", "ebs_class")
LOW_LEVEL_METRICS = (
    "cpu_user_pct",
    "cpu_iowait_pct",
    "task_count",
    "mem_commit_pct",
    "disk_util_pct",
    "disk_await_ms",
)
CSV_COLUMNS = (
    ("workload_id", "vm_name")
    + VM_FEATURES
    + ("unit_price_per_hour", "exec_time_s")
    + LOW_LEVEL_METRICS
    + ("failed",)
)

CORE_COUNTS = (2, 4, 8)
RAM_PER_CORE = (2.0, 4.0, 8.0)
EBS_CLASSES = (1, 2, 3)


class ObjectiveKind(enum.Enum):
    TIME = "time"
    COST = "cost"
    TIME_COST_PRODUCT = "time_cost_product"

    @classmethod
    def parse(cls, value: "str | ObjectiveKind") -> "ObjectiveKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"product": "time_cost_product", "timecostproduct": "time_cost_product"}
        key = aliases.get(key, key)
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown objective {value!r}")


@dataclass(frozen=True)
class VmSpec:
    """One VM type, described by its four encoded published characteristics."""

    name: str
    cpu_family_code: int
    cores: int
    ram_per_core_gb: float
    ebs_class: int
    unit_price: float

    def __post_init__(self):
        if not self.name:
            raise DataError("VM name must be non-empty")
        if not 1 <= self.cpu_family_code <= 6:
            raise DataError(f"{self.name}: cpu_family_code {self.cpu_family_code} not in 1..6")
        if self.cores not in CORE_COUNTS:
            raise DataError(f"{self.name}: cores {self.cores} not in {CORE_COUNTS}")
        if self.ram_per_core_gb not in RAM_PER_CORE:
            raise DataError(f"{self.name}: ram_per_core_gb {self.ram_per_core_gb} not in {RAM_PER_CORE}")
        if self.ebs_class not in EBS_CLASSES:
            raise DataError(f"{self.name}: ebs_class {self.ebs_class} not in {EBS_CLASSES}")
        if not (math.isfinite(self.unit_price) and self.unit_price > 0):
            raise DataError(f"{self.name}: unit price must be positive, got {self.unit_price}")

    @property
    def memory_gb(self) -> float:
        return self.cores * self.ram_per_core_gb

    def feature_vector(self) -> np.ndarray:
        return np.array(
            [self.cpu_family_code, self.cores, self.ram_per_core_gb, self.ebs_class],
            dtype=float,
        )


@dataclass(frozen=True)
class LowLevelProfile:
    cpu_user_pct: float
    cpu_iowait_pct: float
    task_count: float
    mem_commit_pct: float
    disk_util_pct: float
    disk_await_ms: float

    def __post_init__(self):
        values = self.as_tuple()
        if not all(math.isfinite(v) for v in values):
            raise DataError(f"low-level metrics must be finite: {values}")
        for name in ("cpu_user_pct", "cpu_iowait_pct", "disk_util_pct"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise DataError(f"{name}={v} outside 0..100")
        for name in ("task_count", "mem_commit_pct", "disk_await_ms"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be nonnegative")
        if self.cpu_user_pct + self.cpu_iowait_pct > 100.0 + 1e-9:
            raise DataError("cpu_user_pct + cpu_iowait_pct exceeds 100")

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, m) for m in LOW_LEVEL_METRICS)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=float)

    @classmethod
    def zeros(cls) -> "LowLevelProfile":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class MeasurementRecord:
    workload_id: str
    vm_name: str
    exec_time_s: Optional[float]
    low_level: Optional[LowLevelProfile]
    failed: bool = False
    # Extra CSV columns, kept for round-tripping; never used by models.
    extras: tuple = ()

    def __post_init__(self):
        if not self.failed:
            if self.exec_time_s is None or self.low_level is None:
                raise DataError(f"({self.workload_id}, {self.vm_name}): missing measurement")
            if not (math.isfinite(self.exec_time_s) and self.exec_time_s > 0):
                raise DataError(f"({self.workload_id}, {self.vm_name}): exec_time_s must be > 0")


def objective_value(rec: MeasurementRecord, vm: VmSpec, obj: ObjectiveKind) -> float:
    """Objective of one measured run: time (s), prorated cost, or their product."""
    if rec.failed or rec.exec_time_s is None:
        raise FailedMeasurementError(f"({rec.workload_id}, {rec.vm_name}) is a failed run")
    obj = ObjectiveKind.parse(obj)
    t = rec.exec_time_s
    if obj is ObjectiveKind.TIME:
        return t
    cost = t * vm.unit_price / 3600.0
    if obj is ObjectiveKind.COST:
        return cost
    return t * cost


def normalize_to_optimal(values: Mapping[str, float]) -> dict:
    """Divide every value by the minimum so the optimum maps to 1.0."""
    if not values:
        raise EmptyInputError("cannot normalize an empty mapping")
    if any(not (v > 0) for v in values.values()):
        raise ValueError("normalize_to_optimal requires strictly positive values")
    best = min(values.values())
    return {k: (1.0 if v == best else v / best) for k, v in values.items()}


@dataclass(frozen=True, eq=True)
class MeasurementTable:
    catalog: tuple
    workloads: tuple
    records: Mapping = field(compare=True)
    extra_columns: tuple = ()

    def __post_init__(self):
        if len(self.catalog) < 2:
            raise DataError("a table needs at least 2 VMs")
        if len(self.workloads) < 1:
            raise DataError("a table needs at least 1 workload")
        names = [vm.name for vm in self.catalog]
        if len(set(names)) != len(names):
            raise DuplicateKeyError("VM names must be unique within a catalog")
        for w in self.workloads:
            for n in names:
                if (w, n) not in self.records:
                    raise DataError(f"missing measurement for pair ({w}, {n})")
        if len(self.records) != len(names) * len(self.workloads):
            raise DataError("records reference unknown workloads or VMs")
        object.__setattr__(self, "_vm_index", {n: i for i, n in enumerate(names)})

    @property
    def vm_names(self) -> list:
        return [vm.name for vm in self.catalog]

    def vm(self, name: str) -> VmSpec:
        try:
            return self.catalog[self._vm_index[name]]
        except KeyError:
            raise KeyError(f"unknown VM {name!r}") from None

    def vm_index(self, name: str) -> int:
        return self._vm_index[name]

    def record(self, workload_id: str, vm_name: str) -> MeasurementRecord:
        """Raw record, failed or not."""
        try:
            return self.records[(workload_id, vm_name)]
        except KeyError:
            raise KeyError(f"no record for ({workload_id}, {vm_name})") from None

    def lookup(self, workload_id: str, vm_name: str) -> MeasurementRecord:
        rec = self.record(workload_id, vm_name)
        if rec.failed:
            raise FailedMeasurementError(f"({workload_id}, {vm_name}) is declared failed")
        return rec

    def is_failed(self, workload_id: str, vm_name: str) -> bool:
        return self.record(workload_id, vm_name).failed

    def failed_pairs(self, workloads: Optional[Iterable[str]] = None) -> list:
        ws = self.workloads if workloads is None else tuple(workloads)
        return [(w, n) for w in ws for n in self.vm_names if self.records[(w, n)].failed]

    def objective_values(self, workload_id: str, obj: ObjectiveKind) -> dict:
        """Objective per VM for one workload, failed pairs omitted."""
        out = {}
        for vm in self.catalog:
            rec = self.records[(workload_id, vm.name)]
            if not rec.failed:
                out[vm.name] = objective_value(rec, vm, obj)
        return out

    def optimum(self, workload_id: str, obj: ObjectiveKind) -> tuple:
        """(vm_name, value) of the exhaustive minimum; ties go to catalog order."""
        values = self.objective_values(workload_id, obj)
        if not values:
            raise DataError(f"workload {workload_id} has no successful measurements")
        best = min(values.values())
        name = next(n for n in self.vm_names if values.get(n) == best)
        return name, best

    def map_objective(self, scale: float) -> "MeasurementTable":
        """Copy with every execution time multiplied by ``scale``."""
        records = {}
        for key, rec in self.records.items():
            t = None if rec.exec_time_s is None else rec.exec_time_s * scale
            records[key] = MeasurementRecord(rec.workload_id, rec.vm_name, t, rec.low_level, rec.failed, rec.extras)
        return MeasurementTable(self.catalog, self.workloads, records, self.extra_columns)

    def subset(self, workloads: Sequence[str]) -> "MeasurementTable":
        for w in workloads:
            if w not in self.workloads:
                raise DataError(f"unknown workload {w!r}")
        records = {k: v for k, v in self.records.items() if k[0] in workloads}
        return MeasurementTable(self.catalog, tuple(workloads), records, self.extra_columns)


# ---------------------------------------------------------------------------
# CSV I/O

def _parse_float(raw: str, column: str, row: int) -> float:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise ParseError(f"column {column!r}: cannot parse {raw!r} as a number", row) from None
    if not math.isfinite(value):
        raise ParseError(f"column {column!r}: non-finite value {raw!r}", row)
    return value


def _parse_int(raw: str, column: str, row: int) -> int:
    value = _parse_float(raw, column, row)
    if value != int(value):
        raise ParseError(f"column {column!r}: expected an integer, got {raw!r}", row)
    return int(value)


def _parse_bool(raw: str, row: int) -> bool:
    key = (raw or "").strip().lower()
    if key in ("true", "1", "yes"):
        return True
    if key in ("false", "0", "no", ""):
        return False
    raise ParseError(f"column 'failed': expected true/false, got {raw!r}", row)


def _read_rows(text: str):
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    for col in CSV_COLUMNS:
        if col not in header:
            raise SchemaError(f"missing column {col!r}")
    extras = tuple(c for c in header if c not in CSV_COLUMNS)
    for row in reader:
        yield reader.line_num, row, extras


def parse_table(text: str) -> MeasurementTable:
    catalog: dict = {}
    workloads: list = []
    records: dict = {}
    extra_columns: tuple = ()
    for line, row, extras in _read_rows(text):
        extra_columns = extras
        w = (row["workload_id"] or "").strip()
        name = (row["vm_name"] or "").strip()
        if not w or not name:
            raise ParseError("empty workload_id or vm_name", line)
        try:
            vm = VmSpec(
                name=name,
                cpu_family_code=_parse_int(row["cpu_family_code"], "cpu_family_code", line),
                cores=_parse_int(row["cores"], "cores", line),
                ram_per_core_gb=_parse_float(row["ram_per_core_gb"], "ram_per_core_gb", line),
                ebs_class=_parse_int(row["ebs_class"], "ebs_class", line),
                unit_price=_parse_float(row["unit_price_per_hour"], "unit_price_per_hour", line),
            )
        except ParseError:
            raise
        except DataError as exc:
            raise ParseError(str(exc), line) from None
        if name in catalog and catalog[name] != vm:
            raise DataError(f"row {line}: VM {name!r} encoded inconsistently across rows")
        catalog.setdefault(name, vm)
        if w not in workloads:
            workloads.append(w)
        if (w, name) in records:
            raise DuplicateKeyError(f"row {line}: duplicate key ({w}, {name})")

        failed = _parse_bool(row["failed"], line)
        perf_cols = ("exec_time_s",) + LOW_LEVEL_METRICS
        empty = [c for c in perf_cols if (row[c] or "").strip() == ""]
        if failed and empty:
            exec_time, low = None, None
            if "exec_time_s" not in empty:
                exec_time = _parse_float(row["exec_time_s"], "exec_time_s", line)
        else:
            if empty:
                raise ParseError(f"column {empty[0]!r} is empty", line)
            exec_time = _parse_float(row["exec_time_s"], "exec_time_s", line)
            metrics = [_parse_float(row[c], c, line) for c in LOW_LEVEL_METRICS]
            try:
                low = LowLevelProfile(*metrics)
            except DataError as exc:
                raise ParseError(str(exc), line) from None
        try:
            rec = MeasurementRecord(
                w, name, exec_time, low, failed, tuple((c, row[c]) for c in extra_columns)
            )
        except DataError as exc:
            raise ParseError(str(exc), line) from None
        records[(w, name)] = rec
    return MeasurementTable(tuple(catalog.values()), tuple(workloads), records, extra_columns)


def load_table(path: "str | Path") -> MeasurementTable:
    """Load and validate a measurement CSV."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"table file not found: {path}")
    return parse_table(path.read_text(encoding="utf-8"))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def format_table(table: MeasurementTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS + table.extra_columns)
    for w in table.workloads:
        for vm in table.catalog:
            rec = table.records[(w, vm.name)]
            low = rec.low_level.as_tuple() if rec.low_level is not None else (None,) * 6
            extras = dict(rec.extras)
            writer.writerow(
                [w, vm.name, _fmt(vm.cpu_family_code), _fmt(vm.cores), _fmt(vm.ram_per_core_gb),
                 _fmt(vm.ebs_class), _fmt(vm.unit_price), _fmt(rec.exec_time_s)]
                + [_fmt(v) for v in low]
                + [_fmt(rec.failed)]
                + [extras.get(c, "") for c in table.extra_columns]
            )
    return buf.getvalue()


def save_table(table: MeasurementTable, path: "str | Path") -> None:
    Path(path).write_text(format_table(table), encoding="utf-8")


# ---------------------------------------------------------------------------
# Synthetic tables

@dataclass(frozen=True)
class MemoryBottleneck:
    """Workloads whose footprint exceeds ``cores * ram_per_core * headroom``
    run ``slowdown`` times slower and show memory-pressure metrics."""

    slowdown: float
    headroom: float = 1.0

    def __post_init__(self):
        if not self.slowdown > 1.0:
            raise SyntheticSpecError(f"bottleneck slowdown must exceed 1, got {self.slowdown}")
        if not self.headroom > 0:
            raise SyntheticSpecError("bottleneck headroom must be positive")

    def violated(self, footprint_gb: Optional[float], vm: VmSpec) -> bool:
        return footprint_gb is not None and footprint_gb > vm.memory_gb * self.headroom


@dataclass(frozen=True)
class SyntheticWorkload:
    workload_id: str
    base_time_s: float
    # exponent applied to the VM speed factor: 0 = indifferent to VM, 1 = proportional
    sensitivity: float = 1.0
    footprint_gb: Optional[float] = None
    io_intensity: float = 0.2

    def __post_init__(self):
        if not self.base_time_s > 0:
            raise SyntheticSpecError(f"{self.workload_id}: base time must be positive")
        if self.sensitivity < 0:
            raise SyntheticSpecError(f"{self.workload_id}: sensitivity must be nonnegative")
        if not 0.0 <= self.io_intensity <= 1.0:
            raise SyntheticSpecError(f"{self.workload_id}: io_intensity must be in [0, 1]")


@dataclass(frozen=True)
class SyntheticSpec:
    catalog: tuple
    workloads: tuple
    vm_speed: Mapping  # vm name -> speed factor (> 0, higher is faster)
    bottleneck: Optional[MemoryBottleneck] = None
    noise_sigma: float = 0.0  # lognormal multiplicative noise on exec time

    def __post_init__(self):
        names = {vm.name for vm in self.catalog}
        missing = names - set(self.vm_speed)
        if missing:
            raise SyntheticSpecError(f"no speed factor for VMs {sorted(missing)}")
        if any(not (self.vm_speed[n] > 0) for n in names):
            raise SyntheticSpecError("speed factors must be positive")
        if self.noise_sigma < 0:
            raise SyntheticSpecError("noise_sigma must be nonnegative")


def _profile(rng: np.random.Generator, w: SyntheticWorkload, vm: VmSpec, bottlenecked: bool) -> LowLevelProfile:
    j = rng.uniform(-1.0, 1.0, size=6)
    io = w.io_intensity / vm.ebs_class
    if w.footprint_gb is None:
        commit = 30.0 + 5.0 * j[3]
    else:
        commit = 100.0 * w.footprint_gb / vm.memory_gb
    if bottlenecked:
        user = 15.0 + 5.0 * j[0]
        iowait = 45.0 + 10.0 * j[1]
        commit = max(commit, 95.0) + 2.0 * abs(j[3])
        util = min(100.0, 85.0 + 10.0 * abs(j[4]))
        await_ms = 80.0 + 20.0 * j[5]
    else:
        iowait = 2.0 + 30.0 * io + 1.0 * abs(j[1])
        user = min(96.0 - iowait, 55.0 + 35.0 * (1.0 - w.io_intensity) + 3.0 * j[0])
        util = min(100.0, 10.0 + 60.0 * io + 3.0 * abs(j[4]))
        await_ms = 2.0 + 25.0 * io + 0.5 * abs(j[5])
    tasks = 90.0 + 12.0 * vm.cores + 4.0 * j[2]
    return LowLevelProfile(
        round(user, 4), round(iowait, 4), round(tasks, 1),
        round(commit, 4), round(util, 4), round(await_ms, 4),
    )


def generate_synthetic(spec: SyntheticSpec, seed: int) -> MeasurementTable:
    """Build a complete table from ``spec``; a pure function of (spec, seed)."""
    rng = np.random.default_rng(seed)
    records = {}
    for w in spec.workloads:
        for vm in spec.catalog:
            noise = rng.normal(0.0, 1.0)
            hit = spec.bottleneck is not None and spec.bottleneck.violated(w.footprint_gb, vm)
            t = w.base_time_s / spec.vm_speed[vm.name] ** w.sensitivity
            if spec.noise_sigma > 0:
                t *= math.exp(spec.noise_sigma * noise)
            if hit:
                t *= spec.bottleneck.slowdown
            low = _profile(rng, w, vm, hit)
            records[(w.workload_id, vm.name)] = MeasurementRecord(w.workload_id, vm.name, round(t, 6), low)
    return MeasurementTable(tuple(spec.catalog), tuple(w.workload_id for w in spec.workloads), records)
