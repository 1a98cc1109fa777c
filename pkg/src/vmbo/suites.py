"""Reference synthetic suites over an 18-VM catalog.

``smooth9``: deployment cost varies smoothly with the VM features (no bottleneck).
``cliff9``: workloads with a memory footprint that overflows small VMs, which
then run much slower and report memory pressure in their low-level metrics.

Both suites are meant to be searched on deployment cost.
"""

from __future__ import annotations

from importlib import resources

from .dataset import (
    MemoryBottleneck,
    MeasurementTable,
    SyntheticSpec,
    SyntheticWorkload,
    VmSpec,
    generate_synthetic,
    parse_table,
)

FAMILIES = ("c3", "c4", "m3", "m4", "r3", "r4")  # encoded 1..6 in this order
SIZES = (("large", 2, 1), ("xlarge", 4, 2), ("2xlarge", 8, 3))  # (suffix, cores, ebs class)
RAM_PER_CORE = {"c": 2.0, "m": 4.0, "r": 8.0}
# on-demand hourly price of the "large" size; larger sizes double per step
LARGE_PRICE = {"c3": 0.105, "c4": 0.100, "m3": 0.133, "m4": 0.100, "r3": 0.166, "r4": 0.133}

SUITE_SEED = 2018


def aws_catalog() -> tuple:
    vms = []
    for code, fam in enumerate(FAMILIES, 1):
        for mult, (suffix, cores, ebs) in enumerate(SIZES):
            vms.append(VmSpec(
                name=f"{fam}.{suffix}",
                cpu_family_code=code,
                cores=cores,
                ram_per_core_gb=RAM_PER_CORE[fam[0]],
                ebs_class=ebs,
                unit_price=round(LARGE_PRICE[fam] * 2 ** mult, 4),
            ))
    return tuple(vms)


def _speed(vm: VmSpec, per_family: dict, core_exp: float) -> float:
    return per_family[vm.name.split(".")[0]] * vm.cores ** core_exp


# smooth: family speed tracks price, with newer/larger-memory families slightly
# better value, so deployment cost falls smoothly with the family code
_SMOOTH_VALUE_STEP = 0.06
_SMOOTH_FAMILY = {
    fam: LARGE_PRICE[fam] / 0.1 * (1.0 + _SMOOTH_VALUE_STEP * i) for i, fam in enumerate(FAMILIES)
}
# cliff: newer generations faster, otherwise flat across families
_CLIFF_FAMILY = {"c3": 1.00, "c4": 1.15, "m3": 0.97, "m4": 1.10, "r3": 0.98, "r4": 1.12}


def smooth9_spec() -> SyntheticSpec:
    catalog = aws_catalog()
    speed = {vm.name: _speed(vm, _SMOOTH_FAMILY, 0.9) for vm in catalog}
    workloads = tuple(
        SyntheticWorkload(f"smooth-{i + 1}", base_time_s=bt, sensitivity=s, io_intensity=io)
        for i, (bt, s, io) in enumerate([
            (3600, 1.00, 0.10), (5400, 1.02, 0.20), (1800, 0.98, 0.30),
            (7200, 1.04, 0.05), (2700, 1.01, 0.40), (4500, 0.97, 0.15),
            (6300, 1.03, 0.25), (3000, 1.00, 0.50), (8100, 0.96, 0.10),
        ])
    )
    return SyntheticSpec(catalog, workloads, speed, bottleneck=None, noise_sigma=0.02)


def cliff9_spec() -> SyntheticSpec:
    catalog = aws_catalog()
    speed = {vm.name: _speed(vm, _CLIFF_FAMILY, 0.8) for vm in catalog}
    # footprints sit between 6 and 14 GB: only the smallest VMs hit the wall,
    # and the cheapest VM that fits is right next to it
    workloads = tuple(
        SyntheticWorkload(f"cliff-{i + 1}", base_time_s=bt, sensitivity=s,
                          footprint_gb=fp, io_intensity=io)
        for i, (bt, s, fp, io) in enumerate([
            (3600, 0.9, 10.0, 0.2), (5400, 1.0, 12.0, 0.3), (1800, 0.8, 6.0, 0.1),
            (7200, 1.1, 9.0, 0.2), (2700, 0.9, 14.0, 0.4), (4500, 1.0, 11.0, 0.2),
            (6300, 0.85, 7.0, 0.3), (3000, 1.05, 13.0, 0.1), (8100, 0.95, 8.0, 0.2),
        ])
    )
    return SyntheticSpec(catalog, workloads, speed,
                         bottleneck=MemoryBottleneck(slowdown=14.8), noise_sigma=0.02)


SUITES = {"smooth9": smooth9_spec, "cliff9": cliff9_spec}


def generate_suite(name: str, seed: int = SUITE_SEED) -> MeasurementTable:
    try:
        spec = SUITES[name]()
    except KeyError:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}") from None
    return generate_synthetic(spec, seed)


def shipped_table(name: str) -> MeasurementTable:
    """The suite as shipped in the package data directory."""
    text = resources.files("vmbo").joinpath("data", f"{name}.csv").read_text(encoding="utf-8")
    return parse_table(text)
