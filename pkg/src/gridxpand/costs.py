"""Unit-cost database for upgrade assets and equivalent-annual-cost conversion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources

from .network import CandidateUpgradeKind, FeederNetwork, LineSegment, UpgradeOption

DEFAULT_DISCOUNT_RATE = 0.05  # fraction/yr; configurable, tests pin the CRF formula
DEFAULT_LINE_LIFETIME_YR = 30.0

PLACEMENTS = ("rural-OH", "urban-OH", "urban-UG")
REGIONS = ("CA", "nonCA")


class CostDataError(ValueError):
    """Malformed cost file or lookup outside the table."""


@dataclass(frozen=True)
class TransformerCost:
    label: str
    capital_kusd: float
    capacity_mva: float
    lifetime_yr: float


@dataclass(frozen=True)
class ConductorCost:
    label: str
    region: str
    placement: str
    cost_kusd_per_mile: float
    ampacity_a: float
    r_ohm_per_mile: float
    x_ohm_per_mile: float


@dataclass(frozen=True)
class BessCost:
    cost_usd_per_kw: float
    duration_h: float
    lifetime_yr: float


@dataclass(frozen=True)
class CostDatabase:
    transformers: tuple[TransformerCost, ...]
    conductors: tuple[ConductorCost, ...]
    vr_cost_kusd: dict[str, float]  # region -> installed cost, k$
    bess: BessCost
    discount_rate: float = DEFAULT_DISCOUNT_RATE
    line_lifetime_yr: float = DEFAULT_LINE_LIFETIME_YR
    vr_lifetime_yr: float = DEFAULT_LINE_LIFETIME_YR

    def conductors_for(self, region: str, placement: str) -> list[ConductorCost]:
        if region not in REGIONS:
            raise CostDataError(f"unknown region {region!r} (expected one of {REGIONS})")
        if placement not in PLACEMENTS:
            raise CostDataError(f"unknown placement {placement!r} (expected one of {PLACEMENTS})")
        return [c for c in self.conductors if c.region == region and c.placement == placement]

    def bess_annual_cost_per_mw(self) -> float:
        """Equivalent annual battery cost in $/MW/yr."""
        return annualize(self.bess.cost_usd_per_kw * 1000.0, self.bess.lifetime_yr,
                         self.discount_rate)

    def vr_annual_cost(self, region: str) -> float:
        """Equivalent annual voltage-regulator cost in $/yr."""
        if region not in self.vr_cost_kusd:
            raise CostDataError(f"no voltage-regulator cost for region {region!r}")
        return annualize(self.vr_cost_kusd[region] * 1000.0, self.vr_lifetime_yr,
                         self.discount_rate)


def annualize(capital: float, lifetime: float, rate: float) -> float:
    """Equivalent annual cost of a capital outlay over its lifetime.

    Uses the capital recovery factor rate/(1 - (1+rate)^-lifetime); a zero
    rate degenerates to straight-line capital/lifetime.
    """
    if lifetime <= 0:
        raise ValueError(f"lifetime must be positive, got {lifetime}")
    if rate < 0:
        raise ValueError(f"rate must be >= 0, got {rate}")
    if rate == 0.0:
        return capital / lifetime
    return capital * rate / (1.0 - (1.0 + rate) ** (-lifetime))


def _ampacity_to_mva(ampacity_a: float, kv_base: float) -> float:
    """Three-phase thermal rating of a conductor at the given line-to-line kV."""
    return math.sqrt(3.0) * kv_base * ampacity_a / 1000.0


def _ohm_per_mile_to_pu(ohm_per_mile: float, miles: float, kv_base: float,
                        base_mva: float) -> float:
    z_base = kv_base ** 2 / base_mva
    return ohm_per_mile * miles / z_base


def upgrade_options_for(segment: LineSegment, db: CostDatabase, *, region: str,
                        kv_base: float, base_mva: float) -> list[UpgradeOption]:
    """Reconductoring options for a segment: keep-as-is plus every conductor
    whose thermal rating strictly exceeds the present capacity.

    Costs are equivalent-annual $ per real MVA of the chosen option, so the
    per-capacity objective term reproduces the table's lump sum per mile.
    """
    if not segment.placement:
        raise CostDataError(f"segment {segment.id!r}: placement required for cost lookup")
    if segment.length_miles <= 0:
        raise CostDataError(f"segment {segment.id!r}: positive length_miles required")
    keep = UpgradeOption(
        capacity=segment.capacity,
        resistance=segment.resistance,
        reactance=segment.reactance,
        annual_cost_per_mva=0.0,
        conductor="keep-as-is",
    )
    options = [keep]
    current_mva = segment.capacity * base_mva
    for cond in db.conductors_for(region, segment.placement):
        option_mva = _ampacity_to_mva(cond.ampacity_a, kv_base)
        if option_mva <= current_mva:
            continue
        capital = cond.cost_kusd_per_mile * 1000.0 * segment.length_miles
        annual = annualize(capital, db.line_lifetime_yr, db.discount_rate)
        options.append(UpgradeOption(
            capacity=option_mva / base_mva,
            resistance=_ohm_per_mile_to_pu(cond.r_ohm_per_mile, segment.length_miles,
                                           kv_base, base_mva),
            reactance=_ohm_per_mile_to_pu(cond.x_ohm_per_mile, segment.length_miles,
                                          kv_base, base_mva),
            annual_cost_per_mva=annual / option_mva,
            conductor=cond.label,
        ))
    return options


def attach_upgrade_options(segment: LineSegment, db: CostDatabase, net: FeederNetwork,
                           ) -> LineSegment:
    """Promote a fixed segment to a reconductoring candidate using the tables."""
    if net.kv_base is None:
        raise CostDataError("feeder has no kv_base; cannot derive conductor options")
    opts = upgrade_options_for(segment, db, region=net.region, kv_base=net.kv_base,
                               base_mva=net.base_mva)
    from dataclasses import replace
    return replace(segment, kind=CandidateUpgradeKind(options=tuple(opts)))


def transformer_upgrade(db: CostDatabase, base_capacity_mva: float,
                        ) -> tuple[TransformerCost, float, float] | None:
    """Next-larger transformer for a feeder head of the given capacity.

    Returns (transformer, added capacity in MVA, equivalent annual cost in
    $/yr), or None when the table has nothing larger.
    """
    for t in db.transformers:
        if t.capacity_mva > base_capacity_mva:
            added = t.capacity_mva - base_capacity_mva
            annual = annualize(t.capital_kusd * 1000.0, t.lifetime_yr, db.discount_rate)
            return t, added, annual
    return None


def _read_sections(path) -> dict[str, list[dict[str, str]]]:
    sections: dict[str, list[dict[str, str]]] = {}
    current: str | None = None
    header: list[str] | None = None
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or all(not cell.strip() for cell in row):
                continue
            first = row[0].strip()
            if first.startswith("[") and first.endswith("]"):
                current = first[1:-1]
                sections[current] = []
                header = None
                continue
            if current is None:
                raise CostDataError(f"{path}: data before any [section] header")
            if header is None:
                header = [c.strip() for c in row]
                continue
            if len(row) != len(header):
                raise CostDataError(f"{path}: row {row} does not match header {header}")
            sections[current].append({h: c.strip() for h, c in zip(header, row)})
    return sections


def load_cost_database(costs_path, conductors_path) -> CostDatabase:
    """Load the sectioned costs CSV and conductor table, with sanity checks."""
    sections = _read_sections(costs_path)
    for required in ("transformers", "vr", "bess"):
        if required not in sections:
            raise CostDataError(f"{costs_path}: missing [{required}] section")

    transformers = tuple(
        TransformerCost(
            label=r["label"],
            capital_kusd=float(r["capital_kusd"]),
            capacity_mva=float(r["capacity_mva"]),
            lifetime_yr=float(r["lifetime_yr"]),
        )
        for r in sections["transformers"]
    )
    caps = [t.capacity_mva for t in transformers]
    if caps != sorted(caps) or len(set(caps)) != len(caps):
        raise CostDataError("transformer list must be sorted by strictly increasing capacity")
    for t in transformers:
        if t.capital_kusd < 0 or t.lifetime_yr <= 0:
            raise CostDataError(f"transformer {t.label}: bad cost or lifetime")

    vr = {r["region"]: float(r["capital_kusd"]) for r in sections["vr"]}
    bess_row = sections["bess"][0]
    bess = BessCost(
        cost_usd_per_kw=float(bess_row["cost_usd_per_kw"]),
        duration_h=float(bess_row["duration_h"]),
        lifetime_yr=float(bess_row["lifetime_yr"]),
    )

    rate = DEFAULT_DISCOUNT_RATE
    if "finance" in sections and sections["finance"]:
        rate = float(sections["finance"][0]["discount_rate"])
    if rate < 0:
        raise CostDataError("discount_rate must be >= 0")

    conductors = []
    with open(conductors_path, newline="") as fh:
        for r in csv.DictReader(fh):
            conductors.append(ConductorCost(
                label=r["label"],
                region=r["region"],
                placement=r["placement"],
                cost_kusd_per_mile=float(r["cost_kusd_per_mile"]),
                ampacity_a=float(r["ampacity_a"]),
                r_ohm_per_mile=float(r["r_ohm_per_mile"]),
                x_ohm_per_mile=float(r["x_ohm_per_mile"]),
            ))
    for c in conductors:
        if c.cost_kusd_per_mile < 0 or c.ampacity_a <= 0:
            raise CostDataError(f"conductor {c.label} ({c.region}/{c.placement}): bad values")

    return CostDatabase(
        transformers=transformers,
        conductors=tuple(conductors),
        vr_cost_kusd=vr,
        bess=bess,
        discount_rate=rate,
    )


def default_cost_database() -> CostDatabase:
    """The cost tables shipped with the package."""
    data = resources.files("gridxpand").joinpath("data")
    with resources.as_file(data.joinpath("costs.csv")) as costs_path, \
            resources.as_file(data.joinpath("conductors.csv")) as cond_path:
        return load_cost_database(costs_path, cond_path)
