"""Expansion-planning MILP builder.

Builds the least-cost upgrade model for one feeder over the weighted
representative days: nodal active/reactive balance with penalized imbalance
slacks, squared-voltage drop per segment, box plus octagonal apparent-power
limits on every segment class, reconductoring option selection, feeder-head
transformer upgrade, voltage-regulator installation with tap bands,
community-solar placement coupled to storage siting, and cyclic per-day
battery dispatch.

Segment classes are disjoint per model: the feeder head; regulator segments
(existing, declared candidates, and screening-promoted sites); reconductoring
candidates activated by the candidate set; everything else fixed. Big-M
constants are derived per constraint from variable bounds, never a global
constant.

Constraint families carry their row tags ("Eq2[n,day,h]", ...) and the model
metadata counts every family instance, including families realized as pure
variable bounds, so audits can check instance counts against closed-form
formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .milp import EQUAL, GREATER_EQUAL, LESS_EQUAL, MilpModel, VarRef
from .network import (
    CandidateUpgradeKind,
    FeederHeadKind,
    FeederNetwork,
    FixedKind,
    LineSegment,
    RegulatorKind,
    StorageUnit,
)
from .powerflow import OperatingPoint, octagon_cuts
from .solver import Solution

DUMMY_SITE = "__site0__"


class BuildError(ValueError):
    """Candidate set or capacity data inconsistent with the network."""


@dataclass(frozen=True)
class CandidateSet:
    """Which elements the expansion model may invest in.

    Storage and community-solar sites are the same three locations (feeder
    head, middle, end); ``vr_sites`` name segments that may receive a
    regulator, ``reconductor_segments`` name segments with upgrade options.
    """

    reconductor_segments: tuple[str, ...] = ()
    feeder_head_upgrade: bool = False
    vr_sites: tuple[str, ...] = ()
    storage_sites: tuple[str, ...] = ()
    cs_sites: tuple[str, ...] = ()

    def union(self, other: "CandidateSet") -> "CandidateSet":
        def merge(a, b):
            return tuple(dict.fromkeys(tuple(a) + tuple(b)))
        return CandidateSet(
            reconductor_segments=merge(self.reconductor_segments, other.reconductor_segments),
            feeder_head_upgrade=self.feeder_head_upgrade or other.feeder_head_upgrade,
            vr_sites=merge(self.vr_sites, other.vr_sites),
            storage_sites=merge(self.storage_sites, other.storage_sites),
            cs_sites=merge(self.cs_sites, other.cs_sites),
        )

    def issubset(self, other: "CandidateSet") -> bool:
        return (set(self.reconductor_segments) <= set(other.reconductor_segments)
                and self.feeder_head_upgrade <= other.feeder_head_upgrade
                and set(self.vr_sites) <= set(other.vr_sites)
                and set(self.storage_sites) <= set(other.storage_sites)
                and set(self.cs_sites) <= set(other.cs_sites))


@dataclass
class _Ctx:
    """Variable handles shared by the per-family builders."""

    net: FeederNetwork
    model: MilpModel
    times: list[tuple[str, int]]
    weights: dict[str, float]
    fixed_segs: list[LineSegment]
    cand_segs: list[LineSegment]
    vr_segs: list[LineSegment]  # existing + candidate regulators
    vr_cand_ids: set[str]
    head: LineSegment
    fh_candidate: bool
    storage_existing: list[StorageUnit]
    storage_cand: list[StorageUnit]
    cs_units: list  # SolarUnit candidates in play
    cs_capacity: float
    siting_mode: str
    fixed_site: str | None
    f_p: dict = field(default_factory=dict)
    f_q: dict = field(default_factory=dict)
    v2: dict = field(default_factory=dict)
    v2mid: dict = field(default_factory=dict)
    p_subs: dict = field(default_factory=dict)
    q_subs: dict = field(default_factory=dict)
    slack: dict = field(default_factory=dict)  # (axis, sign, bus, t) -> var
    g_rts: dict = field(default_factory=dict)
    g_cs: dict = field(default_factory=dict)
    g_crt: dict = field(default_factory=dict)
    x_cs: dict = field(default_factory=dict)
    x_line: dict = field(default_factory=dict)
    x_fh: VarRef | None = None
    x_vr: dict = field(default_factory=dict)
    x_st: dict = field(default_factory=dict)
    x_st_bin: dict = field(default_factory=dict)
    p_in: dict = field(default_factory=dict)
    p_out: dict = field(default_factory=dict)
    q_st: dict = field(default_factory=dict)
    soc: dict = field(default_factory=dict)
    soc0: dict = field(default_factory=dict)
    f_trf: dict = field(default_factory=dict)
    f_upd: dict = field(default_factory=dict)


def _classify(net: FeederNetwork, candidates: CandidateSet) -> tuple[
        LineSegment, list[LineSegment], list[LineSegment], list[LineSegment], set[str]]:
    known = {s.id for s in net.segments}
    for sid in candidates.reconductor_segments:
        if sid not in known:
            raise BuildError(f"reconductor candidate {sid!r} is not a segment")
    for sid in candidates.vr_sites:
        if sid not in known:
            raise BuildError(f"regulator candidate {sid!r} is not a segment")
    overlap = set(candidates.reconductor_segments) & set(candidates.vr_sites)
    if overlap:
        raise BuildError(f"segments {sorted(overlap)} are both reconductoring and "
                         "regulator candidates; the segment classes must be disjoint")

    head = net.segment(net.feeder_head_segment)
    fixed, cand, vr = [], [], []
    vr_cand_ids: set[str] = set()
    recond = set(candidates.reconductor_segments)
    vr_sites = set(candidates.vr_sites)
    for seg in net.segments:
        if seg.id == head.id:
            if seg.id in recond or seg.id in vr_sites:
                raise BuildError("the feeder head cannot be a line or regulator candidate")
            continue
        if isinstance(seg.kind, RegulatorKind):
            if seg.id in recond:
                raise BuildError(f"regulator segment {seg.id!r} cannot be reconductored")
            vr.append(seg)
            if not seg.kind.existing:
                vr_cand_ids.add(seg.id)
            continue
        if seg.id in recond:
            if not isinstance(seg.kind, CandidateUpgradeKind):
                raise BuildError(f"segment {seg.id!r} has no upgrade options; promote it "
                                 "with the cost database before building")
            cand.append(seg)
            continue
        if seg.id in vr_sites:
            # promote in place: a candidate regulator keeps the line impedance
            # and capacity and adds a tap changer when built
            promoted = replace(seg, kind=RegulatorKind(
                existing=False, capacity=seg.capacity, install_cost=0.0))
            vr.append(promoted)
            vr_cand_ids.add(seg.id)
            continue
        fixed.append(seg)
    return head, fixed, cand, vr, vr_cand_ids


def build(net: FeederNetwork, candidates: CandidateSet, siting_mode: str = "optimal", *,
          cs_capacity: float | None = None, fixed_site: str | None = None,
          vr_install_cost: float | None = None) -> MilpModel:
    """Assemble the expansion MILP.

    ``cs_capacity`` (per-unit MW) switches the community-solar project on;
    None builds the without-CS counterfactual. ``siting_mode`` is "optimal"
    (placement decided by the model) or "fixed" (all capacity at
    ``fixed_site``). ``vr_install_cost`` overrides the per-segment regulator
    cost for screening-promoted sites.
    """
    if siting_mode not in ("fixed", "optimal"):
        raise BuildError(f"unknown siting mode {siting_mode!r}")
    head, fixed, cand, vr, vr_cand_ids = _classify(net, candidates)
    if vr_install_cost is not None:
        vr = [replace(s, kind=replace(s.kind, install_cost=vr_install_cost))
              if s.id in vr_cand_ids and s.kind.install_cost == 0.0 else s
              for s in vr]
    assert isinstance(head.kind, FeederHeadKind)

    bus_ids = {b.id for b in net.buses}
    for bus in tuple(candidates.storage_sites) + tuple(candidates.cs_sites):
        if bus not in bus_ids:
            raise BuildError(f"site {bus!r} is not a bus")

    storage_sites = set(candidates.storage_sites)
    storage_existing = [u for u in net.storage_units if u.status == "existing"]
    storage_cand = [u for u in net.storage_units
                    if u.status == "candidate" and u.bus in storage_sites]

    with_cs = cs_capacity is not None and cs_capacity > 0
    cs_sites = set(candidates.cs_sites)
    cs_units = [u for u in net.cs_units() if u.bus in cs_sites] if with_cs else []
    if with_cs:
        if not cs_units:
            raise BuildError("with-CS build requires community-solar candidate units "
                             "at the candidate sites")
        if siting_mode == "fixed":
            if fixed_site is None:
                raise BuildError("fixed siting requires a site bus")
            if fixed_site not in {u.bus for u in cs_units}:
                raise BuildError(f"no community-solar candidate at bus {fixed_site!r}")
        cand_buses = {u.bus for u in cs_units}
        missing = cand_buses - {u.bus for u in storage_cand}
        if missing:
            raise BuildError(f"community-solar sites {sorted(missing)} lack a candidate "
                             "storage unit for colocation")
        total_cap = sum(u.invest_cap for u in cs_units)
        if cs_capacity > total_cap + 1e-12:
            raise BuildError(f"project capacity {cs_capacity} exceeds the summed site "
                             f"limits {total_cap}")
        if cs_capacity > max(u.invest_cap for u in cs_units) + 1e-12:
            raise BuildError("project capacity exceeds every single site limit; "
                             "colocation admits one site only")

    model = MilpModel(name=f"expansion[{'cs' if with_cs else 'nocs'}]")
    ctx = _Ctx(
        net=net, model=model,
        times=net.time_index(),
        weights={d.label: d.weight for d in net.scenario_days},
        fixed_segs=fixed, cand_segs=cand, vr_segs=vr, vr_cand_ids=vr_cand_ids,
        head=head, fh_candidate=candidates.feeder_head_upgrade,
        storage_existing=storage_existing, storage_cand=storage_cand,
        cs_units=cs_units, cs_capacity=cs_capacity if with_cs else 0.0,
        siting_mode=siting_mode, fixed_site=fixed_site,
    )
    _declare_variables(ctx)
    _build_objective(ctx)
    _build_nodal(ctx)
    _build_fixed_lines(ctx)
    _build_candidate_lines(ctx)
    _build_taps(ctx)
    _build_transformers(ctx)
    _build_solar(ctx)
    _build_colocation(ctx)
    _build_storage(ctx)
    return model


# -- variable declaration -------------------------------------------------------


def _declare_variables(ctx: _Ctx) -> None:
    net, m = ctx.net, ctx.model
    INF = float("inf")
    head_kind: FeederHeadKind = ctx.head.kind

    fixed_ids = {s.id for s in ctx.fixed_segs}
    for seg in net.segments:
        for d, h in ctx.times:
            if seg.id in fixed_ids:
                cap = seg.capacity
                ctx.f_p[seg.id, d, h] = m.add_var("f_p", (seg.id, d, h), lo=-cap, hi=cap)
                ctx.f_q[seg.id, d, h] = m.add_var("f_q", (seg.id, d, h), lo=-cap, hi=cap)
            else:
                ctx.f_p[seg.id, d, h] = m.add_var("f_p", (seg.id, d, h), lo=-INF, hi=INF)
                ctx.f_q[seg.id, d, h] = m.add_var("f_q", (seg.id, d, h), lo=-INF, hi=INF)
    m.count("Eq6", len(ctx.fixed_segs) * len(ctx.times))
    m.count("Eq7", len(ctx.fixed_segs) * len(ctx.times))

    source = net.source_bus
    vref2 = net.v_ref ** 2
    for b in net.buses:
        lo, hi = b.vmin ** 2, b.vmax ** 2
        if b.id == source:
            if not (lo <= vref2 <= hi):
                raise BuildError(f"reference voltage {net.v_ref} outside the band of "
                                 f"bus {b.id!r}")
            lo = hi = vref2
        for d, h in ctx.times:
            ctx.v2[b.id, d, h] = m.add_var("v2", (b.id, d, h), lo=lo, hi=hi)
    m.count("Eq5", len(net.buses) * len(ctx.times))
    m.count("Eq4", len(ctx.times))  # one feeder head

    for seg in [ctx.head] + ctx.vr_segs:
        for d, h in ctx.times:
            ctx.v2mid[seg.id, d, h] = m.add_var("v2mid", (seg.id, d, h), lo=0.0, hi=INF)

    for d, h in ctx.times:
        ctx.p_subs[d, h] = m.add_var("p_subs", (d, h), lo=-INF, hi=INF)
        ctx.q_subs[d, h] = m.add_var("q_subs", (d, h), lo=-INF, hi=INF)
        for b in net.buses:
            for axis in ("p", "q"):
                for sign in ("pos", "neg"):
                    ctx.slack[axis, sign, b.id, d, h] = m.add_var(
                        f"slack_{axis}_{sign}", (b.id, d, h), lo=0.0, hi=INF)

    for u in net.rooftop_units():
        for d, h in ctx.times:
            out = u.installed_capacity * float(u.capacity_factor[d][h])
            ctx.g_rts[u.id, d, h] = m.add_var("g_rts", (u.id, d, h), lo=out, hi=out)
    m.count("Eq30", len(net.rooftop_units()) * len(ctx.times))

    for u in ctx.cs_units:
        if ctx.siting_mode == "fixed":
            cap = ctx.cs_capacity if u.bus == ctx.fixed_site else 0.0
            ctx.x_cs[u.id] = m.add_var("x_cs", (u.id,), lo=cap, hi=cap)
        else:
            ctx.x_cs[u.id] = m.add_var("x_cs", (u.id,), lo=0.0, hi=u.invest_cap)
        for d, h in ctx.times:
            ctx.g_cs[u.id, d, h] = m.add_var("g_cs", (u.id, d, h), lo=0.0, hi=INF)
            ctx.g_crt[u.id, d, h] = m.add_var("g_crt", (u.id, d, h), lo=0.0, hi=INF)

    for seg in ctx.cand_segs:
        opts = seg.kind.options
        for r in range(len(opts)):
            ctx.x_line[seg.id, r] = m.add_var("x_line", (seg.id, r), lo=0, hi=1, binary=True)
        ctx.f_upd[seg.id] = m.add_var("f_upd", (seg.id,), lo=0.0,
                                      hi=max(o.capacity for o in opts))
        m.count("Eq13", len(opts))

    fh_hi = 1.0 if (ctx.fh_candidate and head_kind.upgrade_capacity > 0) else 0.0
    ctx.x_fh = m.add_var("x_fh", (ctx.head.id,), lo=0.0, hi=fh_hi, binary=True)
    m.count("Eq24", 1)

    cap_hi = head_kind.base_capacity + head_kind.upgrade_capacity
    ctx.f_trf[ctx.head.id] = m.add_var("f_trf", (ctx.head.id,), lo=0.0, hi=cap_hi)
    for seg in ctx.vr_segs:
        cap = seg.kind.capacity
        ctx.f_trf[seg.id] = m.add_var("f_trf", (seg.id,), lo=cap, hi=cap)
    m.count("Eq23", len(ctx.vr_segs))

    for seg in ctx.vr_segs:
        if seg.id in ctx.vr_cand_ids:
            ctx.x_vr[seg.id] = m.add_var("x_vr", (seg.id,), lo=0, hi=1, binary=True)
    m.count("Eq21", len(ctx.x_vr))

    storage_all = ctx.storage_existing + ctx.storage_cand
    for u in ctx.storage_cand:
        ctx.x_st[u.id] = m.add_var("x_st", (u.id,), lo=0.0, hi=u.invest_cap)
        ctx.x_st_bin[u.id] = m.add_var("x_st_bin", (u.id,), lo=0, hi=1, binary=True)
    if not ctx.storage_cand:
        # keep the site-selection row well-defined with a zero-capacity site
        ctx.x_st_bin[DUMMY_SITE] = m.add_var("x_st_bin", (DUMMY_SITE,), lo=0, hi=1,
                                             binary=True)
    m.count("Eq35", len(ctx.x_st_bin))

    for u in storage_all:
        cand = u.status == "candidate"
        p_hi = (u.invest_cap * u.p_in_max) if cand else u.p_in_max
        o_hi = (u.invest_cap * u.p_out_max) if cand else u.p_out_max
        s_hi = u.duration * p_hi
        q_hi = u.reactive_fraction * p_hi
        for d, h in ctx.times:
            ctx.p_in[u.id, d, h] = m.add_var("p_in", (u.id, d, h), lo=0.0, hi=p_hi)
            ctx.p_out[u.id, d, h] = m.add_var("p_out", (u.id, d, h), lo=0.0, hi=o_hi)
            ctx.soc[u.id, d, h] = m.add_var("soc", (u.id, d, h), lo=0.0, hi=s_hi)
            ctx.q_st[u.id, d, h] = m.add_var("q_st", (u.id, d, h), lo=-q_hi, hi=q_hi)
        for day in ctx.net.scenario_days:
            ctx.soc0[u.id, day.label] = m.add_var("soc0", (u.id, day.label),
                                                  lo=0.0, hi=s_hi)
    m.count("Eq40", len(ctx.storage_existing) * len(ctx.times))
    m.count("Eq42", len(ctx.storage_existing) * len(ctx.times))
    m.count("Eq44", len(ctx.storage_existing) * len(ctx.times))
    m.count("Eq46", len(ctx.storage_existing) * len(ctx.times))


# -- objective -------------------------------------------------------------------


def _build_objective(ctx: _Ctx) -> None:
    net, m = ctx.net, ctx.model
    base = net.base_mva
    for u in ctx.storage_cand:
        m.add_objective("storage", ctx.x_st[u.id], u.annual_cost_per_mw * base)
    for seg in ctx.vr_segs:
        if seg.id in ctx.x_vr:
            m.add_objective("regulator", ctx.x_vr[seg.id], seg.kind.install_cost)
    for seg in ctx.cand_segs:
        for r, opt in enumerate(seg.kind.options):
            m.add_objective("line", ctx.x_line[seg.id, r],
                            opt.annual_cost_per_mva * opt.capacity * base)
    m.add_objective("feeder_head", ctx.x_fh, ctx.head.kind.upgrade_cost)
    for (axis, sign, bus, d, h), ref in ctx.slack.items():
        m.add_objective("imbalance", ref, net.imbalance_cost * ctx.weights[d] * base)
    for u in ctx.cs_units:
        for d, h in ctx.times:
            price = float(net.curtailment_price[d][h]) if d in net.curtailment_price else 0.0
            m.add_objective("curtailment", ctx.g_crt[u.id, d, h],
                            price * ctx.weights[d] * base)


# -- nodal balance ----------------------------------------------------------------


def _build_nodal(ctx: _Ctx) -> None:
    net, m = ctx.net, ctx.model
    source = net.source_bus
    into: dict[str, list[LineSegment]] = {b.id: [] for b in net.buses}
    outof: dict[str, list[LineSegment]] = {b.id: [] for b in net.buses}
    for seg in net.segments:
        into[seg.to_bus].append(seg)
        outof[seg.from_bus].append(seg)

    beta = net.loss_factors
    rooftop = net.rooftop_units()
    storage_by_bus: dict[str, list[StorageUnit]] = {}
    for u in ctx.storage_existing + ctx.storage_cand:
        storage_by_bus.setdefault(u.bus, []).append(u)

    for d, h in ctx.times:
        total_p = net.total_active_load(d, h)
        total_q = net.total_reactive_load(d, h)
        for b in net.buses:
            incident = into[b.id] + outof[b.id]
            beta_p = sum(beta.get(s.id, (0.0, 0.0))[0] for s in incident)
            beta_q = sum(beta.get(s.id, (0.0, 0.0))[1] for s in incident)

            terms = []
            if b.id == source:
                terms.append((ctx.p_subs[d, h], 1.0))
            for seg in into[b.id]:
                terms.append((ctx.f_p[seg.id, d, h], 1.0))
            for seg in outof[b.id]:
                terms.append((ctx.f_p[seg.id, d, h], -1.0))
            for u in ctx.cs_units:
                if u.bus == b.id:
                    terms.append((ctx.g_cs[u.id, d, h], 1.0))
            for u in rooftop:
                if u.bus == b.id:
                    terms.append((ctx.g_rts[u.id, d, h], 1.0))
            for u in storage_by_bus.get(b.id, []):
                terms.append((ctx.p_out[u.id, d, h], 1.0))
                terms.append((ctx.p_in[u.id, d, h], -1.0))
            # loss allocation: half of each incident segment's loss share of
            # the system-wide net load; generation reduces the allocated loss
            if beta_p:
                for u in rooftop:
                    terms.append((ctx.g_rts[u.id, d, h], beta_p / 2.0))
                for u in ctx.cs_units:
                    terms.append((ctx.g_cs[u.id, d, h], beta_p / 2.0))
            terms.append((ctx.slack["p", "neg", b.id, d, h], 1.0))
            terms.append((ctx.slack["p", "pos", b.id, d, h], -1.0))
            rhs = float(b.active_load[d][h]) + beta_p / 2.0 * total_p
            m.add_constraint(terms, EQUAL, rhs, tag=f"Eq2[{b.id},{d},{h}]")
            m.count("Eq2")

            terms = []
            if b.id == source:
                terms.append((ctx.q_subs[d, h], 1.0))
            for seg in into[b.id]:
                terms.append((ctx.f_q[seg.id, d, h], 1.0))
            for seg in outof[b.id]:
                terms.append((ctx.f_q[seg.id, d, h], -1.0))
            for u in storage_by_bus.get(b.id, []):
                terms.append((ctx.q_st[u.id, d, h], 1.0))
            terms.append((ctx.slack["q", "neg", b.id, d, h], 1.0))
            terms.append((ctx.slack["q", "pos", b.id, d, h], -1.0))
            rhs = float(b.reactive_load[d][h]) + beta_q / 2.0 * total_q
            m.add_constraint(terms, EQUAL, rhs, tag=f"Eq3[{b.id},{d},{h}]")
            m.count("Eq3")


# -- fixed lines -------------------------------------------------------------------


def _cut_rows(m: MilpModel, fp: VarRef, fq: VarRef, t: tuple,
              cap_const: float | None, cap_var: VarRef | None,
              family_pos: str, family_neg: str) -> None:
    """Octagonal cuts sign*fq <= slope*fp + intercept*cap for one (segment, t)."""
    for e, sign, slope, intercept in octagon_cuts():
        family = family_pos if sign > 0 else family_neg
        terms = [(fq, float(sign)), (fp, -slope)]
        if cap_var is not None:
            terms.append((cap_var, -intercept))
            rhs = 0.0
        else:
            rhs = intercept * cap_const
        m.add_constraint(terms, LESS_EQUAL, rhs,
                         tag=f"{family}[{','.join(str(i) for i in t)},e{e}]")
        m.count(family)


def _build_fixed_lines(ctx: _Ctx) -> None:
    m = ctx.model
    for seg in ctx.fixed_segs:
        cap = seg.capacity
        for d, h in ctx.times:
            fp, fq = ctx.f_p[seg.id, d, h], ctx.f_q[seg.id, d, h]
            _cut_rows(m, fp, fq, (seg.id, d, h), cap, None, "Eq8", "Eq9")
            m.add_constraint(
                [(ctx.v2[seg.to_bus, d, h], 1.0), (ctx.v2[seg.from_bus, d, h], -1.0),
                 (fp, 2.0 * seg.resistance), (fq, 2.0 * seg.reactance)],
                EQUAL, 0.0, tag=f"Eq10[{seg.id},{d},{h}]")
            m.count("Eq10")


# -- candidate lines ----------------------------------------------------------------


def _line_big_m(seg: LineSegment, net: FeederNetwork) -> float:
    opts = seg.kind.options
    vmax2 = max(net.bus(seg.from_bus).vmax, net.bus(seg.to_bus).vmax) ** 2
    vmin2 = min(net.bus(seg.from_bus).vmin, net.bus(seg.to_bus).vmin) ** 2
    worst_rx = max(o.resistance + o.reactance for o in opts)
    worst_cap = max(o.capacity for o in opts)
    return (vmax2 - vmin2) + 2.0 * worst_rx * worst_cap


def _build_candidate_lines(ctx: _Ctx) -> None:
    m = ctx.model
    for seg in ctx.cand_segs:
        opts = seg.kind.options
        m.add_constraint(
            [(ctx.f_upd[seg.id], 1.0)] +
            [(ctx.x_line[seg.id, r], -opt.capacity) for r, opt in enumerate(opts)],
            EQUAL, 0.0, tag=f"Eq11[{seg.id}]")
        m.count("Eq11")
        m.add_constraint([(ctx.x_line[seg.id, r], 1.0) for r in range(len(opts))],
                         EQUAL, 1.0, tag=f"Eq12[{seg.id}]")
        m.count("Eq12")
        big_m = _line_big_m(seg, ctx.net)
        for d, h in ctx.times:
            fp, fq = ctx.f_p[seg.id, d, h], ctx.f_q[seg.id, d, h]
            fupd = ctx.f_upd[seg.id]
            m.add_constraint([(fp, 1.0), (fupd, -1.0)], LESS_EQUAL, 0.0,
                             tag=f"Eq14[{seg.id},{d},{h},up]")
            m.add_constraint([(fp, 1.0), (fupd, 1.0)], GREATER_EQUAL, 0.0,
                             tag=f"Eq14[{seg.id},{d},{h},lo]")
            m.count("Eq14", 2)
            m.add_constraint([(fq, 1.0), (fupd, -1.0)], LESS_EQUAL, 0.0,
                             tag=f"Eq15[{seg.id},{d},{h},up]")
            m.add_constraint([(fq, 1.0), (fupd, 1.0)], GREATER_EQUAL, 0.0,
                             tag=f"Eq15[{seg.id},{d},{h},lo]")
            m.count("Eq15", 2)
            _cut_rows(m, fp, fq, (seg.id, d, h), None, fupd, "Eq16", "Eq17")
            v_to = ctx.v2[seg.to_bus, d, h]
            v_fr = ctx.v2[seg.from_bus, d, h]
            for r, opt in enumerate(opts):
                x = ctx.x_line[seg.id, r]
                # v_to - v_fr + 2(R_r fp + X_r fq) within +-(1-x)M
                common = [(v_to, 1.0), (v_fr, -1.0),
                          (fp, 2.0 * opt.resistance), (fq, 2.0 * opt.reactance)]
                m.add_constraint(common + [(x, big_m)], LESS_EQUAL, big_m,
                                 tag=f"Eq18[{seg.id},{d},{h},r{r},up]")
                m.add_constraint(common + [(x, -big_m)], GREATER_EQUAL, -big_m,
                                 tag=f"Eq18[{seg.id},{d},{h},r{r},lo]")
                m.count("Eq18", 2)


# -- tap changing --------------------------------------------------------------------


def _build_taps(ctx: _Ctx) -> None:
    m = ctx.model
    for seg in [ctx.head] + ctx.vr_segs:
        kind = seg.kind
        phi_min2 = kind.tap_min ** 2
        phi_max2 = kind.tap_max ** 2
        for d, h in ctx.times:
            vmid = ctx.v2mid[seg.id, d, h]
            v_to = ctx.v2[seg.to_bus, d, h]
            m.add_constraint([(vmid, 1.0), (v_to, -phi_max2)], LESS_EQUAL, 0.0,
                             tag=f"Eq19[{seg.id},{d},{h},up]")
            m.add_constraint([(vmid, 1.0), (v_to, -phi_min2)], GREATER_EQUAL, 0.0,
                             tag=f"Eq19[{seg.id},{d},{h},lo]")
            m.count("Eq19", 2)
    for seg in ctx.vr_segs:
        if seg.id not in ctx.x_vr:
            continue
        kind = seg.kind
        vmax2 = ctx.net.bus(seg.to_bus).vmax ** 2
        big_m = vmax2 * (1.0 / kind.tap_min ** 2 - 1.0 / kind.tap_max ** 2)
        for d, h in ctx.times:
            vmid = ctx.v2mid[seg.id, d, h]
            v_to = ctx.v2[seg.to_bus, d, h]
            x = ctx.x_vr[seg.id]
            m.add_constraint([(vmid, 1.0), (v_to, -1.0), (x, -big_m)], LESS_EQUAL, 0.0,
                             tag=f"Eq20[{seg.id},{d},{h},up]")
            m.add_constraint([(vmid, 1.0), (v_to, -1.0), (x, big_m)], GREATER_EQUAL, 0.0,
                             tag=f"Eq20[{seg.id},{d},{h},lo]")
            m.count("Eq20", 2)


# -- feeder head and regulators ---------------------------------------------------------


def _build_transformers(ctx: _Ctx) -> None:
    m = ctx.model
    head_kind: FeederHeadKind = ctx.head.kind
    m.add_constraint(
        [(ctx.f_trf[ctx.head.id], 1.0), (ctx.x_fh, -head_kind.upgrade_capacity)],
        EQUAL, head_kind.base_capacity, tag=f"Eq22[{ctx.head.id}]")
    m.count("Eq22")
    for seg in [ctx.head] + ctx.vr_segs:
        for d, h in ctx.times:
            fp, fq = ctx.f_p[seg.id, d, h], ctx.f_q[seg.id, d, h]
            ftrf = ctx.f_trf[seg.id]
            m.add_constraint([(fp, 1.0), (ftrf, -1.0)], LESS_EQUAL, 0.0,
                             tag=f"Eq25[{seg.id},{d},{h},up]")
            m.add_constraint([(fp, 1.0), (ftrf, 1.0)], GREATER_EQUAL, 0.0,
                             tag=f"Eq25[{seg.id},{d},{h},lo]")
            m.count("Eq25", 2)
            m.add_constraint([(fq, 1.0), (ftrf, -1.0)], LESS_EQUAL, 0.0,
                             tag=f"Eq26[{seg.id},{d},{h},up]")
            m.add_constraint([(fq, 1.0), (ftrf, 1.0)], GREATER_EQUAL, 0.0,
                             tag=f"Eq26[{seg.id},{d},{h},lo]")
            m.count("Eq26", 2)
            _cut_rows(m, fp, fq, (seg.id, d, h), None, ftrf, "Eq27", "Eq28")
            m.add_constraint(
                [(ctx.v2mid[seg.id, d, h], 1.0), (ctx.v2[seg.from_bus, d, h], -1.0),
                 (fp, 2.0 * seg.resistance), (fq, 2.0 * seg.reactance)],
                EQUAL, 0.0, tag=f"Eq29[{seg.id},{d},{h}]")
            m.count("Eq29")


# -- solar ---------------------------------------------------------------------------


def _build_solar(ctx: _Ctx) -> None:
    m = ctx.model
    for u in ctx.cs_units:
        for d, h in ctx.times:
            cf = float(u.capacity_factor[d][h])
            m.add_constraint(
                [(ctx.g_cs[u.id, d, h], 1.0), (ctx.g_crt[u.id, d, h], 1.0),
                 (ctx.x_cs[u.id], -cf)],
                EQUAL, 0.0, tag=f"Eq31[{u.id},{d},{h}]")
            m.count("Eq31")
    if ctx.cs_units:
        m.add_constraint([(ctx.x_cs[u.id], 1.0) for u in ctx.cs_units],
                         EQUAL, ctx.cs_capacity, tag="Eq32")
        m.count("Eq32")


# -- colocation ------------------------------------------------------------------------


def _build_colocation(ctx: _Ctx) -> None:
    m = ctx.model
    for u in ctx.storage_cand:
        m.add_constraint(
            [(ctx.x_st[u.id], 1.0), (ctx.x_st_bin[u.id], -u.invest_cap)],
            LESS_EQUAL, 0.0, tag=f"Eq33[{u.id}]")
        m.count("Eq33")
    m.add_constraint([(ref, 1.0) for ref in ctx.x_st_bin.values()], EQUAL, 1.0,
                     tag="Eq34")
    m.count("Eq34")
    storage_at = {u.bus: u for u in ctx.storage_cand}
    for u in ctx.cs_units:
        host = storage_at[u.bus]
        m.add_constraint(
            [(ctx.x_cs[u.id], 1.0), (ctx.x_st_bin[host.id], -u.invest_cap)],
            LESS_EQUAL, 0.0, tag=f"Eq36[{u.id}]")
        m.count("Eq36")


# -- storage -----------------------------------------------------------------------------


def _build_storage(ctx: _Ctx) -> None:
    m = ctx.model
    for u in ctx.storage_existing + ctx.storage_cand:
        eta = u.efficiency
        cand = u.status == "candidate"
        for day in ctx.net.scenario_days:
            d = day.label
            last = day.hours - 1
            m.add_constraint(
                [(ctx.soc0[u.id, d], 1.0), (ctx.soc[u.id, d, last], -1.0)],
                EQUAL, 0.0, tag=f"Eq37[{u.id},{d}]")
            m.count("Eq37")
            m.add_constraint(
                [(ctx.soc[u.id, d, 0], 1.0), (ctx.soc0[u.id, d], -1.0),
                 (ctx.p_in[u.id, d, 0], -eta), (ctx.p_out[u.id, d, 0], 1.0)],
                EQUAL, 0.0, tag=f"Eq38[{u.id},{d}]")
            m.count("Eq38")
            for h in range(1, day.hours):
                m.add_constraint(
                    [(ctx.soc[u.id, d, h], 1.0), (ctx.soc[u.id, d, h - 1], -1.0),
                     (ctx.p_in[u.id, d, h], -eta), (ctx.p_out[u.id, d, h], 1.0)],
                    EQUAL, 0.0, tag=f"Eq39[{u.id},{d},{h}]")
                m.count("Eq39")
        if cand:
            x = ctx.x_st[u.id]
            for d, h in ctx.times:
                m.add_constraint(
                    [(ctx.soc[u.id, d, h], 1.0), (x, -u.duration * u.p_in_max)],
                    LESS_EQUAL, 0.0, tag=f"Eq41[{u.id},{d},{h}]")
                m.count("Eq41")
                m.add_constraint([(ctx.p_in[u.id, d, h], 1.0), (x, -u.p_in_max)],
                                 LESS_EQUAL, 0.0, tag=f"Eq43[{u.id},{d},{h}]")
                m.count("Eq43")
                m.add_constraint([(ctx.p_out[u.id, d, h], 1.0), (x, -u.p_out_max)],
                                 LESS_EQUAL, 0.0, tag=f"Eq45[{u.id},{d},{h}]")
                m.count("Eq45")
                m.add_constraint(
                    [(ctx.q_st[u.id, d, h], 1.0), (x, -u.reactive_fraction * u.p_in_max)],
                    LESS_EQUAL, 0.0, tag=f"Eq47[{u.id},{d},{h},up]")
                m.add_constraint(
                    [(ctx.q_st[u.id, d, h], 1.0), (x, u.reactive_fraction * u.p_in_max)],
                    GREATER_EQUAL, 0.0, tag=f"Eq47[{u.id},{d},{h},lo]")
                m.count("Eq47", 2)


# -- solution interpretation ----------------------------------------------------------


def var_map(model: MilpModel) -> dict[tuple[str, tuple], VarRef]:
    return {(v.family, v.indices): v for v in model.variables}


@dataclass(frozen=True)
class PlanDecisions:
    """Investment content of a solved expansion model, in real units."""

    line_options: dict[str, tuple[int, str, float]]  # seg -> (option, conductor, $/yr)
    feeder_head_upgrade: bool
    feeder_head_cost: float
    regulators: dict[str, float]  # seg -> $/yr, installed candidates only
    storage_mw: dict[str, tuple[str, float, float]]  # unit -> (bus, MW, $/yr)
    cs_mw: dict[str, tuple[str, float]]  # unit -> (bus, MW)
    investment_cost: float
    slack_total_mwh: float = 0.0


def extract_decisions(net: FeederNetwork, model: MilpModel, sol: Solution,
                      candidates: CandidateSet) -> PlanDecisions:
    refs = var_map(model)
    # objective coefficients are the single source of truth for asset costs,
    # so per-asset sums reproduce the investment groups exactly
    obj_coeff: dict[int, float] = {}
    for group in ("storage", "regulator", "line", "feeder_head"):
        for ref, cost in model.objective_groups.get(group, []):
            obj_coeff[ref.idx] = obj_coeff.get(ref.idx, 0.0) + cost

    line_options: dict[str, tuple[int, str, float]] = {}
    for seg in net.segments:
        if seg.id not in candidates.reconductor_segments:
            continue
        if not isinstance(seg.kind, CandidateUpgradeKind):
            continue
        opts = seg.kind.options
        chosen = max(range(len(opts)), key=lambda r: sol.value(refs[("x_line", (seg.id, r))]))
        cost = obj_coeff.get(refs[("x_line", (seg.id, chosen))].idx, 0.0)
        line_options[seg.id] = (chosen, opts[chosen].conductor, cost)
    head = net.segment(net.feeder_head_segment)
    fh_ref = refs[("x_fh", (head.id,))]
    fh = sol.value(fh_ref) > 0.5
    regulators = {}
    for (family, idx), ref in refs.items():
        if family == "x_vr" and sol.value(ref) > 0.5:
            regulators[idx[0]] = obj_coeff.get(ref.idx, 0.0)
    storage = {}
    for u in net.storage_units:
        key = ("x_st", (u.id,))
        if key in refs and sol.value(refs[key]) > 1e-9:
            mw = sol.value(refs[key])
            storage[u.id] = (u.bus, mw * net.base_mva,
                             mw * obj_coeff.get(refs[key].idx, 0.0))
    cs = {}
    for u in net.cs_units():
        key = ("x_cs", (u.id,))
        if key in refs and sol.value(refs[key]) > 1e-9:
            cs[u.id] = (u.bus, sol.value(refs[key]) * net.base_mva)
    invest = sum(sol.cost_breakdown.get(g, 0.0)
                 for g in ("storage", "regulator", "line", "feeder_head"))
    slack = sol.family_total("slack_p_pos") + sol.family_total("slack_p_neg") + \
        sol.family_total("slack_q_pos") + sol.family_total("slack_q_neg")
    return PlanDecisions(
        line_options=line_options, feeder_head_upgrade=fh,
        feeder_head_cost=obj_coeff.get(fh_ref.idx, 0.0) if fh else 0.0,
        regulators=regulators, storage_mw=storage, cs_mw=cs,
        investment_cost=invest, slack_total_mwh=slack * net.base_mva)


def slack_total(sol: Solution) -> float:
    """Total imbalance slack (per-unit MW summed over buses and hours)."""
    return (sol.family_total("slack_p_pos") + sol.family_total("slack_p_neg")
            + sol.family_total("slack_q_pos") + sol.family_total("slack_q_neg"))


def realized_network(net: FeederNetwork, model: MilpModel, sol: Solution,
                     candidates: CandidateSet) -> FeederNetwork:
    """The network with the solved plan applied (for power-flow replay)."""
    refs = var_map(model)
    new_segments = []
    for seg in net.segments:
        if seg.id in candidates.reconductor_segments and \
                isinstance(seg.kind, CandidateUpgradeKind):
            opts = seg.kind.options
            chosen = max(range(len(opts)),
                         key=lambda r: sol.value(refs[("x_line", (seg.id, r))]))
            opt = opts[chosen]
            new_segments.append(replace(
                seg, resistance=opt.resistance, reactance=opt.reactance,
                kind=FixedKind(capacity=opt.capacity)))
        elif isinstance(seg.kind, FeederHeadKind):
            upgraded = sol.value(refs[("x_fh", (seg.id,))]) > 0.5
            extra = seg.kind.upgrade_capacity if upgraded else 0.0
            new_segments.append(replace(seg, kind=replace(
                seg.kind, base_capacity=seg.kind.base_capacity + extra,
                upgrade_capacity=0.0)))
        elif seg.id in candidates.vr_sites and not isinstance(seg.kind, RegulatorKind):
            installed = sol.value(refs[("x_vr", (seg.id,))]) > 0.5
            if installed:
                new_segments.append(replace(seg, kind=RegulatorKind(
                    existing=True, capacity=seg.capacity, install_cost=0.0)))
            else:
                new_segments.append(seg)
        else:
            new_segments.append(seg)
    return replace(net, segments=tuple(new_segments))


def dispatch_operating_points(net: FeederNetwork, model: MilpModel, sol: Solution,
                              ) -> list[OperatingPoint]:
    """Per-hour injections and tap ratios implied by a solved model.

    Replaying these through the power-flow engine must reproduce the model's
    squared voltages (lossless networks).
    """
    refs = var_map(model)

    def val(family: str, idx: tuple) -> float:
        ref = refs.get((family, idx))
        return sol.value(ref) if ref is not None else 0.0

    points = []
    source = net.source_bus
    for d, h in net.time_index():
        inj: dict[str, tuple[float, float]] = {}
        for b in net.buses:
            p = -float(b.active_load[d][h])
            q = -float(b.reactive_load[d][h])
            p += val("slack_p_neg", (b.id, d, h)) - val("slack_p_pos", (b.id, d, h))
            q += val("slack_q_neg", (b.id, d, h)) - val("slack_q_pos", (b.id, d, h))
            inj[b.id] = (p, q)
        for u in net.rooftop_units():
            p, q = inj[u.bus]
            inj[u.bus] = (p + val("g_rts", (u.id, d, h)), q)
        for u in net.cs_units():
            p, q = inj[u.bus]
            inj[u.bus] = (p + val("g_cs", (u.id, d, h)), q)
        for u in net.storage_units:
            p, q = inj[u.bus]
            inj[u.bus] = (p + val("p_out", (u.id, d, h)) - val("p_in", (u.id, d, h)),
                          q + val("q_st", (u.id, d, h)))
        taps = {}
        for seg in net.segments:
            key = ("v2mid", (seg.id, d, h))
            if key in refs:
                v2mid = sol.value(refs[key])
                v2to = val("v2", (seg.to_bus, d, h))
                if v2to > 1e-9:
                    taps[seg.id] = math.sqrt(max(v2mid, 0.0) / v2to)
        points.append(OperatingPoint(day=d, hour=h, injections=inj, taps=taps))
    return points
