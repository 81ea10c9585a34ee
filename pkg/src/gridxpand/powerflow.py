"""Balanced radial power flow: linearized voltage drop plus optional loss refinement.

The voltage model relates squared voltages along a segment by
``v2_to = v2_fr - 2*(R*fp + X*fq)`` with flows in per-unit; segments with a
transformer apply the turns ratio downstream of the drop, ``v2_to = v2_mid /
tap**2``. Apparent-power loading is measured against the eight-cut linear
polygon also used by the expansion model, so screening and optimization agree
on what "overloaded" means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .network import FeederHeadKind, FeederNetwork, RegulatorKind

LOSS_TOL = 1e-6
LOSS_MAX_ITER = 20


def octagon_cuts() -> list[tuple[int, int, float, float]]:
    """Coefficients of the linear apparent-power cuts.

    Each entry (e, sign, slope, intercept) encodes
    ``sign*fq <= slope*fp + intercept*cap`` for e in 1..4 and sign in {+1,-1}.
    Each cut is the chord through the capacity circle's points at angles
    (e-1)*45 and e*45 degrees, so the eight of them bound the inscribed
    octagon and enforce sqrt(fp^2+fq^2) <= cap conservatively.
    """
    cuts = []
    for e in (1, 2, 3, 4):
        slope = 1.0 / math.tan((0.5 - e) * math.pi / 4.0)
        intercept = math.sin(e * math.pi / 4.0) - slope * math.cos(e * math.pi / 4.0)
        cuts.append((e, +1, slope, intercept))
        cuts.append((e, -1, slope, intercept))
    return cuts


_CUTS = octagon_cuts()


def polygon_gauge(fp: float, fq: float) -> float:
    """Polyhedral apparent-power measure: the smallest capacity that admits
    (fp, fq) under the box bounds plus the octagon cuts."""
    worst = max(abs(fp), abs(fq))
    for _, sign, slope, intercept in _CUTS:
        worst = max(worst, (sign * fq - slope * fp) / intercept)
    return worst


@dataclass(frozen=True)
class OperatingPoint:
    """Injections (per-unit MW/MVAr, generation positive) and tap positions."""

    day: str
    hour: int
    injections: dict[str, tuple[float, float]]
    taps: dict[str, float] = field(default_factory=dict)

    def tap(self, segment_id: str) -> float:
        return self.taps.get(segment_id, 1.0)


@dataclass(frozen=True)
class Violation:
    element: str
    kind: str  # overvoltage | undervoltage | overload
    magnitude: float
    day: str = ""
    hour: int = -1


@dataclass(frozen=True)
class FlowResult:
    day: str
    hour: int
    flow_p: dict[str, float]  # segment id -> per-unit MW at sending end
    flow_q: dict[str, float]
    v2: dict[str, float]  # bus id -> squared per-unit voltage
    v2_mid: dict[str, float]  # regulated segment id -> pre-tap squared voltage
    loading: dict[str, float]  # segment id -> polygon gauge / capacity
    substation_p: float
    substation_q: float
    tap_rule: str = ""  # screening pass that produced this result, if any

    def voltage(self, bus_id: str) -> float:
        return math.sqrt(self.v2[bus_id])


def operating_point(net: FeederNetwork, day: str, hour: int, *,
                    tap_rule: str | None = None,
                    taps: dict[str, float] | None = None) -> OperatingPoint:
    """Operating point from the stored profiles: load plus existing rooftop PV.

    ``tap_rule='peak'`` gives the feeder head its full voltage boost (the
    turns ratio at ``tap_min``, since downstream voltage is ``v_mid/tap**2``)
    before undervoltage and capacity are checked; ``'solar'`` gives the least
    boost (``tap_max``) before overvoltage is checked. Violations found this
    way are the ones substation tap control cannot absorb. Regulators stay
    neutral during screening.
    """
    if tap_rule not in (None, "peak", "solar"):
        raise ValueError(f"unknown tap rule {tap_rule!r}")
    inj: dict[str, tuple[float, float]] = {}
    for b in net.buses:
        inj[b.id] = (-float(b.active_load[day][hour]), -float(b.reactive_load[day][hour]))
    for u in net.rooftop_units():
        p, q = inj[u.bus]
        inj[u.bus] = (p + u.installed_capacity * float(u.capacity_factor[day][hour]), q)
    resolved = dict(taps or {})
    for seg in net.segments:
        if isinstance(seg.kind, (FeederHeadKind, RegulatorKind)) and seg.id not in resolved:
            if tap_rule and isinstance(seg.kind, FeederHeadKind):
                resolved[seg.id] = seg.kind.tap_min if tap_rule == "peak" else seg.kind.tap_max
            else:
                resolved[seg.id] = 1.0
    return OperatingPoint(day=day, hour=hour, injections=inj, taps=resolved)


def solve_lindistflow(net: FeederNetwork, op: OperatingPoint, *,
                      losses: bool = False) -> FlowResult:
    """Exact downstream flow aggregation plus the squared-voltage recursion.

    With ``losses=True`` a fixed point adds series I^2*R losses (evaluated at
    the sending-end voltage) to the branch flows, re-solving until the flow
    change drops below 1e-6 per-unit.
    """
    order = net.segments_topological()
    subtrees = net.subtree_buses()
    children = net.children()
    source = net.source_bus

    def net_injection(bus_id: str) -> tuple[float, float]:
        return op.injections.get(bus_id, (0.0, 0.0))

    base_p = {}
    base_q = {}
    for seg in order:
        p = q = 0.0
        for bus in subtrees[seg.id]:
            ip, iq = net_injection(bus)
            p -= ip
            q -= iq
        base_p[seg.id], base_q[seg.id] = p, q

    loss_p = {seg.id: 0.0 for seg in order}
    loss_q = {seg.id: 0.0 for seg in order}
    flow_p = dict(base_p)
    flow_q = dict(base_q)
    v2: dict[str, float] = {}
    v2_mid: dict[str, float] = {}

    for iteration in range(LOSS_MAX_ITER if losses else 1):
        # Sending-end flow = downstream consumption + downstream losses
        # (including this segment's own series loss).
        agg_loss_p: dict[str, float] = {}
        agg_loss_q: dict[str, float] = {}
        for seg in reversed(order):
            lp, lq = loss_p[seg.id], loss_q[seg.id]
            for child in children[seg.to_bus]:
                lp += agg_loss_p[child.id]
                lq += agg_loss_q[child.id]
            agg_loss_p[seg.id], agg_loss_q[seg.id] = lp, lq
        new_p = {sid: base_p[sid] + agg_loss_p[sid] for sid in base_p}
        new_q = {sid: base_q[sid] + agg_loss_q[sid] for sid in base_q}

        v2 = {source: net.v_ref ** 2}
        v2_mid = {}
        for seg in order:
            drop = 2.0 * (seg.resistance * new_p[seg.id] + seg.reactance * new_q[seg.id])
            downstream = v2[seg.from_bus] - drop
            if isinstance(seg.kind, (FeederHeadKind, RegulatorKind)):
                v2_mid[seg.id] = downstream
                tap = op.tap(seg.id)
                v2[seg.to_bus] = downstream / tap ** 2
            else:
                v2[seg.to_bus] = downstream

        delta = max((abs(new_p[s] - flow_p[s]) + abs(new_q[s] - flow_q[s]) for s in new_p),
                    default=0.0)
        flow_p, flow_q = new_p, new_q
        if not losses:
            break
        for seg in order:
            vref2 = max(v2[seg.from_bus], 1e-6)
            s2 = flow_p[seg.id] ** 2 + flow_q[seg.id] ** 2
            loss_p[seg.id] = seg.resistance * s2 / vref2
            loss_q[seg.id] = seg.reactance * s2 / vref2
        if delta < LOSS_TOL and iteration > 0:
            break

    loading = {
        seg.id: polygon_gauge(flow_p[seg.id], flow_q[seg.id]) / seg.capacity
        for seg in order
    }
    ip, iq = net_injection(source)
    head_children = children[source]
    sub_p = sum(flow_p[s.id] for s in head_children) - ip
    sub_q = sum(flow_q[s.id] for s in head_children) - iq
    return FlowResult(
        day=op.day, hour=op.hour,
        flow_p=flow_p, flow_q=flow_q, v2=v2, v2_mid=v2_mid, loading=loading,
        substation_p=sub_p, substation_q=sub_q,
    )


def check_violations(res: FlowResult, net: FeederNetwork, *, tol: float = 1e-9,
                     ) -> list[Violation]:
    """Voltage-band and thermal violations of a solved operating point."""
    found: list[Violation] = []
    for b in net.buses:
        v = math.sqrt(max(res.v2[b.id], 0.0))
        if v < b.vmin - tol:
            found.append(Violation(b.id, "undervoltage", b.vmin - v, res.day, res.hour))
        elif v > b.vmax + tol:
            found.append(Violation(b.id, "overvoltage", v - b.vmax, res.day, res.hour))
    for seg in net.segments:
        load = res.loading[seg.id]
        if load > 1.0 + tol:
            found.append(Violation(seg.id, "overload", load - 1.0, res.day, res.hour))
    return found


def compute_loss_factors(net: FeederNetwork, day: str, hour: int,
                         ) -> dict[str, tuple[float, float]]:
    """Loss allocation factors from a lossy base-case power flow.

    beta = 2 * (segment series loss) / (system net load) at the given hour,
    per power axis; zero when the net load vanishes.
    """
    op = operating_point(net, day, hour)
    lossy = solve_lindistflow(net, op, losses=True)
    net_p = sum(-p for p, _ in op.injections.values())
    net_q = sum(-q for _, q in op.injections.values())
    out: dict[str, tuple[float, float]] = {}
    for seg in net.segments:
        v2_from = max(lossy.v2[seg.from_bus], 1e-6)
        s2 = lossy.flow_p[seg.id] ** 2 + lossy.flow_q[seg.id] ** 2
        loss_p = seg.resistance * s2 / v2_from
        loss_q = seg.reactance * s2 / v2_from
        bp = 2.0 * loss_p / net_p if net_p > 0 else 0.0
        bq = 2.0 * loss_q / net_q if net_q > 0 else 0.0
        out[seg.id] = (bp, bq)
    return out
