"""Deadline-constrained packet routing and channel scheduling: loop-free path
enumeration, the scheduling feasibility check, an exact small-instance solver
and a greedy heuristic.

A packet assigned at slot k0 to an H-hop path crosses hop h at slot k0+h-1
and must finish inside its deadline window. Both solvers build schedules
where each slot carries at most n_channels transmissions and each link fires
at most once per slot; the feasibility checker validates the weaker printed
constraint (window usage <= window grants), so every solver output passes it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .channel import LinkSnapshot
from .link_metrics import (
    MetricWeights,
    NodeStatus,
    PathCandidate,
    direction_ratio,
    hop_alignment,
    neighbor_transmit_count,
    node_weight,
    normalized_hop_aggregate,
    relay_reliability,
    staying_time,
    vehicle_status,
    velocity_variance,
)

EXACT_MAX_PACKETS = 3
EXACT_MAX_CHANNELS = 2
EXACT_MAX_HORIZON = 4
EXACT_MAX_PATHS = 6

# dispersion floor for path scores: unlike the division guard SIGMA_EPS,
# this is a physical scale (m/s) that keeps scores commensurate with the
# control cost when all platoon speeds coincide
SIGMA_SCORE_FLOOR = 0.25


@dataclass(frozen=True)
class Packet:
    """One transfer request: size bits from source to destination, to be
    completed within deadline_slots of the arrival slot."""

    id: int
    arrival_slot: int
    deadline_slots: int
    size: float
    source: object
    destination: object

    def __post_init__(self):
        if self.deadline_slots < 1:
            raise ValueError("deadline_slots must be at least 1")
        if self.size <= 0:
            raise ValueError("size must be positive")

    @property
    def last_slot(self) -> int:
        return self.arrival_slot + self.deadline_slots


@dataclass
class TopologySnapshot:
    """Immutable view of the network at one slot: node kinematics and
    statuses plus directed links with their channel quantities."""

    positions: dict
    speeds: dict
    statuses: dict
    links: dict
    comm_range: float
    weights: MetricWeights = field(default_factory=MetricWeights)
    path_cap: int = 8
    # link lifetimes beyond this horizon are equivalent for ranking: a link
    # only needs to outlive the delivery deadline
    lifetime_horizon: float = math.inf
    _path_cache: dict = field(default_factory=dict, repr=False)
    _neighbor_cache: dict | None = field(default=None, repr=False)
    _weight_cache: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        for i, j in self.links:
            if i not in self.positions or j not in self.positions:
                raise ValueError(f"link ({i}, {j}) references unknown node")

    def _neighbor_lists(self) -> dict:
        if self._neighbor_cache is None:
            lists: dict = {n: [] for n in self.positions}
            for i, j in self.links:
                lists[i].append(j)
            for outs in lists.values():
                outs.sort(key=repr)
            self._neighbor_cache = lists
        return self._neighbor_cache

    def neighbors(self, node) -> list:
        return self._neighbor_lists().get(node, [])

    def node_status(self, node) -> NodeStatus:
        return self.statuses.get(node, NodeStatus())

    def status_bit(self, node) -> int:
        st = self.node_status(node)
        return vehicle_status(st.queue_len, st.queue_max)

    def node_weight_of(self, node) -> float:
        if self._weight_cache is None:
            self._weight_cache = {}
            bits = {n: self.status_bit(n) for n in self.positions}
            for n in self.positions:
                st = self.node_status(n)
                n_path = neighbor_transmit_count([bits[j] for j in self.neighbors(n)])
                rel = relay_reliability(st.relayed_ok, st.relay_received)
                self._weight_cache[n] = node_weight(
                    bits[n], n_path, rel, self.weights, can_transmit=bits[n] == 1
                )
        return self._weight_cache[node]

    def candidate_paths(self, source, destination, max_hops: int) -> list:
        """Best path_cap candidates by value, enumeration order preserved on ties."""
        key = (source, destination, max_hops)
        if key not in self._path_cache:
            cands = enumerate_paths(self, source, destination, max_hops)
            cands.sort(key=lambda c: -c.path_value)
            self._path_cache[key] = cands[: self.path_cap]
        return self._path_cache[key]


def build_path_candidate(
    topology: TopologySnapshot, hops: Sequence
) -> PathCandidate:
    """Score one relay sequence with the mobility-aware per-hop metrics.

    The stored path_value is the hop-count-normalized aggregate with the
    per-hop direction factor taken as progress alignment, so scores stay
    comparable across path lengths when ranking and scheduling.
    """
    src, dst = hops[0], hops[-1]
    sigma = velocity_variance([topology.speeds.get(n, 0.0) for n in hops])
    per_hop = []
    node_weights = []
    mobility = []
    success = 1.0
    for u, w in zip(hops[:-1], hops[1:]):
        link: LinkSnapshot = topology.links[(u, w)]
        pu, pw = topology.positions[u], topology.positions[w]
        planar = math.hypot(pw[0] - pu[0], pw[1] - pu[1])
        sd = staying_time(
            topology.comm_range,
            min(planar, topology.comm_range),
            topology.speeds.get(u, 0.0),
            topology.speeds.get(w, 0.0),
        )
        ratio = direction_ratio(pw, topology.positions[src], topology.positions[dst])
        weight = topology.node_weight_of(w)
        align = hop_alignment(pu, pw, topology.positions[dst])
        sigma_eff = max(sigma, SIGMA_SCORE_FLOOR)
        per_hop.append((sd, ratio, link.delivery_prob))
        node_weights.append(weight)
        mobility.append(min(sd, topology.lifetime_horizon) * weight * align / sigma_eff)
        success *= link.delivery_prob
    n_hops = len(mobility)
    # end-to-end delivery per channel use, modulated by the hop-normalized
    # mobility factors: relaying only scores higher when the direct link is
    # genuinely poor enough to pay for the extra transmissions
    score = normalized_hop_aggregate(mobility) * success / n_hops
    return PathCandidate(
        hops=tuple(hops),
        per_hop=tuple(per_hop),
        node_weights=tuple(node_weights),
        sigma_v=sigma,
        path_value=score,
    )


def enumerate_paths(
    topology: TopologySnapshot, source, destination, max_hops: int
) -> list:
    """All loop-free source->destination paths of at most max_hops edges,
    in lexicographic node-id order."""
    if source == destination:
        raise ValueError("source and destination must differ")
    if max_hops < 1:
        raise ValueError("max_hops must be at least 1")
    adjacency = topology._neighbor_lists()

    found = []

    def dfs(node, path):
        if len(path) - 1 >= max_hops:
            return
        for nxt in adjacency.get(node, ()):
            if nxt in path:
                continue
            if nxt == destination:
                found.append(tuple(path + [nxt]))
            else:
                dfs(nxt, path + [nxt])

    dfs(source, [source])
    found.sort(key=lambda hops: tuple(repr(h) for h in hops))
    return [build_path_candidate(topology, hops) for hops in found]


@dataclass
class ScheduleDecision:
    """Joint routing and channel-grant assignment.

    route_assign maps (packet_id, start_slot) to the chosen PathCandidate;
    channel_assign maps (channel, slot) to the granted directed link.
    """

    route_assign: dict = field(default_factory=dict)
    channel_assign: dict = field(default_factory=dict)

    def objective(self) -> float:
        return sum(c.path_value for c in self.route_assign.values())

    def transmissions(self) -> list:
        """(link, slot, packet_id) events implied by the routing choices."""
        events = []
        for (pid, k0), cand in sorted(self.route_assign.items(), key=repr):
            for h, link in enumerate(zip(cand.hops[:-1], cand.hops[1:])):
                events.append((link, k0 + h, pid))
        return events


def hop_slots(cand: PathCandidate, start_slot: int) -> list:
    """(link, slot) pairs of a path started at start_slot, one hop per slot."""
    return [
        ((u, w), start_slot + h)
        for h, (u, w) in enumerate(zip(cand.hops[:-1], cand.hops[1:]))
    ]


def check_feasible(
    decision: ScheduleDecision,
    packets: Sequence[Packet],
    topology: TopologySnapshot,
    n_channels: int,
) -> bool:
    """Validate the three scheduling constraint families.

    (1) at most one route per packet and slot, (2) for every packet window,
    per-link usage never exceeds the channel grants the link received inside
    that window, (3) one link per channel and slot with channel indices in
    range.
    """
    by_packet = {p.id: p for p in packets}
    for (pid, k0), cand in decision.route_assign.items():
        if pid not in by_packet:
            return False
        for link, _slot in hop_slots(cand, k0):
            if link not in topology.links:
                return False
    for (channel, _slot), link in decision.channel_assign.items():
        if not 0 <= channel < n_channels:
            return False
        if link not in topology.links:
            return False

    usage: dict = {}
    for (pid, k0), cand in decision.route_assign.items():
        for link, slot in hop_slots(cand, k0):
            usage[(link, slot)] = usage.get((link, slot), 0) + 1

    grants: dict = {}
    for (_channel, slot), link in decision.channel_assign.items():
        grants[(link, slot)] = grants.get((link, slot), 0) + 1

    for packet in packets:
        window = range(packet.arrival_slot, packet.last_slot + 1)
        links = {link for (link, slot) in usage if slot in window}
        for link in links:
            used = sum(usage.get((link, k), 0) for k in window)
            granted = sum(grants.get((link, k), 0) for k in window)
            if used > granted:
                return False
    return True


def _packet_options(
    packet: Packet,
    topology: TopologySnapshot,
    horizon: int,
    max_hops: int,
) -> list:
    """(candidate, start_slot) choices completing inside window and horizon."""
    options = []
    cands = topology.candidate_paths(packet.source, packet.destination, max_hops)
    for idx, cand in enumerate(cands):
        n_hops = len(cand.hops) - 1
        for k0 in range(packet.arrival_slot, packet.last_slot - n_hops + 2):
            if k0 + n_hops - 1 <= min(packet.last_slot, horizon - 1):
                options.append((idx, cand, k0))
    return options


def _grants_for(transmissions: Iterable) -> dict | None:
    """Assign channels per slot (one link per channel-slot, one grant per
    link-slot); None when some slot needs more channels than allowed."""
    per_slot: dict = {}
    for link, slot in transmissions:
        per_slot.setdefault(slot, []).append(link)
    channel_assign = {}
    for slot, links in per_slot.items():
        if len(set(links)) != len(links):
            return None
        for channel, link in enumerate(sorted(links, key=repr)):
            channel_assign[(channel, slot)] = link
    return channel_assign


def solve_schedule_exact(
    packets: Sequence[Packet],
    topology: TopologySnapshot,
    n_channels: int,
    horizon: int,
    max_hops: int = 3,
) -> ScheduleDecision:
    """Exhaustive maximizer of the summed path values, for small instances
    only. Ties resolve toward the lexicographically first assignment."""
    if len(packets) > EXACT_MAX_PACKETS or n_channels > EXACT_MAX_CHANNELS:
        raise ValueError("instance too large for exact search; use the greedy solver")
    if horizon > EXACT_MAX_HORIZON:
        raise ValueError("horizon too long for exact search; use the greedy solver")

    ordered = sorted(packets, key=lambda p: p.id)
    per_packet = []
    for packet in ordered:
        options = _packet_options(packet, topology, horizon, max_hops)
        if len({idx for idx, _, _ in options}) > EXACT_MAX_PATHS:
            raise ValueError("too many candidate paths for exact search")
        per_packet.append([None] + options)

    best: ScheduleDecision | None = None
    best_obj = -math.inf
    for combo in itertools.product(*per_packet):
        transmissions = []
        route_assign = {}
        ok = True
        for packet, choice in zip(ordered, combo):
            if choice is None:
                continue
            _idx, cand, k0 = choice
            events = hop_slots(cand, k0)
            transmissions.extend(events)
            route_assign[(packet.id, k0)] = cand
        slot_counts: dict = {}
        for link, slot in transmissions:
            slot_counts[slot] = slot_counts.get(slot, 0) + 1
            if slot_counts[slot] > n_channels:
                ok = False
                break
        if not ok:
            continue
        channel_assign = _grants_for(transmissions)
        if channel_assign is None:
            continue
        obj = sum(c.path_value for c in route_assign.values())
        if obj > best_obj + 1e-12:
            best_obj = obj
            best = ScheduleDecision(route_assign, channel_assign)
    return best if best is not None else ScheduleDecision()


def solve_schedule_greedy(
    packets: Sequence[Packet],
    topology: TopologySnapshot,
    n_channels: int,
    horizon: int,
    max_hops: int = 3,
) -> ScheduleDecision:
    """Deadline-first greedy assignment; always returns a feasible decision."""
    slot_load: dict = {}
    link_busy: set = set()
    decision = ScheduleDecision()

    def fits(events) -> bool:
        counts: dict = {}
        for link, slot in events:
            if (link, slot) in link_busy:
                return False
            counts[slot] = counts.get(slot, 0) + 1
            if slot_load.get(slot, 0) + counts[slot] > n_channels:
                return False
        return True

    def best_value(packet: Packet) -> float:
        cands = topology.candidate_paths(packet.source, packet.destination, max_hops)
        return cands[0].path_value if cands else 0.0

    for packet in sorted(packets, key=lambda p: (p.last_slot, -best_value(p), p.id)):
        options = _packet_options(packet, topology, horizon, max_hops)
        options.sort(key=lambda o: (-o[1].path_value, o[0], o[2]))
        for _idx, cand, k0 in options:
            events = hop_slots(cand, k0)
            if fits(events):
                decision.route_assign[(packet.id, k0)] = cand
                for link, slot in events:
                    link_busy.add((link, slot))
                    slot_load[slot] = slot_load.get(slot, 0) + 1
                break

    all_events = [
        ev for (pid, k0), cand in decision.route_assign.items()
        for ev in hop_slots(cand, k0)
    ]
    grants = _grants_for(all_events)
    decision.channel_assign = grants if grants is not None else {}
    return decision
