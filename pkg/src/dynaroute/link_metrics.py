"""Node- and link-level transmission metrics and the composite path value
used to rank candidate routes.

Per-hop values combine by product: the delivery probabilities multiply along
a path and the dimensionless factors act as discounts. The aggregation is
isolated in aggregate_hop_values so alternates are one-line swaps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

# Link-lifetime cap and the relative-speed floor below which it applies.
SD_CAP = 1000.0
SPEED_EPS = 1e-3

# Floor for the path speed dispersion (all-equal speeds).
SIGMA_EPS = 1e-3


@dataclass
class NodeStatus:
    """Queue occupancy and relaying history of one node."""

    queue_len: int = 0
    queue_max: int = 5
    relayed_ok: int = 0
    relay_received: int = 0


@dataclass(frozen=True)
class MetricWeights:
    """Weights of the three node-characteristic terms."""

    kappa1: float = 0.4
    kappa2: float = 0.3
    kappa3: float = 0.3

    def __post_init__(self):
        if min(self.kappa1, self.kappa2, self.kappa3) < 0:
            raise ValueError("metric weights must be nonnegative")


@dataclass
class PathCandidate:
    """Ordered relay sequence with its per-hop metrics and composite value.

    per_hop holds one (staying_time, direction_ratio, delivery_prob) triple
    per hop, aligned with node_weights (the weight of each receiving node).
    """

    hops: tuple
    per_hop: tuple
    node_weights: tuple
    sigma_v: float
    path_value: float

    def __post_init__(self):
        if len(self.hops) < 2 or len(set(self.hops)) != len(self.hops):
            raise ValueError(f"hops must be >= 2 distinct nodes, got {self.hops}")
        if self.path_value < 0:
            raise ValueError("path_value must be nonnegative")

    @property
    def delivery_prob(self) -> float:
        from .channel import multi_slot_success_prob

        return multi_slot_success_prob(p for _, _, p in self.per_hop)


def vehicle_status(q: int, q_max: int) -> int:
    """1 while the processing queue has room (q <= q_max), else 0."""
    if q < 0 or q_max <= 0:
        raise ValueError("queue length must be >= 0 and queue_max > 0")
    return 1 if q <= q_max else 0


def neighbor_transmit_count(statuses: Sequence[int]) -> int:
    """Number of neighbors currently able to take a transfer."""
    return int(sum(statuses))


def relay_reliability(relayed_ok: int, relay_received: int) -> float:
    """Fraction of relay tasks completed; 1 with no history (benefit of the doubt)."""
    if relayed_ok > relay_received:
        raise ValueError("relayed_ok cannot exceed relay_received")
    if relay_received == 0:
        return 1.0
    return relayed_ok / relay_received


def staying_time(r_v: float, delta_p: float, v_i: float, v_j: float) -> float:
    """Expected remaining link lifetime in seconds, capped at SD_CAP.

    Near-equal speeds would give an infinite lifetime; the cap keeps the
    ordering while staying finite.
    """
    if delta_p > r_v:
        raise ValueError(f"separation {delta_p} exceeds communication range {r_v}")
    dv = abs(v_i - v_j)
    if dv < SPEED_EPS:
        return SD_CAP
    return min((r_v - delta_p) / dv, SD_CAP)


def direction_ratio(
    p_j: Sequence[float], p_s: Sequence[float], p_z: Sequence[float]
) -> float:
    """Remaining-distance ratio |z - j| / |z - s|; smaller means the relay
    is closer to the destination."""
    denom = math.hypot(p_z[0] - p_s[0], p_z[1] - p_s[1])
    if denom == 0.0:
        raise ValueError("source and destination coincide")
    return math.hypot(p_z[0] - p_j[0], p_z[1] - p_j[1]) / denom


def direction_progress(ratio: float) -> float:
    """Larger-is-better progress score derived from the remaining-distance
    ratio; relays beyond the source score 0."""
    return 1.0 - min(max(ratio, 0.0), 1.0)


def hop_alignment(
    p_u: Sequence[float], p_w: Sequence[float], p_z: Sequence[float]
) -> float:
    """How much of the hop u->w is spent moving toward the destination z.

    1 for a hop straight at the destination, 0 for sideways or backward
    relays; unlike the end-to-end progress ratio this does not punish short
    hops, which is what "matching movement direction" needs.
    """
    hop_len = math.hypot(p_w[0] - p_u[0], p_w[1] - p_u[1])
    if hop_len == 0.0:
        return 0.0
    gained = math.hypot(p_z[0] - p_u[0], p_z[1] - p_u[1]) - math.hypot(
        p_z[0] - p_w[0], p_z[1] - p_w[1]
    )
    return min(max(gained / hop_len, 0.0), 1.0)


def velocity_variance(velocities: Sequence[float]) -> float:
    """Population standard deviation of the path speeds."""
    if not velocities:
        raise ValueError("velocities must be non-empty")
    mean = sum(velocities) / len(velocities)
    return math.sqrt(sum((v - mean) ** 2 for v in velocities) / len(velocities))


def node_weight(
    status: int,
    n_path: int,
    reliability: float,
    weights: MetricWeights,
    can_transmit: bool,
) -> float:
    """Composite node weight; a node that cannot transmit gets weight 1."""
    if not can_transmit:
        return 1.0
    return (
        weights.kappa1 * status
        + weights.kappa2 * n_path
        + weights.kappa3 * reliability
    )


def hop_value(
    staying: float,
    weight: float,
    d_ratio: float,
    sigma_v: float,
    delivery_prob: float,
) -> float:
    """Single-hop route value: lifetime x node weight x direction progress,
    discounted by speed dispersion and delivery probability."""
    sigma = max(sigma_v, SIGMA_EPS)
    return staying * weight * direction_progress(d_ratio) / sigma * delivery_prob


def aggregate_hop_values(values: Sequence[float]) -> float:
    """Combine per-hop values along a path (product aggregation)."""
    total = 1.0
    for v in values:
        total *= v
    return total


def normalized_hop_aggregate(values: Sequence[float]) -> float:
    """Hop-count-normalized combination: the geometric mean of the hop values.

    The raw product grows by orders of magnitude per added hop once the
    lifetime cap and dispersion floor kick in (near-equal platoon speeds),
    so a product ranking would always prefer the longest admissible path;
    the geometric mean keeps scores comparable across hop counts.
    """
    if not values:
        return 0.0
    total = aggregate_hop_values(values)
    if total <= 0:
        return 0.0
    return total ** (1.0 / len(values))


def path_value(
    hop_metrics: Sequence[tuple],
    node_weights: Sequence[float],
    sigma_v: float,
    delivery_probs: Sequence[float],
) -> float:
    """Composite value of a full path.

    hop_metrics holds (staying_time, direction_ratio) per hop, aligned with
    node_weights and delivery_probs.
    """
    if not (len(hop_metrics) == len(node_weights) == len(delivery_probs)):
        raise ValueError("per-hop sequences must have equal length")
    if sigma_v < 0:
        raise ValueError("sigma_v must be nonnegative")
    if any(not 0.0 <= p <= 1.0 for p in delivery_probs):
        raise ValueError("delivery probabilities must lie in [0, 1]")
    if not hop_metrics:
        return 0.0
    values = [
        hop_value(sd, w, d, sigma_v, p)
        for (sd, d), w, p in zip(hop_metrics, node_weights, delivery_probs)
    ]
    return aggregate_hop_values(values)
