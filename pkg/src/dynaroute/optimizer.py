"""NSGA-II over joint control/routing genomes: feasible-first domination on
(transmission value, -control cost), fast non-dominated sorting, the combined
subtractive crowding rule, simplex-lattice reference points with niche-based
truncation, tournament selection and blend/uniform variation.

Objectives are evaluated against an immutable JointContext snapshot; all
stochastic draws come from one seeded generator so runs are reproducible.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .control import (
    PlatoonConfig,
    SafetyContext,
    feasibility_mask,
    rollout_candidates,
    trajectory_costs,
)
from .dynamics import VehicleState
from .scheduling import Packet, ScheduleDecision, _grants_for, hop_slots

BOUNDARY_SENTINEL = sys.float_info.max
INFEASIBLE_COST = 1e12


@dataclass
class GaParams:
    """Search-budget and variation knobs of the genetic loop."""

    population: int = 64
    generations: int = 100
    crossover_rate: float = 0.9
    mutation_rate: float = 0.1
    tournament_size: int = 2
    rng_seed: int = 0
    combined_crowding: bool = True
    divisions: int = 9

    def __post_init__(self):
        if self.population < 4 or self.population % 2:
            raise ValueError("population must be even and at least 4")
        for rate in (self.crossover_rate, self.mutation_rate):
            if not 0.0 <= rate <= 1.0:
                raise ValueError("rates must lie in [0, 1]")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be at least 1")
        if self.divisions < 1:
            raise ValueError("divisions must be at least 1")


@dataclass(eq=False)
class Individual:
    """One genome: per-vehicle input sequences plus per-packet path choices."""

    control_genes: np.ndarray
    routing_genes: np.ndarray
    objective_y: float = math.nan
    objective_j: float = math.nan
    feasible: bool = False
    rank: int = -1
    crowding: float = 0.0
    indicators: tuple = (0.0, 0.0, 0.0)

    def genome_key(self) -> tuple:
        return (
            tuple(int(g) for g in self.routing_genes),
            tuple(float(g) for g in self.control_genes.ravel()),
        )

    def copy(self) -> "Individual":
        return Individual(
            control_genes=self.control_genes.copy(),
            routing_genes=self.routing_genes.copy(),
        )


@dataclass(frozen=True)
class ReferencePointSet:
    points: np.ndarray
    divisions: int


@dataclass
class ControlProblem:
    """Per-vehicle ingredients of the control objective."""

    current_state: VehicleState
    reference: np.ndarray
    neighbors: list
    safety_ctx: SafetyContext | None = None


@dataclass
class JointContext:
    """Evaluation snapshot: follower control problems plus the pending packet
    set with pre-scored candidate paths and the channel budget."""

    platoon: PlatoonConfig
    problems: list
    packets: list
    candidates: list
    n_channels: int = 2
    schedule_start: int = 0
    schedule_end: int = 32
    seed_control: list = field(default_factory=list)

    @property
    def n_vehicles(self) -> int:
        return len(self.problems)

    @property
    def n_packets(self) -> int:
        return len(self.packets)

    def routing_gene_sizes(self) -> list:
        return [max(len(c), 1) for c in self.candidates]


def decode_schedule(ctx: JointContext, routing_genes: np.ndarray) -> ScheduleDecision:
    """Turn per-packet path indices into a feasible schedule.

    Packets are fitted in deadline order at their earliest workable start
    slot; one route per packet and one grant per link-slot hold by
    construction, so decoded schedules always pass the feasibility check.
    """
    decision = ScheduleDecision()
    slot_load: dict = {}
    link_busy: set = set()
    order = sorted(range(len(ctx.packets)), key=lambda i: (ctx.packets[i].last_slot, ctx.packets[i].id))
    for i in order:
        packet: Packet = ctx.packets[i]
        cands = ctx.candidates[i]
        if not cands:
            continue
        cand = cands[int(routing_genes[i]) % len(cands)]
        n_hops = len(cand.hops) - 1
        first = max(packet.arrival_slot, ctx.schedule_start)
        last_start = min(packet.last_slot - n_hops + 1, ctx.schedule_end - n_hops)
        for k0 in range(first, last_start + 1):
            events = hop_slots(cand, k0)
            ok = True
            counts: dict = {}
            for link, slot in events:
                if (link, slot) in link_busy:
                    ok = False
                    break
                counts[slot] = counts.get(slot, 0) + 1
                if slot_load.get(slot, 0) + counts[slot] > ctx.n_channels:
                    ok = False
                    break
            if ok:
                decision.route_assign[(packet.id, k0)] = cand
                for link, slot in events:
                    link_busy.add((link, slot))
                    slot_load[slot] = slot_load.get(slot, 0) + 1
                break
    grants = _grants_for(
        ev for (pid, k0), cand in decision.route_assign.items() for ev in hop_slots(cand, k0)
    )
    decision.channel_assign = grants or {}
    return decision


def evaluate_population(individuals: Sequence[Individual], ctx: JointContext) -> None:
    """Score genomes in place, batching the control rollouts per vehicle."""
    n = len(individuals)
    if n == 0:
        return
    decode_ok = np.ones(n, dtype=bool)
    for i, ind in enumerate(individuals):
        try:
            decision = decode_schedule(ctx, ind.routing_genes)
            ind.objective_y = decision.objective()
        except Exception:
            decode_ok[i] = False
            ind.objective_y = 0.0

    cfg = ctx.platoon
    costs = np.zeros(n)
    feasible = np.ones(n, dtype=bool)
    effort = np.zeros(n)
    speed_dev = np.zeros(n)
    pos_dev = np.zeros(n)
    for v, problem in enumerate(ctx.problems):
        inputs = np.stack([ind.control_genes[v] for ind in individuals])
        states = rollout_candidates(problem.current_state, inputs, cfg.dt)
        feasible &= feasibility_mask(states, inputs, cfg, problem.safety_ctx, None)
        costs += trajectory_costs(states, inputs, problem.reference, problem.neighbors, cfg)
        effort += np.abs(inputs).mean(axis=(1, 2))
        speed_dev += np.abs(states[:, :, 3] - problem.reference[None, :, 3]).mean(axis=1)
        pos_dev += np.abs(states[:, :, 0] - problem.reference[None, :, 0]).mean(axis=1)

    for i, ind in enumerate(individuals):
        if not decode_ok[i]:
            ind.objective_j = INFEASIBLE_COST
            ind.feasible = False
            continue
        ind.objective_j = float(costs[i])
        ind.feasible = bool(feasible[i])
        ind.indicators = (float(effort[i]), float(speed_dev[i]), float(pos_dev[i]))


def evaluate(individual: Individual, ctx: JointContext) -> tuple:
    """Score one genome: schedule value, control cost and feasibility."""
    evaluate_population([individual], ctx)
    return individual.objective_y, individual.objective_j, individual.feasible


def dominates(a: Individual, b: Individual) -> bool:
    """Feasible-first Pareto dominance on (Y, -J)."""
    if a.feasible != b.feasible:
        return a.feasible
    no_worse = a.objective_y >= b.objective_y and a.objective_j <= b.objective_j
    better = a.objective_y > b.objective_y or a.objective_j < b.objective_j
    return no_worse and better


def non_dominated_sort(population: Sequence[Individual]) -> list:
    """Fast non-dominated sort; assigns ranks and returns the fronts."""
    n = len(population)
    dominated_by: list = [[] for _ in range(n)]
    counts = [0] * n
    fronts = [[]]
    for p in range(n):
        for q in range(n):
            if p == q:
                continue
            if dominates(population[p], population[q]):
                dominated_by[p].append(q)
            elif dominates(population[q], population[p]):
                counts[p] += 1
        if counts[p] == 0:
            population[p].rank = 0
            fronts[0].append(p)
    i = 0
    while fronts[i]:
        nxt = []
        for p in fronts[i]:
            for q in dominated_by[p]:
                counts[q] -= 1
                if counts[q] == 0:
                    population[q].rank = i + 1
                    nxt.append(q)
        i += 1
        fronts.append(nxt)
    fronts.pop()
    return [[population[i] for i in front] for front in fronts]


def crowding_distance(front: Sequence[Individual], combined: bool = True) -> list:
    """Per-individual diversity measure inside one front.

    Distance is the normalized neighbor gap on Y, DISTANCE the same on -J;
    the default combines them by subtraction, the fallback adds them.
    Boundary individuals on either objective get the largest finite sentinel.
    """
    n = len(front)
    if n == 0:
        raise ValueError("front must be non-empty")
    dist_y = [0.0] * n
    dist_j = [0.0] * n
    boundary = [False] * n

    for values, out in (
        ([ind.objective_y for ind in front], dist_y),
        ([-ind.objective_j for ind in front], dist_j),
    ):
        order = sorted(range(n), key=lambda i: values[i])
        boundary[order[0]] = boundary[order[-1]] = True
        span = values[order[-1]] - values[order[0]]
        if span < 1e-12:
            continue
        for pos in range(1, n - 1):
            i = order[pos]
            out[i] = (values[order[pos + 1]] - values[order[pos - 1]]) / span

    result = []
    for i in range(n):
        if boundary[i]:
            d = BOUNDARY_SENTINEL
        elif combined:
            d = dist_y[i] - dist_j[i]
        else:
            d = dist_y[i] + dist_j[i]
        front[i].crowding = d
        result.append(d)
    return result


def reference_points(divisions: int) -> ReferencePointSet:
    """Simplex-lattice anchors over the three search indicators."""
    if divisions < 1:
        raise ValueError("divisions must be at least 1")
    pts = []
    for i in range(divisions + 1):
        for j in range(divisions + 1 - i):
            k = divisions - i - j
            pts.append((i / divisions, j / divisions, k / divisions))
    return ReferencePointSet(points=np.array(pts), divisions=divisions)


def _nearest_niche(vec: np.ndarray, points: np.ndarray) -> int:
    """Index of the reference direction with the smallest perpendicular
    distance to vec."""
    norms = np.maximum(np.linalg.norm(points, axis=1), 1e-12)
    proj = (vec[None, :] * points).sum(axis=1) / norms
    perp = np.linalg.norm(vec[None, :] - proj[:, None] * points / norms[:, None], axis=1)
    return int(np.argmin(perp))


def _niche_truncate(
    front: Sequence[Individual],
    k: int,
    ref_points: ReferencePointSet,
    already_selected: Sequence[Individual],
) -> list:
    """Pick k members of the overflowing front, favoring under-covered
    reference directions, then higher crowding; deterministic."""
    if k <= 0:
        return []
    everyone = list(already_selected) + list(front)
    coords = np.array([ind.indicators for ind in everyone], dtype=float)
    span = coords.max(axis=0) - coords.min(axis=0)
    span[span < 1e-12] = 1.0
    normed = (coords - coords.min(axis=0)) / span
    niches = [_nearest_niche(normed[i], ref_points.points) for i in range(len(everyone))]

    niche_count: dict = {}
    for niche in niches[: len(already_selected)]:
        niche_count[niche] = niche_count.get(niche, 0) + 1
    member_niches = niches[len(already_selected) :]

    chosen: list = []
    remaining = set(range(len(front)))
    while len(chosen) < k and remaining:
        ranked = sorted(
            (niche_count.get(member_niches[i], 0), -front[i].crowding, i)
            for i in remaining
        )
        pick = ranked[0][2]
        remaining.discard(pick)
        chosen.append(front[pick])
        niche_count[member_niches[pick]] = niche_count.get(member_niches[pick], 0) + 1
    return chosen


def tournament_select(
    population: Sequence[Individual], k: int, rng: np.random.Generator
) -> Individual:
    """Best of k draws without replacement, by rank then crowding."""
    if not population:
        raise ValueError("population must be non-empty")
    k = min(k, len(population))
    picks = rng.choice(len(population), size=k, replace=False)
    best = population[int(picks[0])]
    for idx in picks[1:]:
        cand = population[int(idx)]
        if (cand.rank, -cand.crowding) < (best.rank, -best.crowding):
            best = cand
    return best


def crossover_mutate(
    parent_a: Individual,
    parent_b: Individual,
    params: GaParams,
    rng: np.random.Generator,
    control_bounds: tuple | None = None,
    routing_sizes: Sequence[int] | None = None,
) -> tuple:
    """Blend crossover + bounded Gaussian mutation on control genes; uniform
    crossover + index resampling on routing genes."""
    if parent_a.control_genes.shape != parent_b.control_genes.shape:
        raise ValueError("parents must share the genome shape")
    child_a, child_b = parent_a.copy(), parent_b.copy()

    if rng.random() < params.crossover_rate:
        beta = rng.random(size=parent_a.control_genes.shape)
        child_a.control_genes = beta * parent_a.control_genes + (1 - beta) * parent_b.control_genes
        child_b.control_genes = (1 - beta) * parent_a.control_genes + beta * parent_b.control_genes
        swap = rng.random(size=parent_a.routing_genes.shape) < 0.5
        child_a.routing_genes = np.where(swap, parent_b.routing_genes, parent_a.routing_genes)
        child_b.routing_genes = np.where(swap, parent_a.routing_genes, parent_b.routing_genes)

    if control_bounds is not None:
        r_bound, a_bound = control_bounds
    else:
        r_bound = a_bound = None
    for child in (child_a, child_b):
        if params.mutation_rate > 0 and child.control_genes.size:
            mask = rng.random(size=child.control_genes.shape) < params.mutation_rate
            noise = rng.normal(size=child.control_genes.shape)
            if r_bound is not None:
                noise[..., 0] *= 0.25 * r_bound
                noise[..., 1] *= 0.25 * a_bound
            else:
                noise *= 0.1
            child.control_genes = child.control_genes + mask * noise
        if r_bound is not None:
            child.control_genes[..., 0] = np.clip(child.control_genes[..., 0], -r_bound, r_bound)
            child.control_genes[..., 1] = np.clip(child.control_genes[..., 1], -a_bound, a_bound)
        if params.mutation_rate > 0 and routing_sizes is not None and child.routing_genes.size:
            for i, size in enumerate(routing_sizes):
                if rng.random() < params.mutation_rate:
                    child.routing_genes[i] = int(rng.integers(0, size))
    return child_a, child_b


def random_individual(ctx: JointContext, rng: np.random.Generator) -> Individual:
    cfg = ctx.platoon
    control = np.empty((ctx.n_vehicles, cfg.horizon, 2))
    control[..., 0] = rng.uniform(-cfg.comfort_r, cfg.comfort_r, size=control[..., 0].shape)
    control[..., 1] = rng.uniform(-cfg.comfort_a, cfg.comfort_a, size=control[..., 1].shape)
    sizes = ctx.routing_gene_sizes()
    routing = np.array([rng.integers(0, s) for s in sizes], dtype=int)
    return Individual(control_genes=control, routing_genes=routing)


def _initial_population(ctx: JointContext, params: GaParams, rng) -> list:
    population = []
    sizes = ctx.routing_gene_sizes()
    greedy_routing = np.zeros(len(sizes), dtype=int)
    zero_control = np.zeros((ctx.n_vehicles, ctx.platoon.horizon, 2))
    population.append(Individual(control_genes=zero_control, routing_genes=greedy_routing.copy()))
    for genes in ctx.seed_control:
        population.append(
            Individual(control_genes=np.asarray(genes, dtype=float).copy(),
                       routing_genes=greedy_routing.copy())
        )
        if len(population) >= params.population:
            break
    while len(population) < params.population:
        population.append(random_individual(ctx, rng))
    return population[: params.population]


def scalarize_select(front: Sequence[Individual]) -> Individual:
    """Final pick: argmax of Y - J, ties to lower J then lexicographic genome."""
    if not front:
        raise ValueError("front must be non-empty")
    best_scalar = max(ind.objective_y - ind.objective_j for ind in front)
    tied = [ind for ind in front if ind.objective_y - ind.objective_j == best_scalar]
    if len(tied) == 1:
        return tied[0]
    best_j = min(ind.objective_j for ind in tied)
    tied = [ind for ind in tied if ind.objective_j == best_j]
    return min(tied, key=Individual.genome_key) if len(tied) > 1 else tied[0]


def evolve(ctx: JointContext, params: GaParams, stats: dict | None = None) -> list:
    """Elitist generational loop; returns the final first front.

    The best feasible scalarized individual is explicitly protected during
    truncation, so the best known Y - J never regresses between generations.
    """
    rng = np.random.default_rng(np.random.SeedSequence(params.rng_seed))
    ref_pts = reference_points(params.divisions)
    population = _initial_population(ctx, params, rng)
    evaluate_population(population, ctx)
    fronts = non_dominated_sort(population)
    for front in fronts:
        crowding_distance(front, combined=params.combined_crowding)

    if stats is not None:
        stats.setdefault("best_y_minus_j", [])
        stats.setdefault("best_j", [])

    bounds = (ctx.platoon.comfort_r, ctx.platoon.comfort_a)
    sizes = ctx.routing_gene_sizes()

    def best_of(pop):
        feas = [i for i in pop if i.feasible] or list(pop)
        return scalarize_select(feas)

    champion = best_of(population)
    for _gen in range(params.generations):
        offspring = []
        while len(offspring) < params.population:
            pa = tournament_select(population, params.tournament_size, rng)
            pb = tournament_select(population, params.tournament_size, rng)
            ca, cb = crossover_mutate(pa, pb, params, rng, bounds, sizes)
            offspring.extend([ca, cb])
        offspring = offspring[: params.population]
        evaluate_population(offspring, ctx)

        merged = population + offspring
        fronts = non_dominated_sort(merged)
        next_pop: list = []
        for front in fronts:
            crowding_distance(front, combined=params.combined_crowding)
            if len(next_pop) + len(front) <= params.population:
                next_pop.extend(front)
            else:
                next_pop.extend(
                    _niche_truncate(front, params.population - len(next_pop), ref_pts, next_pop)
                )
                break
        candidate_champion = best_of(merged)
        if _scalarized(candidate_champion) > _scalarized(champion) or (
            champion.feasible is False and candidate_champion.feasible
        ):
            champion = candidate_champion
        if champion not in next_pop:
            next_pop[-1] = champion
        population = next_pop
        fronts = non_dominated_sort(population)
        for front in fronts:
            crowding_distance(front, combined=params.combined_crowding)
        if stats is not None:
            stats["best_y_minus_j"].append(_scalarized(best_of(population)))
            stats["best_j"].append(min(i.objective_j for i in population))
    return fronts[0] if population else []


def _scalarized(ind: Individual) -> float:
    return ind.objective_y - ind.objective_j
