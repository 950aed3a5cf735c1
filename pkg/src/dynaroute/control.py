"""Per-vehicle distributed MPC: stage cost, self-deviation constraint, lossy
state propagation, a candidate-search solver and the packet-loss fallback.

The solver evaluates a candidate input set (shifted previous solution,
deterministic safety candidates, seeded Gaussian perturbations) against box
bounds, the discrete CBF condition, the velocity-cone condition and the
self-deviation constraint, then picks the cheapest feasible candidate. All
candidate math is vectorized over the candidate axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import (
    ControlInput,
    ManeuverMode,
    SafetyParams,
    VehicleState,
    clamp_input,
    wrap_angle,
)

STATE_DIM = 4
INPUT_DIM = 2


def default_a_mat(dt: float) -> np.ndarray:
    """Position/speed chain of the heading-zero linearization."""
    a = np.eye(STATE_DIM)
    a[0, 3] = dt
    return a


def default_f_mat(dt: float) -> np.ndarray:
    f = np.zeros((STATE_DIM, INPUT_DIM))
    f[2, 0] = dt
    f[3, 1] = dt
    return f


@dataclass
class PlatoonConfig:
    """Horizon, cost weights, state-update matrices and box bounds of the
    per-vehicle controller.

    comfort_r / comfort_a bound the candidate search (ride-comfort envelope);
    r_max / a_max remain the hard actuator limits used by clamp_input.
    """

    horizon: int = 10
    dt: float = 0.1
    desired_gap: float = 10.0
    weight_r: float = 0.2
    weight_f: float = 0.5
    weight_g: float = 1.0
    gamma: float = 1.0
    a_mat: np.ndarray | None = None
    f_mat: np.ndarray | None = None
    v_min: float = 0.0
    v_max: float = 40.0
    psi_min: float = -math.pi / 2
    psi_max: float = math.pi / 2
    r_min: float = -0.5
    r_max: float = 0.5
    a_min: float = -2.5
    a_max: float = 2.5
    n_candidates: int = 64
    comfort_r: float = 0.1
    comfort_a: float = 1.0

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if min(self.weight_r, self.weight_f, self.weight_g) < 0:
            raise ValueError("cost weights must be nonnegative")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.a_min >= self.a_max or self.v_min >= self.v_max:
            raise ValueError("box bounds must be ordered")
        if self.a_mat is None:
            self.a_mat = default_a_mat(self.dt)
        else:
            self.a_mat = np.asarray(self.a_mat, dtype=float)
        if self.f_mat is None:
            self.f_mat = default_f_mat(self.dt)
        else:
            self.f_mat = np.asarray(self.f_mat, dtype=float)
        self.comfort_r = min(self.comfort_r, self.r_max)
        self.comfort_a = min(self.comfort_a, self.a_max)


def state_vector(state: VehicleState) -> np.ndarray:
    return np.array([state.px, state.py, state.psi, state.v], dtype=float)


def state_from_vector(vec: Sequence[float]) -> VehicleState:
    return VehicleState(float(vec[0]), float(vec[1]), float(vec[2]), float(vec[3]))


@dataclass(frozen=True)
class PredictedTrajectory:
    """Solver output: states[0] is the measured current state, followed by
    horizon predicted states under the paired inputs."""

    states: tuple
    inputs: tuple

    def __post_init__(self):
        if len(self.states) != len(self.inputs) + 1:
            raise ValueError("need exactly one more state than inputs")

    @property
    def horizon(self) -> int:
        return len(self.inputs)

    def state_array(self) -> np.ndarray:
        return np.array([state_vector(s) for s in self.states])


@dataclass
class NeighborRecord:
    """Last received state of one neighbor plus the formation offset the ego
    vehicle keeps relative to it (desired ego_state - neighbor_state)."""

    state: VehicleState
    slot: int
    delivered: bool
    offset: np.ndarray
    is_reference_anchor: bool = False


@dataclass
class NeighborView:
    """Per-neighbor communication memory; stale entries keep the last
    delivered state. now tracks the consumer's current slot so predictions
    can compensate for record staleness."""

    records: dict = field(default_factory=dict)
    now: int = 0

    def any_delivered(self) -> bool:
        return any(rec.delivered for rec in self.records.values())

    def mark_slot_start(self) -> None:
        for rec in self.records.values():
            rec.delivered = False

    def receive(self, node, state: VehicleState, slot: int) -> None:
        rec = self.records[node]
        if slot < rec.slot:
            raise ValueError("received state older than current record")
        rec.state = state
        rec.slot = slot
        rec.delivered = True

    def lag_of(self, rec: NeighborRecord) -> int:
        return max(0, self.now - rec.slot)


def predict_neighbor(
    rec: NeighborRecord, view: NeighborView, horizon: int, dt: float
) -> np.ndarray:
    """Constant-velocity prediction of a neighbor over slots now..now+horizon,
    advancing the stored state by its staleness first."""
    lag = view.lag_of(rec)
    return extrapolate_states(rec.state, horizon + lag, dt)[lag:]


@dataclass
class SafetyContext:
    """Obstacle predictions the feasibility check runs against.

    predecessor: (T+1, 4) predicted states of the CBF partner, or None.
    cone_partners: predicted states of vehicles checked with the velocity
    cone (laterally separated traffic; the predecessor is governed by the
    barrier function instead).
    """

    params: SafetyParams
    mode: ManeuverMode = ManeuverMode.FOLLOWING
    predecessor: np.ndarray | None = None
    cone_partners: tuple = ()


def extrapolate_states(state: VehicleState, horizon: int, dt: float) -> np.ndarray:
    """Constant-speed, constant-heading prediction; rows are slots 0..horizon."""
    k = np.arange(horizon + 1, dtype=float)
    out = np.empty((horizon + 1, STATE_DIM))
    out[:, 0] = state.px + state.v * math.cos(state.psi) * dt * k
    out[:, 1] = state.py + state.v * math.sin(state.psi) * dt * k
    out[:, 2] = state.psi
    out[:, 3] = state.v
    return out


def stage_cost(
    inp: ControlInput,
    predicted_state: VehicleState,
    reference_state: VehicleState,
    neighbor_states: Sequence[tuple],
    config: PlatoonConfig,
) -> float:
    """One-slot cost: input effort + reference deviation + formation error.

    neighbor_states holds (neighbor_state, desired_offset) pairs with the
    offset expressed in state space.
    """
    u = math.hypot(inp.r, inp.a)
    pred = state_vector(predicted_state)
    ref_err = float(np.linalg.norm(pred - state_vector(reference_state)))
    gap_err = 0.0
    for neighbor, offset in neighbor_states:
        nvec = neighbor if isinstance(neighbor, np.ndarray) else state_vector(neighbor)
        gap_err += float(np.linalg.norm(pred - nvec - np.asarray(offset, dtype=float)))
    return config.weight_r * u + config.weight_f * ref_err + config.weight_g * gap_err


def self_deviation_ok(
    new_traj: PredictedTrajectory,
    old_traj: PredictedTrajectory,
    gamma: float,
    config: PlatoonConfig,
) -> bool:
    """New predictions may drift from the previous plan by at most 1/gamma of
    the previous slot-shifted drift."""
    if new_traj.horizon != old_traj.horizon:
        raise ValueError("trajectories must share the horizon")
    new = new_traj.state_array()
    old = old_traj.state_array()
    dev = config.weight_g * np.linalg.norm(new - old, axis=1)
    t = new_traj.horizon
    return gamma * float(dev[1:t].sum()) <= float(dev[0 : t - 1].sum()) + 1e-12


def propagate_state(
    x_i: np.ndarray,
    u_i: np.ndarray,
    x_j_last: np.ndarray,
    delta: int,
    config: PlatoonConfig,
) -> np.ndarray:
    """Lossy affine state update x+ = A x + F u + delta * (x_j - x_i)."""
    if delta not in (0, 1):
        raise ValueError("delta must be 0 or 1")
    x_i = np.asarray(x_i, dtype=float)
    u_i = np.asarray(u_i, dtype=float)
    x_j_last = np.asarray(x_j_last, dtype=float)
    if x_i.shape != (STATE_DIM,) or u_i.shape != (INPUT_DIM,):
        raise ValueError(
            f"expected state dim {STATE_DIM} and input dim {INPUT_DIM}, "
            f"got {x_i.shape} and {u_i.shape}"
        )
    if x_j_last.shape != (STATE_DIM,):
        raise ValueError(f"neighbor state has shape {x_j_last.shape}")
    return config.a_mat @ x_i + config.f_mat @ u_i + delta * (x_j_last - x_i)


@dataclass
class DmpcSolution:
    trajectory: PredictedTrajectory
    cost: float
    infeasible_fallback: bool = False

    @property
    def first_input(self) -> ControlInput:
        return self.trajectory.inputs[0]


def rollout_candidates(current, inputs: np.ndarray, dt: float) -> np.ndarray:
    """Euler-roll candidate input sequences; returns (C, T+1, 4).

    current may be one VehicleState shared by all candidates or a (C, 4)
    array of per-candidate initial states.
    """
    cands, horizon, _ = inputs.shape
    states = np.empty((cands, horizon + 1, STATE_DIM))
    if isinstance(current, VehicleState):
        states[:, 0, :] = state_vector(current)
    else:
        states[:, 0, :] = np.asarray(current, dtype=float)
    for k in range(horizon):
        s = states[:, k, :]
        states[:, k + 1, 0] = s[:, 0] + s[:, 3] * np.cos(s[:, 2]) * dt
        states[:, k + 1, 1] = s[:, 1] + s[:, 3] * np.sin(s[:, 2]) * dt
        psi = s[:, 2] + inputs[:, k, 0] * dt
        states[:, k + 1, 2] = np.arctan2(np.sin(psi), np.cos(psi))
        states[:, k + 1, 3] = s[:, 3] + inputs[:, k, 1] * dt
    return states


def _h_series(
    ego: np.ndarray, partner: np.ndarray, params: SafetyParams, mode: ManeuverMode
) -> np.ndarray:
    """Barrier values along predicted trajectories; ego (C, T+1, 4), partner (T+1, 4)."""
    gap = np.hypot(
        partner[None, :, 0] - ego[:, :, 0], partner[None, :, 1] - ego[:, :, 1]
    )
    base = (gap - params.l_w) ** 2
    v = ego[:, :, 3]
    if mode is ManeuverMode.BRAKING:
        base = base + v * params.tau1 + v * v / (2.0 * params.a_max)
    elif mode is ManeuverMode.LANE_CHANGE:
        d2 = v * params.tau2 + 0.5 * params.a_max * params.tau2**2
        d3 = ((v + params.a_max * params.tau3) ** 2 - v * v) / (2.0 * params.a_max)
        base = base + d2 + d3
    return base - (2.0 * params.w) ** 2


def _cone_safe_mask(
    ego: np.ndarray, partner: np.ndarray, d_min: float
) -> np.ndarray:
    """Velocity-cone safety per candidate against one partner trajectory."""
    rx = partner[None, :, 0] - ego[:, :, 0]
    ry = partner[None, :, 1] - ego[:, :, 1]
    dist = np.hypot(rx, ry)
    vx = ego[:, :, 3] * np.cos(ego[:, :, 2]) - partner[None, :, 3] * np.cos(partner[None, :, 2])
    vy = ego[:, :, 3] * np.sin(ego[:, :, 2]) - partner[None, :, 3] * np.sin(partner[None, :, 2])
    speed = np.hypot(vx, vy)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = np.clip((vx * rx + vy * ry) / (speed * dist), -1.0, 1.0)
        lam = np.arccos(cosang)
        beta = np.arcsin(np.clip(d_min / dist, -1.0, 1.0))
    no_approach = speed <= 1e-9
    safe = np.where(no_approach, True, lam >= beta)
    safe = np.where(dist < d_min, False, safe)
    return safe.all(axis=1)


def feasibility_mask(
    states: np.ndarray,
    inputs: np.ndarray,
    config: PlatoonConfig,
    safety_ctx: SafetyContext | None,
    deviation_ctx: tuple | None,
) -> np.ndarray:
    """Box bounds + CBF + velocity cone + self-deviation, per candidate.

    deviation_ctx is (reference, budget): candidates whose gamma-scaled
    reference deviation over slots 1..T-1 exceeds the previous plan's budget
    are rejected (the contraction form of the self-deviation constraint).
    """
    ok = np.ones(states.shape[0], dtype=bool)
    ok &= (inputs[:, :, 0] >= config.r_min - 1e-9).all(axis=1)
    ok &= (inputs[:, :, 0] <= config.r_max + 1e-9).all(axis=1)
    ok &= (inputs[:, :, 1] >= config.a_min - 1e-9).all(axis=1)
    ok &= (inputs[:, :, 1] <= config.a_max + 1e-9).all(axis=1)
    ok &= (states[:, :, 3] >= config.v_min - 1e-9).all(axis=1)
    ok &= (states[:, :, 3] <= config.v_max + 1e-9).all(axis=1)
    ok &= (states[:, :, 2] >= config.psi_min - 1e-9).all(axis=1)
    ok &= (states[:, :, 2] <= config.psi_max + 1e-9).all(axis=1)
    if safety_ctx is not None:
        params = safety_ctx.params
        if safety_ctx.predecessor is not None:
            h = _h_series(states, safety_ctx.predecessor, params, safety_ctx.mode)
            ok &= (h[:, 1:] - h[:, :-1] >= -params.alpha * h[:, :-1] - 1e-9).all(axis=1)
        for partner in safety_ctx.cone_partners:
            ok &= _cone_safe_mask(states, partner, params.cone_radius)
    if deviation_ctx is not None:
        reference, budget = deviation_ctx
        t = states.shape[1] - 1
        dev = config.weight_g * np.linalg.norm(
            states[:, 1:t, :] - reference[None, 1:t, :], axis=2
        )
        ok &= config.gamma * dev.sum(axis=1) <= budget + 1e-9
    return ok


def reference_deviation_budget(
    prev: PredictedTrajectory, reference: np.ndarray, config: PlatoonConfig
) -> float:
    """Allowed reference deviation for the next plan: the slot-aligned
    previous plan's deviation from the current reference over T-1 slots."""
    old = prev.state_array()
    t = prev.horizon
    aligned = np.vstack([old[1:], old[-1:]])
    dev = config.weight_g * np.linalg.norm(
        aligned[0 : t - 1] - reference[0 : t - 1], axis=1
    )
    return float(dev.sum())


def trajectory_costs(
    states: np.ndarray,
    inputs: np.ndarray,
    reference: np.ndarray,
    neighbors: Sequence[tuple],
    config: PlatoonConfig,
) -> np.ndarray:
    cost = config.weight_r * np.hypot(inputs[:, :, 0], inputs[:, :, 1]).sum(axis=1)
    cost += config.weight_f * np.linalg.norm(
        states[:, 1:, :] - reference[None, 1:, :], axis=2
    ).sum(axis=1)
    for pred, offset in neighbors:
        target = pred[None, 1:, :] + np.asarray(offset, dtype=float)[None, None, :]
        cost += config.weight_g * np.linalg.norm(states[:, 1:, :] - target, axis=2).sum(
            axis=1
        )
    return cost


def shift_solution(prev: PredictedTrajectory) -> np.ndarray:
    """Warm start: drop the consumed first input and repeat the last one."""
    arr = np.array([[i.r, i.a] for i in prev.inputs])
    return np.vstack([arr[1:], arr[-1:]])


def formation_feedback_input(
    current_state: VehicleState, reference: np.ndarray, config: PlatoonConfig
) -> tuple[float, float]:
    """Proportional pull toward the reference point one slot ahead, clamped
    to the comfort envelope; shared warm start of the solver and the GA."""
    ref1 = reference[1]
    a_fb = 0.3 * (ref1[0] - current_state.px - current_state.v * config.dt) + 0.8 * (
        ref1[3] - current_state.v
    )
    r_fb = -0.8 * (current_state.py - ref1[1]) - 1.5 * wrap_angle(current_state.psi)
    return (
        float(np.clip(r_fb, -config.comfort_r, config.comfort_r)),
        float(np.clip(a_fb, -config.comfort_a, config.comfort_a)),
    )


def solve_dmpc(
    current_state: VehicleState,
    neighbor_view: NeighborView,
    prev_solution: PredictedTrajectory | None,
    safety_ctx: SafetyContext | None,
    config: PlatoonConfig,
    rng: np.random.Generator,
) -> DmpcSolution:
    """Candidate-search receding-horizon solve.

    Candidates: shifted previous solution, zero input, max-brake,
    formation-feedback, and seeded Gaussian perturbations around the first
    two. Returns the cheapest feasible candidate; when nothing is feasible,
    the max-brake sequence is returned flagged as infeasible fallback.
    """
    t, dt = config.horizon, config.dt

    anchor = None
    neighbors = []
    for rec in neighbor_view.records.values():
        pred = predict_neighbor(rec, neighbor_view, t, dt)
        neighbors.append((pred, rec.offset))
        if rec.is_reference_anchor:
            anchor = (pred, rec.offset)
    if anchor is not None:
        reference = anchor[0] + np.asarray(anchor[1], dtype=float)[None, :]
    else:
        reference = extrapolate_states(current_state, t, dt)

    base = np.zeros((t, INPUT_DIM))
    if prev_solution is not None:
        base = shift_solution(prev_solution)

    # formation feedback held constant over the horizon
    feedback = np.tile(formation_feedback_input(current_state, reference, config), (t, 1))

    brake = np.tile([0.0, -config.comfort_a], (t, 1))
    deterministic = np.stack([base, np.zeros((t, INPUT_DIM)), brake, feedback])

    n_samples = max(config.n_candidates - len(deterministic), 0)
    noise = rng.normal(size=(n_samples, t, INPUT_DIM))
    noise[:, :, 0] *= 0.25 * config.comfort_r
    noise[:, :, 1] *= 0.35 * config.comfort_a
    centers = np.where(
        (np.arange(n_samples) % 2 == 0)[:, None, None], base[None], feedback[None]
    )
    sampled = centers + noise

    inputs = np.concatenate([deterministic, sampled], axis=0)
    inputs[:, :, 0] = np.clip(inputs[:, :, 0], -config.comfort_r, config.comfort_r)
    inputs[:, :, 1] = np.clip(inputs[:, :, 1], -config.comfort_a, config.comfort_a)

    states = rollout_candidates(current_state, inputs, dt)
    deviation_ctx = None
    if prev_solution is not None:
        budget = reference_deviation_budget(prev_solution, reference, config)
        deviation_ctx = (reference, budget)
    feasible = feasibility_mask(states, inputs, config, safety_ctx, deviation_ctx)
    costs = trajectory_costs(states, inputs, reference, neighbors, config)

    if not feasible.any():
        idx = 2  # max-brake fallback
        fallback = True
    else:
        costs = np.where(feasible, costs, np.inf)
        idx = int(np.argmin(costs))
        fallback = False

    chosen_inputs = tuple(
        clamp_input(ControlInput(float(r), float(a)), config.r_max, config.a_max)
        for r, a in inputs[idx]
    )
    chosen_states = (current_state,) + tuple(
        state_from_vector(states[idx, k]) for k in range(1, t + 1)
    )
    return DmpcSolution(
        trajectory=PredictedTrajectory(states=chosen_states, inputs=chosen_inputs),
        cost=float(costs[idx]) if feasible.any() else math.inf,
        infeasible_fallback=fallback,
    )


def loss_fallback_update(
    prev_u: np.ndarray,
    prev_x: np.ndarray,
    neighbor_view: NeighborView,
    config: PlatoonConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Packet-loss fallback bookkeeping for the next slot.

    Delivery failure holds the previous (u, x) pair exactly. On success the
    consensus input sums the formation errors of the delivered neighbors and
    the state follows the lossy affine update; the consensus vector's
    (heading, speed) components act as the input when one is needed.
    """
    prev_u = np.asarray(prev_u, dtype=float)
    prev_x = np.asarray(prev_x, dtype=float)
    delivered = [rec for rec in neighbor_view.records.values() if rec.delivered]
    if not delivered:
        return prev_u.copy(), prev_x.copy()
    u = np.zeros(STATE_DIM)
    coupling = np.zeros(STATE_DIM)
    for rec in delivered:
        x_j = state_vector(rec.state)
        u += x_j - prev_x + np.asarray(rec.offset, dtype=float)
        coupling += x_j - prev_x
    x_next = config.a_mat @ prev_x + config.f_mat @ u[2:4] + coupling
    return u, x_next
