"""Non-learning controllers: fixed-time Webster plans and a random policy.

The fixed-time controller measures per-phase critical flow ratios during a
short warm-up run of the scenario, sizes a cycle with Webster's formula,
splits the usable green demand-proportionally, then replays the four-phase
plan forever. Greens honour the [8,45] s actuation bounds, so the cycle is
clamped to [52,200] s including the 20 s of lost time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import N_ACTIONS
from .sim.network import N_PHASES, permits
from .sim.world import (ALL_RED_S, AMBER_S, MAX_GREEN_S, MIN_GREEN_S, SimWorld)

LOST_TIME_S = N_PHASES * (AMBER_S + ALL_RED_S)          # 20
MIN_CYCLE_S = N_PHASES * MIN_GREEN_S + LOST_TIME_S      # 52
MAX_CYCLE_S = N_PHASES * MAX_GREEN_S + LOST_TIME_S      # 200


def webster_cycle(ratios, lost_time_s: float = LOST_TIME_S) -> tuple[int, bool]:
    """Cycle seconds from critical flow ratios; flagged when oversaturated."""
    ratios = [float(y) for y in ratios]
    if len(ratios) != N_PHASES or min(ratios) < 0:
        raise ValueError("need 4 non-negative flow ratios")
    if lost_time_s <= 0:
        raise ValueError("lost time must be > 0")
    Y = sum(ratios)
    if Y >= 1.0:
        return MAX_CYCLE_S, True
    cycle = int(round((1.5 * lost_time_s + 5.0) / (1.0 - Y)))
    if cycle > MAX_CYCLE_S:
        return MAX_CYCLE_S, True        # demand too high for the longest cycle
    return max(cycle, MIN_CYCLE_S), False


def green_split(cycle: int, ratios, lost_time_s: int = LOST_TIME_S) -> list[int]:
    """Demand-proportional integer greens: every phase gets the 8 s minimum,
    the remaining budget goes out by ratio share, the rounding residual to
    the largest-ratio phase, and any excess over 45 s is redistributed."""
    ratios = [float(y) for y in ratios]
    if len(ratios) != N_PHASES or min(ratios) < 0:
        raise ValueError("need 4 non-negative flow ratios")
    budget = cycle - lost_time_s - N_PHASES * MIN_GREEN_S
    if budget < 0:
        raise ValueError(f"cycle {cycle} cannot fit minimum greens")
    Y = sum(ratios)
    if Y == 0:
        shares = [budget // N_PHASES] * N_PHASES
        shares[0] += budget - sum(shares)
    else:
        shares = [int(round(budget * y / Y)) for y in ratios]
        residual = budget - sum(shares)
        top = max(range(N_PHASES), key=lambda p: (ratios[p], -p))
        shares[top] += residual
    greens = [MIN_GREEN_S + s for s in shares]
    # cap at 45 and push any overflow to the other phases, largest ratio first
    order = sorted(range(N_PHASES), key=lambda p: (-ratios[p], p))
    for _ in range(N_PHASES):
        overflow = 0
        for p in range(N_PHASES):
            if greens[p] > MAX_GREEN_S:
                overflow += greens[p] - MAX_GREEN_S
                greens[p] = MAX_GREEN_S
        if overflow == 0:
            break
        for p in order:
            room = MAX_GREEN_S - greens[p]
            take = min(room, overflow)
            greens[p] += take
            overflow -= take
            if overflow == 0:
                break
    if sum(greens) + lost_time_s != cycle:
        raise AssertionError("green split failed to fill the cycle")
    return greens


def random_policy(mask: np.ndarray, rng) -> int:
    """Uniform draw over the allowed action indices."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (N_ACTIONS,):
        raise ValueError(f"mask must have shape ({N_ACTIONS},)")
    allowed = np.flatnonzero(mask)
    if len(allowed) == 0:
        raise ValueError("every action is masked")
    return int(rng.choice(allowed))


# ------------------------------------------------------------------ fixed time

def measure_flow_ratios(scenario, seed: int, warmup_s: int = 300) -> list[list[float]]:
    """Per-intersection critical flow ratios from a warm-up run.

    The warm-up world cycles a naive equal plan (15 s per phase). Each
    lane's entry count over the warm-up approximates its arrival flow; a
    phase's ratio is the worst lane flow it serves divided by the
    saturation flow.
    """
    from .sim.world import load_scenario
    world = load_scenario(scenario, seed)
    naive = FixedTimeController(world, [15] * N_PHASES)
    for _ in range(warmup_s):
        world.step()
        naive.drive(world)
    sat_flow = world.cfg.saturation_veh_s * warmup_s
    ratios = []
    for node in range(world.net.n):
        per_phase = []
        for phase in range(N_PHASES):
            worst = 0.0
            for lane in world.net.lanes_of(node):
                if not any(permits(phase, lane.link.arm, mv) for mv in lane.allowed):
                    continue
                flow = world.lane_entry_counts[lane.key]
                worst = max(worst, flow / sat_flow)
            per_phase.append(worst)
        ratios.append(per_phase)
    return ratios


@dataclass
class WebsterPlan:
    cycle_s: int
    greens: list[int]
    flagged: bool


def webster_plan(ratios) -> WebsterPlan:
    cycle, flagged = webster_cycle(ratios)
    return WebsterPlan(cycle, green_split(cycle, ratios), flagged)


class FixedTimeController:
    """Replays P1..P4 cyclically with the given greens at every trigger."""

    def __init__(self, world: SimWorld, greens_or_plans):
        n = world.net.n
        if isinstance(greens_or_plans[0], (int, np.integer)):
            self.greens = [list(greens_or_plans)] * n
        else:
            self.greens = [list(g) for g in greens_or_plans]
        if len(self.greens) != n:
            raise ValueError(f"need greens for all {n} intersections")
        for greens in self.greens:
            if len(greens) != N_PHASES:
                raise ValueError("need one green per phase")
            for g in greens:
                if not (MIN_GREEN_S <= g <= MAX_GREEN_S):
                    raise ValueError(f"green {g} outside [{MIN_GREEN_S},{MAX_GREEN_S}]")

    def drive(self, world: SimWorld) -> None:
        """Serve every raised trigger with the next phase in the cycle."""
        for k, ctrl in enumerate(world.controllers):
            if ctrl.trigger:
                nxt = (ctrl.phase + 1) % N_PHASES
                world.apply_signal(k, nxt, self.greens[k][nxt])


def fixed_time_fswf(scenario, seed: int, warmup_s: int = 300):
    """FS-WF setup: measured ratios -> per-intersection Webster plans."""
    ratios = measure_flow_ratios(scenario, seed, warmup_s)
    plans = [webster_plan(r) for r in ratios]
    return plans
