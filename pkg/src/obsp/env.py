"""Semi-Markov decision environment over the warehouse simulator.

State (23 slots)
    0..14   pending-order counts per order type ``k = 3 * base_type + e``
            with earliness ``e`` 0 (more than 40 min to cut-off), 1 (15 to 40
            min) or 2 (15 min or less, overdue included)
    15..19  pipelines p, g and free DtO, StO, pack slots d, v, b
    20..22  tardy orders t, simulation time u, processed orders n

Actions (31)
    0..14   pick-by-order of the earliest-cut-off order of type k
    15..29  pick-by-batch of up to 10 earliest-cut-off orders of type k - 15
    30      wait
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import routes
from .instance import ProblemInstance, ResourceConfig, Scenario, generate_instance
from .routes import TimingConfig
from .sim import SimObservation, Simulator

N_TYPES = 15
N_ACTIONS = 31
STATE_DIM = 23
WAIT = 30
M_DEFAULT = 25
BATCH_SIZE = 10
E2_LIMIT = 2400.0  # seconds to cut-off, upper edge of the middle bucket
E3_LIMIT = 900.0

EARLINESS_NAMES = ("e1", "e2", "e3")
STATE_SLOTS = tuple(
    [f"O[{routes.BASE_TYPE_NAMES[b]},{e}]" for b in range(5) for e in EARLINESS_NAMES]
    + ["p", "g", "d", "v", "b", "t", "u", "n"])


def action_meaning(a: int) -> tuple[str, int, int]:
    """Return (decision, base type, earliness index); wait gives ("wait", -1, -1)."""
    if not 0 <= a < N_ACTIONS:
        raise ValueError(f"action {a} out of range")
    if a == WAIT:
        return "wait", -1, -1
    kind = "order" if a < N_TYPES else "batch"
    k = a % N_TYPES
    return kind, k // 3, k % 3


def earliness(time_to_cutoff: float) -> int:
    if time_to_cutoff <= E3_LIMIT:
        return 2
    if time_to_cutoff <= E2_LIMIT:
        return 1
    return 0


class EpisodeFinished(RuntimeError):
    pass


@dataclass(frozen=True)
class RewardParams:
    infeasible_penalty: float = 0.005
    tardy_penalty: float = 0.0075
    terminal_exponent: float = 2.0

    def __post_init__(self):
        if self.infeasible_penalty <= 0 or self.tardy_penalty <= 0:
            raise ValueError("penalties must be positive")
        if self.infeasible_penalty >= self.tardy_penalty:
            raise ValueError("infeasible penalty must be below the tardy penalty")

    def terminal(self, w: int, n: int) -> float:
        return (1.0 - w / n) ** self.terminal_exponent


@dataclass(frozen=True)
class StepResult:
    next_state: np.ndarray
    reward: float
    tau: float
    done: bool
    info: dict


def _round_half_up(x: float) -> float:
    return float(np.floor(x + 0.5))


def encode_raw(counts, p_avail, p_total, g_avail, g_total, d, v, b, t, u, n, *,
               n_orders: int, horizon: float, M: int = M_DEFAULT) -> np.ndarray:
    """Cap and scale raw state quantities into the 23-slot vector."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape != (N_TYPES,):
        raise ValueError("counts must have 15 entries")
    out = np.empty(STATE_DIM, dtype=np.float64)
    out[:N_TYPES] = np.minimum(counts, M)
    out[15] = min(_round_half_up(M * p_avail / p_total), M)
    out[16] = min(_round_half_up(M * g_avail / g_total), M)
    out[17] = min(d, M)
    out[18] = min(v, M)
    out[19] = min(b, M)
    out[20] = min(M * t / n_orders, M)
    out[21] = min(M * u / horizon, M)
    out[22] = min(M * n / n_orders, M)
    return out


def order_type_counts(obs: SimObservation) -> np.ndarray:
    counts = np.zeros(N_TYPES, dtype=np.int64)
    for o in obs.pending_orders:
        counts[3 * o.base_type + earliness(o.cutoff_time - obs.clock)] += 1
    return counts


def encode_state(obs: SimObservation, M: int, totals: ResourceConfig, N: int,
                 horizon: float) -> np.ndarray:
    """Pure encoding of an observation; pipelines hold 2x the unit count."""
    pool = obs.resource_pool
    return encode_raw(
        order_type_counts(obs), pool.p, 2 * totals.pickers, pool.g, 2 * totals.shuttles,
        pool.dto_slots_free, pool.sto_slots_free, pool.pack_slots_free,
        obs.tardy_count, obs.clock, obs.processed_count,
        n_orders=N, horizon=horizon, M=M)


class InstanceStream:
    """Fresh seeded instances for training: episode ``i`` uses child seed ``i``."""

    def __init__(self, scenario: Scenario | str, n_orders: int, resource_config: ResourceConfig,
                 seed: int, horizon: int = 3600):
        self.scenario = Scenario(scenario)
        self.n_orders = n_orders
        self.resource_config = resource_config
        self.horizon = horizon
        self._seq = np.random.SeedSequence(seed)

    def __call__(self) -> ProblemInstance:
        child = self._seq.spawn(1)[0]
        seed = int(child.generate_state(1, dtype=np.uint32)[0])
        return generate_instance(self.scenario, self.n_orders, self.resource_config, seed,
                                 horizon=self.horizon)


class ObspEnv:
    """Order batching and sequencing environment.

    ``source`` is either a fixed instance or a zero-argument callable that
    returns a new instance for every reset.
    """

    def __init__(self, source: ProblemInstance | Callable[[], ProblemInstance] | None = None, *,
                 timing: TimingConfig | None = None, M: int = M_DEFAULT,
                 reward: RewardParams | None = None, batch_size: int = BATCH_SIZE,
                 record_trace: bool = False):
        self.source = source
        self.timing = timing or TimingConfig()
        self.M = M
        self.reward_params = reward or RewardParams()
        self.batch_size = batch_size
        self.sim = Simulator(self.timing, record_trace=record_trace)
        self.done = True
        self.state: np.ndarray | None = None

    # --------------------------------------------------------------- episode
    def reset(self, instance: ProblemInstance | None = None) -> np.ndarray:
        if instance is None:
            if self.source is None:
                raise ValueError("no instance given and no instance source configured")
            instance = self.source if isinstance(self.source, ProblemInstance) else self.source()
        if instance.n_orders < 1:
            raise ValueError("instance has no orders")
        self.instance = instance
        self.sim.reset(instance, self.timing)
        rc = instance.resource_config
        self._p_total = 2 * rc.pickers
        self._g_total = 2 * rc.shuttles
        self.done = False
        self.episode_return = 0.0
        self._refresh()
        return self.state.copy()

    def step(self, action: int) -> StepResult:
        if self.done:
            raise EpisodeFinished("episode is over; call reset()")
        action = int(action)
        if not 0 <= action < N_ACTIONS:
            raise ValueError(f"action {action} out of range")
        rp = self.reward_params
        if not self.mask[action]:
            r = -rp.infeasible_penalty
            self.episode_return += r
            return StepResult(self.state.copy(), r, 0.0, False, self._info(False, 0))
        sim = self.sim
        if action != WAIT:
            members, kind = self._selection(action)
            sim.dispatch(members, kind)
        tau, tardy = sim.advance()
        r = -rp.tardy_penalty * tardy
        if sim.is_terminal():
            self.done = True
            r += rp.terminal(sim.tardy + sim.unprocessed, sim.n_orders)
        self.episode_return += r
        self._refresh()
        return StepResult(self.state.copy(), r, tau, self.done, self._info(True, tardy))

    def _info(self, feasible: bool, tardy: int) -> dict:
        sim = self.sim
        return {"feasible": feasible, "tardy_events": tardy,
                "w": sim.tardy + sim.unprocessed, "m": sim.unprocessed}

    # ---------------------------------------------------------------- state
    def observe(self) -> SimObservation:
        return self.sim.observe()

    def feasible(self, action: int) -> bool:
        return bool(self.mask[action])

    def feasible_mask(self) -> np.ndarray:
        return self.mask.copy()

    def tardy_pct(self) -> float:
        sim = self.sim
        return 100.0 * (sim.tardy + sim.unprocessed) / sim.n_orders

    def _bucket_bounds(self, bt: int) -> tuple[int, int, int]:
        """Positions splitting the type's cut-off-sorted pending list into e3 | e2 | e1."""
        lst = self.sim.pending_by_type[bt]
        clock = self.sim.clock
        i3 = bisect_right(lst, (clock + E3_LIMIT, float("inf")))
        i2 = bisect_right(lst, (clock + E2_LIMIT, float("inf")))
        return i3, i2, len(lst)

    def _bucket(self, bt: int, e: int) -> list[tuple[float, int]]:
        i3, i2, n = self._bucket_bounds(bt)
        lst = self.sim.pending_by_type[bt]
        if e == 2:
            return lst[:i3]
        if e == 1:
            return lst[i3:i2]
        return lst[i2:]

    def _batch_members(self, bt: int, bucket) -> list[int]:
        members = []
        cart = self.timing.cart_capacity
        picker = routes.uses_picker(bt, routes.BATCH_PICK)
        ptg_items = self.sim.ptg_items
        load = 0
        for _, oid in bucket[:self.batch_size]:
            if picker:
                if load + ptg_items[oid] > cart:
                    break
                load += ptg_items[oid]
            members.append(oid)
        return members

    def _selection(self, action: int) -> tuple[list[int], int]:
        k = action % N_TYPES
        bt, e = divmod(k, 3)
        bucket = self._bucket(bt, e)
        if action < N_TYPES:
            return [bucket[0][1]], routes.ORDER_PICK
        members = self._batch_members(bt, bucket)
        return members, routes.BATCH_PICK if len(members) > 1 else routes.ORDER_PICK

    def _refresh(self):
        sim = self.sim
        M = self.M
        free = sim.free
        counts = np.zeros(N_TYPES, dtype=np.float64)
        mask = np.zeros(N_ACTIONS, dtype=bool)
        if not self.done:
            for bt in range(5):
                gtp = 0 if bt in (routes.SIO_PTG, routes.MIO_PTG) else 1
                i3, i2, n = self._bucket_bounds(bt)
                sizes = (n - i2, i2 - i3, i3)
                for e in range(3):
                    c = sizes[e]
                    counts[3 * bt + e] = c
                    if c == 0:
                        continue
                    req = routes.requirements(bt, routes.ORDER_PICK, 1, gtp)
                    mask[3 * bt + e] = all(r <= f for r, f in zip(req, free))
                    members, kind = self._selection(N_TYPES + 3 * bt + e)
                    req = routes.requirements(bt, kind, len(members), gtp)
                    mask[N_TYPES + 3 * bt + e] = all(r <= f for r, f in zip(req, free))
            mask[WAIT] = not mask[:WAIT].any()
        self.mask = mask
        self.counts = counts
        self.state = encode_raw(
            counts, free[routes.PICKER], self._p_total, free[routes.SHUTTLE], self._g_total,
            free[routes.DTO_SLOT], free[routes.STO_SLOT], free[routes.PACK_SLOT],
            sim.tardy, sim.clock, sim.processed,
            n_orders=sim.n_orders, horizon=sim.horizon, M=M)
