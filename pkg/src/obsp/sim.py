"""Discrete-event simulator of the hybrid PtG/GtP warehouse.

Time only moves inside :meth:`Simulator.advance`, which runs the event queue
until the observable state changes: an order batch arrives or a pipeline
resource (picker, shuttle, workstation slot) is handed back.  Dispatching is
instantaneous and is itself reported as a state change.

Pipelines
---------
Pickers and shuttles are offered through a *pipeline*: the idle units plus a
virtual queue of the same length.  A dispatched task holds one pipeline unit
from dispatch until its stage finishes, so at most ``2 * pickers`` PtG tasks
are in the PtG stage (busy or queued).  Workstation slots are reserved at
dispatch and returned when the orders are consolidated.
"""

from __future__ import annotations

import heapq
from bisect import bisect_right, insort
from collections import deque
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import routes
from .instance import Order, ProblemInstance, Status
from .routes import TimingConfig


class SimulationError(RuntimeError):
    pass


class InsufficientCapacity(SimulationError):
    pass


class UnknownOrder(SimulationError):
    pass


class EmptyEventQueue(SimulationError):
    """Raised when advancing an episode that has already ended."""


class EventKind(IntEnum):
    # value order is the tie-break order at equal timestamps
    ORDER_ARRIVAL = 0
    PICK_COMPLETE = 1
    STAGE_ARRIVAL = 2
    CONSOLIDATION_COMPLETE = 3
    RESOURCE_FREED = 4


EVENT_NAMES = ("OrderArrival", "PickComplete", "StageArrival", "ConsolidationComplete",
               "ResourceFreed")

# ResourceFreed payloads: pipeline kinds 0..4 follow routes.PICKER..PACK_SLOT
FREE_NAMES = routes.RESOURCE_NAMES + ("dto_station", "sto_station", "pack_station")
_STATION_SERVER = {routes.DTO: 5, routes.STO: 6, routes.PACK: 7}

# task stages
_PTG, _GTP, _STATION, _DONE = range(4)


@dataclass(frozen=True)
class SimEvent:
    time: float
    kind: EventKind
    seq: int
    task_id: int = -1
    order_ids: tuple[int, ...] = ()
    resource: int = -1
    count: int = 0


@dataclass(frozen=True)
class ResourcePool:
    """Free pipeline capacity.

    ``pickers_free`` idle pickers plus ``pickers_queue_free`` open positions
    in the PtG virtual queue (whose length is ``pickers_queue_len``) give the
    pipeline value ``p``; shuttles likewise give ``g``.
    """

    pickers_free: int
    pickers_queue_free: int
    pickers_queue_len: int
    shuttles_free: int
    shuttles_queue_free: int
    shuttles_queue_len: int
    dto_slots_free: int
    sto_slots_free: int
    pack_slots_free: int

    @property
    def p(self) -> int:
        return self.pickers_free + self.pickers_queue_free

    @property
    def g(self) -> int:
        return self.shuttles_free + self.shuttles_queue_free


@dataclass(frozen=True)
class SimObservation:
    clock: float
    pending_orders: tuple[Order, ...]
    resource_pool: ResourcePool
    tardy_count: int
    processed_count: int


@dataclass(eq=False)
class PickTask:
    task_id: int
    kind: int
    member_orders: tuple[int, ...]
    route: int
    required_resources: tuple[int, int, int, int, int]
    base_type: int
    items: int
    ptg_items: int
    gtp_items: int
    station: int
    start_time: float | None = None
    finish_time: float | None = None
    stage: int = _PTG
    min_cutoff: float = 0.0


def make_task(task_id: int, instance_orders, member_ids, kind: int) -> PickTask:
    """Build (but do not dispatch) a task over the given member orders."""
    members = tuple(int(i) for i in member_ids)
    if not members:
        raise ValueError("a task needs at least one order")
    if kind == routes.BATCH_PICK and len(members) < 2:
        kind = routes.ORDER_PICK
    if kind == routes.ORDER_PICK and len(members) != 1:
        raise ValueError("an order pick takes exactly one order")
    first = instance_orders[members[0]]
    bt = first.base_type
    items = ptg = gtp = 0
    cut = float("inf")
    for oid in members:
        o = instance_orders[oid]
        if o.base_type != bt:
            raise ValueError("batches must be homogeneous in composition and location")
        a, b = routes.item_split(bt, o.items)
        items += o.items
        ptg += a
        gtp += b
        cut = min(cut, o.cutoff_time)
    return PickTask(
        task_id=task_id,
        kind=kind,
        member_orders=members,
        route=routes.route(bt, kind),
        required_resources=routes.requirements(bt, kind, len(members), gtp),
        base_type=bt,
        items=items,
        ptg_items=ptg,
        gtp_items=gtp,
        station=routes.station(bt, kind),
        min_cutoff=cut,
    )


def pick_duration(task: PickTask, timing: TimingConfig) -> float:
    """Picker tour plus shuttle retrievals for a task, in seconds."""
    picker, shuttle, _, _, _ = routes.stage_times(
        task.base_type, task.kind, len(task.member_orders), task.items, task.ptg_items,
        task.gtp_items, timing)
    return picker + shuttle


class Simulator:
    """Warehouse simulator; single-threaded, one episode at a time.

    Parameters
    ----------
    timing : TimingConfig, optional
        Durations, cart capacity and workstation slot counts.
    gtp_queue : {"fifo", "edd"}
        Service order of the shuttle queue.  ``"edd"`` re-sorts it by the
        earliest member cut-off whenever a task joins.
    abort_tardy_fraction : float, optional
        End the episode early once this fraction of orders is tardy.
    record_trace : bool
        Keep a list of processed events and dispatches for export.
    """

    def __init__(self, timing: TimingConfig | None = None, *, gtp_queue: str = "fifo",
                 abort_tardy_fraction: float | None = None, record_trace: bool = False):
        if gtp_queue not in ("fifo", "edd"):
            raise ValueError("gtp_queue must be 'fifo' or 'edd'")
        self.timing = timing or TimingConfig()
        self.gtp_queue_policy = gtp_queue
        self.abort_tardy_fraction = abort_tardy_fraction
        self.record_trace = record_trace
        self.instance: ProblemInstance | None = None

    # ------------------------------------------------------------------ setup
    def reset(self, instance: ProblemInstance, timing: TimingConfig | None = None) -> SimObservation:
        if timing is not None:
            self.timing = timing
        if not instance.orders:
            raise ValueError("instance has no orders")
        ids = [o.id for o in instance.orders]
        if ids != list(range(len(ids))):
            raise ValueError("order ids must be 0..N-1 in instance order")
        self.instance = instance
        orders = instance.orders
        rc = instance.resource_config
        tm = self.timing
        n = len(orders)
        self.n_orders = n
        self.horizon = float(instance.horizon)
        self.clock = 0.0

        self.bt = [o.base_type for o in orders]
        self.items = [o.items for o in orders]
        split = [routes.item_split(b, k) for b, k in zip(self.bt, self.items)]
        self.ptg_items = [s[0] for s in split]
        self.gtp_items = [s[1] for s in split]
        self.cutoff = [float(o.cutoff_time) for o in orders]
        self.status = [Status.PENDING] * n
        self.arrived = [False] * n

        self.totals = (2 * rc.pickers, 2 * rc.shuttles, tm.dto_slots, tm.sto_slots, tm.pack_slots)
        self.free = list(self.totals)
        self.idle = [rc.pickers, rc.shuttles]
        self.stations_total = [0, rc.dto_stations, rc.sto_stations, rc.pack_stations]
        self.station_idle = list(self.stations_total)

        self.ptg_queue: deque[int] = deque()
        self.gtp_queue: list[tuple[float, int, int]] = []
        self.station_queue = [deque(), deque(), deque(), deque()]
        self.tasks: dict[int, PickTask] = {}
        self.active: set[int] = set()
        self._next_task = 0
        self._seq = 0
        self._events: list[tuple] = []

        self.pending_by_type: list[list[tuple[float, int]]] = [[] for _ in range(routes.N_BASE_TYPES)]
        self.pending_mask = np.zeros(n, dtype=bool)
        # global (cut-off, id) order, for building planner inputs quickly
        self.rank = np.lexsort((np.arange(n), np.asarray(self.cutoff)))

        self.tardy = 0
        self.processed = 0
        self.shipped = 0
        self.unprocessed = 0
        self.terminal = False
        self._dispatched = False
        self.trace: list[tuple] = []

        by_release: dict[int, list[int]] = {}
        for o in orders:
            by_release.setdefault(o.release_time, []).append(o.id)
        for t in sorted(by_release):
            if t <= 0:
                self._arrive(by_release[t])
            else:
                self._push(float(t), EventKind.ORDER_ARRIVAL, tuple(by_release[t]))
        return self.observe()

    # --------------------------------------------------------------- queries
    def observe(self) -> SimObservation:
        orders = self.instance.orders
        pending = tuple(orders[i] for i in np.flatnonzero(self.pending_mask))
        return SimObservation(self.clock, pending, self.resource_pool(), self.tardy, self.processed)

    def resource_pool(self) -> ResourcePool:
        rc = self.instance.resource_config
        ip, ish = self.idle
        return ResourcePool(
            pickers_free=ip,
            pickers_queue_free=self.free[routes.PICKER] - ip,
            pickers_queue_len=rc.pickers,
            shuttles_free=ish,
            shuttles_queue_free=self.free[routes.SHUTTLE] - ish,
            shuttles_queue_len=rc.shuttles,
            dto_slots_free=self.free[routes.DTO_SLOT],
            sto_slots_free=self.free[routes.STO_SLOT],
            pack_slots_free=self.free[routes.PACK_SLOT],
        )

    def is_terminal(self) -> bool:
        return self.terminal

    def unprocessed_count(self) -> int:
        return self.unprocessed

    def pending_ids(self) -> np.ndarray:
        """Pending order ids sorted by (cut-off, id)."""
        r = self.rank
        return r[self.pending_mask[r]]

    def status_counts(self) -> dict[Status, int]:
        counts = {s: 0 for s in Status}
        for s in self.status:
            counts[s] += 1
        return counts

    def resources_in_use(self) -> list[int]:
        """Pipeline units held by active tasks, recomputed from the tasks."""
        used = [0] * 5
        for tid in self.active:
            t = self.tasks[tid]
            req = t.required_resources
            if t.stage == _PTG:
                used[routes.PICKER] += req[routes.PICKER]
            if t.stage in (_PTG, _GTP):
                used[routes.SHUTTLE] += req[routes.SHUTTLE]
            for k in (routes.DTO_SLOT, routes.STO_SLOT, routes.PACK_SLOT):
                used[k] += req[k]
        return used

    # -------------------------------------------------------------- dispatch
    def make_task(self, member_ids, kind: int) -> PickTask:
        return make_task(self._next_task, self.instance.orders, member_ids, kind)

    def can_dispatch(self, task: PickTask) -> bool:
        free = self.free
        req = task.required_resources
        return (req[0] <= free[0] and req[1] <= free[1] and req[2] <= free[2]
                and req[3] <= free[3] and req[4] <= free[4])

    def dispatch(self, member_ids, kind: int = routes.ORDER_PICK) -> PickTask:
        """Commit a pick task; resources are taken immediately."""
        if self.terminal:
            raise EmptyEventQueue("episode has ended")
        n = self.n_orders
        for oid in member_ids:
            if not 0 <= oid < n:
                raise UnknownOrder(f"order {oid} does not exist")
            if self.status[oid] is not Status.PENDING or not self.arrived[oid]:
                raise UnknownOrder(f"order {oid} is not pending")
        if len(set(member_ids)) != len(member_ids):
            raise ValueError("duplicate order in task")
        task = self.make_task(member_ids, kind)
        if task.kind == routes.BATCH_PICK and routes.uses_picker(task.base_type, task.kind) \
                and task.ptg_items > self.timing.cart_capacity:
            raise InsufficientCapacity("batch exceeds the picker cart capacity")
        if not self.can_dispatch(task):
            raise InsufficientCapacity("required resources are not available")
        self._next_task += 1
        free = self.free
        for k, r in enumerate(task.required_resources):
            free[k] -= r
        self.tasks[task.task_id] = task
        self.active.add(task.task_id)
        pend = self.pending_by_type[task.base_type]
        cut = self.cutoff
        for oid in task.member_orders:
            self.status[oid] = Status.ASSIGNED
            self.pending_mask[oid] = False
            key = (cut[oid], oid)
            pos = bisect_right(pend, key) - 1
            del pend[pos]
        if self.record_trace:
            self.trace.append((self.clock, "Dispatch", task.task_id, task.member_orders))
        if routes.uses_picker(task.base_type, task.kind):
            task.stage = _PTG
            self.ptg_queue.append(task.task_id)
            self._start_pickers()
        else:
            task.stage = _GTP
            self._enqueue_gtp(task)
            self._start_shuttles()
        self._dispatched = True
        return task

    # ---------------------------------------------------------------- engine
    def advance(self, *, run: bool = False) -> tuple[float, int]:
        """Run until the next state change; return (elapsed, tardy events).

        A dispatch is itself a state change, so the first call after one
        returns ``(0, 0)`` without moving time unless ``run`` is set.
        """
        if self.terminal:
            raise EmptyEventQueue("episode has ended")
        dispatched = self._dispatched
        self._dispatched = False
        if dispatched and not run:
            return 0.0, 0
        start = self.clock
        tardy0 = self.tardy
        heap = self._events
        horizon = self.horizon
        changed = False
        while True:
            if self.processed == self.n_orders or self._abort():
                self._finalize()
                break
            if changed:
                break
            if not heap or heap[0][0] > horizon:
                self.clock = max(self.clock, horizon)
                self._finalize()
                break
            tm = heap[0][0]
            self.clock = tm
            while heap and heap[0][0] == tm:
                changed |= self._handle(heapq.heappop(heap))
            if tm >= horizon:
                self._finalize()
                break
        return self.clock - start, self.tardy - tardy0

    def advance_until_state_change(self) -> tuple[SimObservation, float, int]:
        tau, tardy = self.advance()
        return self.observe(), tau, tardy

    def _abort(self) -> bool:
        f = self.abort_tardy_fraction
        return f is not None and self.tardy >= f * self.n_orders

    def _push(self, time, kind, a=(), b=-1, c=0):
        self._seq += 1
        heapq.heappush(self._events, (time, int(kind), self._seq, a, b, c))

    def _handle(self, ev) -> bool:
        time, kind, _, a, b, c = ev
        if self.record_trace:
            if kind == EventKind.RESOURCE_FREED:
                self.trace.append((time, f"ResourceFreed({FREE_NAMES[b]}x{c})", -1, ()))
            elif kind == EventKind.ORDER_ARRIVAL:
                self.trace.append((time, "OrderArrival", -1, a))
            else:
                self.trace.append((time, EVENT_NAMES[kind], a, self.tasks[a].member_orders))
        if kind == EventKind.ORDER_ARRIVAL:
            self._arrive(a)
            return True
        if kind == EventKind.PICK_COMPLETE:
            self._pick_complete(self.tasks[a])
            return False
        if kind == EventKind.STAGE_ARRIVAL:
            self._stage_arrival(self.tasks[a])
            return False
        if kind == EventKind.CONSOLIDATION_COMPLETE:
            self._consolidate(self.tasks[a])
            return False
        # RESOURCE_FREED: b = resource kind, c = count
        return self._free(b, c)

    def _arrive(self, ids):
        cut = self.cutoff
        for oid in ids:
            self.arrived[oid] = True
            self.pending_mask[oid] = True
            insort(self.pending_by_type[self.bt[oid]], (cut[oid], oid))

    def _start_pickers(self):
        tm = self.timing
        while self.idle[0] > 0 and self.ptg_queue:
            task = self.tasks[self.ptg_queue.popleft()]
            self.idle[0] -= 1
            task.start_time = self.clock
            for oid in task.member_orders:
                self.status[oid] = Status.PICKING
            dur = tm.ptg_setup + tm.ptg_per_item * task.ptg_items
            self._push(self.clock + dur, EventKind.PICK_COMPLETE, task.task_id)

    def _enqueue_gtp(self, task):
        key = task.min_cutoff if self.gtp_queue_policy == "edd" else 0.0
        self._seq += 1
        insort(self.gtp_queue, (key, self._seq, task.task_id))

    def _start_shuttles(self):
        tm = self.timing
        while self.idle[1] > 0 and self.gtp_queue:
            _, _, tid = self.gtp_queue.pop(0)
            task = self.tasks[tid]
            self.idle[1] -= 1
            if task.start_time is None:
                task.start_time = self.clock
            for oid in task.member_orders:
                self.status[oid] = Status.PICKING
            self._push(self.clock + tm.shuttle_per_tote * task.gtp_items,
                       EventKind.PICK_COMPLETE, task.task_id)

    def _pick_complete(self, task):
        transfer = self.timing.transfer
        if task.stage == _PTG:
            self._push(self.clock, EventKind.RESOURCE_FREED, (), routes.PICKER, 1)
            if task.station == routes.NO_STATION:
                task.stage = _DONE
                self._push(self.clock, EventKind.CONSOLIDATION_COMPLETE, task.task_id)
            elif task.gtp_items > 0:
                task.stage = _GTP
                self._push(self.clock + transfer, EventKind.STAGE_ARRIVAL, task.task_id)
            else:
                task.stage = _STATION
                self._push(self.clock + transfer, EventKind.STAGE_ARRIVAL, task.task_id)
        else:
            self._push(self.clock, EventKind.RESOURCE_FREED, (), routes.SHUTTLE, 1)
            task.stage = _STATION
            self._push(self.clock + transfer, EventKind.STAGE_ARRIVAL, task.task_id)

    def _stage_arrival(self, task):
        if task.stage == _GTP:
            self._enqueue_gtp(task)
            self._start_shuttles()
            return
        for oid in task.member_orders:
            self.status[oid] = Status.CONSOLIDATING
        self.station_queue[task.station].append(task.task_id)
        self._start_station(task.station)

    def _start_station(self, st):
        queue = self.station_queue[st]
        tm = self.timing
        while self.station_idle[st] > 0 and queue:
            task = self.tasks[queue.popleft()]
            self.station_idle[st] -= 1
            n = len(task.member_orders)
            if st == routes.PACK:
                busy, latency = tm.pack_per_order * n, 0.0
            elif st == routes.DTO:
                busy, latency = tm.dto_per_item * task.items, 0.0
            else:
                busy, latency = tm.sto_sort_per_item * task.items, tm.sto_pack_per_order * n
            self._push(self.clock + busy, EventKind.RESOURCE_FREED, (), _STATION_SERVER[st], 1)
            self._push(self.clock + busy + latency, EventKind.CONSOLIDATION_COMPLETE, task.task_id)

    def _consolidate(self, task):
        task.finish_time = self.clock
        task.stage = _DONE
        late = 0
        for oid in task.member_orders:
            if self.clock > self.cutoff[oid]:
                self.status[oid] = Status.TARDY_SHIPPED
                late += 1
            else:
                self.status[oid] = Status.SHIPPED
        n = len(task.member_orders)
        self.tardy += late
        self.processed += n
        self.shipped += n - late
        self.active.discard(task.task_id)
        req = task.required_resources
        for k in (routes.DTO_SLOT, routes.STO_SLOT, routes.PACK_SLOT):
            if req[k]:
                self._push(self.clock, EventKind.RESOURCE_FREED, (), k, req[k])

    def _free(self, kind, count) -> bool:
        if kind == routes.PICKER:
            self.free[0] += count
            self.idle[0] += count
            self._start_pickers()
            return True
        if kind == routes.SHUTTLE:
            self.free[1] += count
            self.idle[1] += count
            self._start_shuttles()
            return True
        if kind <= routes.PACK_SLOT:
            self.free[kind] += count
            return True
        st = {5: routes.DTO, 6: routes.STO, 7: routes.PACK}[kind]
        self.station_idle[st] += count
        self._start_station(st)
        return False

    def _finalize(self):
        """End the episode: mark open orders unprocessed, return all resources."""
        m = 0
        for oid, s in enumerate(self.status):
            if not s.terminal:
                self.status[oid] = Status.UNPROCESSED
                m += 1
        self.unprocessed = m
        self.pending_mask[:] = False
        for lst in self.pending_by_type:
            lst.clear()
        self.active.clear()
        self.ptg_queue.clear()
        self.gtp_queue.clear()
        for q in self.station_queue:
            q.clear()
        self._events.clear()
        self.free = list(self.totals)
        rc = self.instance.resource_config
        self.idle = [rc.pickers, rc.shuttles]
        self.station_idle = list(self.stations_total)
        self.terminal = True

    # ---------------------------------------------------------------- export
    def trace_rows(self) -> list[str]:
        rows = ["time_s,event_kind,task_id,order_ids"]
        for time, kind, tid, ids in self.trace:
            rows.append(f"{time:g},{kind},{'' if tid < 0 else tid},{';'.join(map(str, ids))}")
        return rows
