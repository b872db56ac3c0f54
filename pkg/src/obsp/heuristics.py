"""Batching and sequencing rules, and a driver that runs them on the simulator.

Batching rules build pick units over the pending orders: GR (greedy),
LST (greedy, then dismantle batches with negative slack), POSB (greedy,
then dismantle PtG batches of four or fewer orders) and LST+POSB.
Sequencing rules order the units: EDD, LPT, SPT, MAXTP and LST.

The public ``batch_*`` and ``sequence`` functions work on order objects and
are easy to inspect; the driver uses the fused ``core.plan_units`` kernel,
which the tests hold to the same answers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import core, routes
from .instance import Order, ProblemInstance
from .routes import TimingConfig
from .sim import Simulator

SIO_BATCH_CAP = 10
MIO_BATCH_CAP = 12
POSB_MAX = 4

BATCHING_RULES = {"GR": core.GR, "LST": core.LST, "POSB": core.POSB, "LST+POSB": core.LST_POSB}
SEQUENCING_RULES = {"EDD": core.EDD, "LPT": core.LPT, "SPT": core.SPT, "MAXTP": core.MAXTP,
                    "LST": core.SEQ_LST}


@dataclass(frozen=True)
class PickUnit:
    orders: tuple[Order, ...]

    @property
    def is_batch(self) -> bool:
        return len(self.orders) > 1

    @property
    def base_type(self) -> int:
        return self.orders[0].base_type

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(o.id for o in self.orders)


@dataclass(frozen=True)
class BatchPlan:
    units: tuple[PickUnit, ...]

    def __len__(self):
        return len(self.units)

    def ids(self) -> list[tuple[int, ...]]:
        return [u.ids for u in self.units]


@dataclass(frozen=True)
class SlackContext:
    now: float
    timing: TimingConfig = TimingConfig()

    def times(self, unit: PickUnit) -> tuple[float, float]:
        """(pick, consolidation) estimate of a unit from the simulator's timing table."""
        bt = unit.base_type
        items = ptg = gtp = 0
        for o in unit.orders:
            a, b = routes.item_split(bt, o.items)
            items += o.items
            ptg += a
            gtp += b
        kind = routes.BATCH_PICK if unit.is_batch else routes.ORDER_PICK
        return routes.processing_times(bt, kind, len(unit.orders), items, ptg, gtp, self.timing)

    def slack(self, unit: PickUnit) -> float:
        pick, cons = self.times(unit)
        return min(o.cutoff_time for o in unit.orders) - self.now - (pick + cons)


def _sorted(orders) -> list[Order]:
    return sorted(orders, key=lambda o: (o.cutoff_time, o.id))


def batch_greedy(pending, now: float = 0.0, timing: TimingConfig | None = None) -> BatchPlan:
    """Sort by cut-off and fill one open homogeneous cart per PtG-area type."""
    timing = timing or TimingConfig()
    units: list[list[Order]] = []
    open_unit: dict[int, int] = {}
    load: dict[int, int] = {}
    for o in _sorted(pending):
        bt = o.base_type
        if bt not in routes.PTG_AREA:
            units.append([o])
            continue
        cap = SIO_BATCH_CAP if bt == routes.SIO_PTG else MIO_BATCH_CAP
        ptg = routes.item_split(bt, o.items)[0]
        u = open_unit.get(bt)
        if u is not None and len(units[u]) < cap and load[bt] + ptg <= timing.cart_capacity:
            units[u].append(o)
            load[bt] += ptg
        else:
            open_unit[bt] = len(units)
            load[bt] = ptg
            units.append([o])
    return BatchPlan(tuple(PickUnit(tuple(u)) for u in units))


def _dismantle(plan: BatchPlan, split) -> BatchPlan:
    out = []
    for unit in plan.units:
        if unit.is_batch and split(unit):
            out.extend(PickUnit((o,)) for o in unit.orders)
        else:
            out.append(unit)
    return BatchPlan(tuple(out))


def batch_lst(pending, now: float = 0.0, timing: TimingConfig | None = None) -> BatchPlan:
    ctx = SlackContext(now, timing or TimingConfig())
    return _dismantle(batch_greedy(pending, now, ctx.timing), lambda u: ctx.slack(u) < 0.0)


def batch_posb(pending, now: float = 0.0, timing: TimingConfig | None = None) -> BatchPlan:
    return _dismantle(batch_greedy(pending, now, timing), lambda u: len(u.orders) <= POSB_MAX)


def batch_lst_posb(pending, now: float = 0.0, timing: TimingConfig | None = None) -> BatchPlan:
    ctx = SlackContext(now, timing or TimingConfig())
    plan = _dismantle(batch_greedy(pending, now, ctx.timing), lambda u: ctx.slack(u) < 0.0)
    return _dismantle(plan, lambda u: len(u.orders) <= POSB_MAX)


BATCHERS = {"GR": batch_greedy, "LST": batch_lst, "POSB": batch_posb, "LST+POSB": batch_lst_posb}


def sequence(plan: BatchPlan, rule: str, ctx: SlackContext) -> BatchPlan:
    """Stable sort of the units by the rule's key."""
    if rule == "EDD":
        key = lambda u: min(o.cutoff_time for o in u.orders)
    elif rule == "LPT":
        key = lambda u: -ctx.times(u)[0]
    elif rule == "SPT":
        key = lambda u: ctx.times(u)[0]
    elif rule == "MAXTP":
        key = lambda u: -sum(ctx.times(u))
    elif rule == "LST":
        key = ctx.slack
    else:
        raise ValueError(f"unknown sequencing rule {rule!r}")
    return BatchPlan(tuple(sorted(plan.units, key=key)))


@dataclass(frozen=True)
class HeuristicResult:
    n_orders: int
    n_shipped: int
    n_tardy: int
    m_unprocessed: int
    trace: tuple[str, ...] = ()
    # every pipeline place, slot and idle unit is back at the end
    resources_restored: bool = True

    @property
    def tardy_pct(self) -> float:
        return 100.0 * (self.n_tardy + self.m_unprocessed) / self.n_orders


def run_heuristic(instance: ProblemInstance, batching: str, sequencing: str, *,
                  timing: TimingConfig | None = None, record_trace: bool = False) -> HeuristicResult:
    """Replan and list-schedule at every arrival and resource release until the episode ends.

    At each decision point the pending orders are batched and sequenced, then
    units are dispatched in priority order whenever their resources are free;
    units that do not fit are skipped so later ones can use other resources.
    """
    try:
        b_code = BATCHING_RULES[batching]
        s_code = SEQUENCING_RULES[sequencing]
    except KeyError as exc:
        raise ValueError(f"unknown rule {exc.args[0]!r}") from None
    timing = timing or TimingConfig()
    sim = Simulator(timing, gtp_queue="edd" if sequencing == "EDD" else "fifo",
                    record_trace=record_trace)
    sim.reset(instance)
    params = np.asarray(timing.kernel_params())
    bt = np.asarray(sim.bt, dtype=np.int64)
    items = np.asarray(sim.items, dtype=np.int64)
    ptg = np.asarray(sim.ptg_items, dtype=np.int64)
    gtp = np.asarray(sim.gtp_items, dtype=np.int64)
    cutoff = np.asarray(sim.cutoff, dtype=np.float64)
    plan = core.plan_units
    # requirement tuples per (base type, batch?, size) are small; cache them
    req_cache: dict[tuple[int, int, int], tuple] = {}

    while not sim.terminal:
        free = sim.free
        if free[routes.PICKER] or free[routes.SHUTTLE]:
            ids = sim.pending_ids()
            if len(ids):
                flat, bounds = plan(bt[ids], items[ids], ptg[ids], gtp[ids], cutoff[ids],
                                    sim.clock, b_code, s_code, params,
                                    SIO_BATCH_CAP, MIO_BATCH_CAP, POSB_MAX)
                members = ids[flat]
                for u in range(len(bounds) - 1):
                    if not (free[routes.PICKER] or free[routes.SHUTTLE]):
                        break
                    lo, hi = bounds[u], bounds[u + 1]
                    b = int(bt[members[lo]])
                    kind = routes.BATCH_PICK if hi - lo > 1 else routes.ORDER_PICK
                    key = (b, kind, hi - lo)
                    req = req_cache.get(key)
                    if req is None:
                        req = routes.requirements(b, kind, hi - lo, 0 if b in (0, 2) else 1)
                        req_cache[key] = req
                    if all(r <= f for r, f in zip(req, free)):
                        sim.dispatch(members[lo:hi].tolist(), kind)
        sim.advance(run=True)

    rows = tuple(sim.trace_rows()) if record_trace else ()
    rc = instance.resource_config
    restored = sim.free == list(sim.totals) and sim.idle == [rc.pickers, rc.shuttles]
    return HeuristicResult(sim.n_orders, sim.shipped, sim.tardy, sim.unprocessed, rows, restored)
