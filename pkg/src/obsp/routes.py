"""Picking routes and resource requirements of the hybrid warehouse.

Every order belongs to one of five *base types* (composition x storage
location).  Together with the picking decision (by order / by batch) the base
type fixes the route through the warehouse, the workstation that consolidates
the order and the resources a task holds from dispatch until it leaves each
stage:

=========  ==========  ========  =====  ===================
base type  decision    stations  route  resources
=========  ==========  ========  =====  ===================
SIO-PtG    order       -         1      picker
SIO-PtG    batch       pack      2      picker, pack slot
SIO-GtP    order       DtO       4      shuttle, DtO slot
SIO-GtP    batch       DtO       5      shuttle, k DtO slots
MIO-PtG    order       -         1      picker
MIO-PtG    batch       StO       3      picker, StO slot
MIO-GtP    order       DtO       4      shuttle, DtO slot
MIO-GtP    batch       StO       5      shuttle, StO slot
MIO-Both   order       StO       3      picker, shuttle, StO slot
MIO-Both   batch       StO       3      picker, shuttle, StO slot
=========  ==========  ========  =====  ===================

``k`` is the number of orders in the batch: a DtO station packs one order at
a time, so a single-item batch from GtP occupies one DtO slot per order.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass

SIO_PTG, SIO_GTP, MIO_PTG, MIO_GTP, MIO_BOTH = range(5)
BASE_TYPE_NAMES = ("SIO-PtG", "SIO-GtP", "MIO-PtG", "MIO-GtP", "MIO-Both")
N_BASE_TYPES = 5

# Base types whose batches are built on a picker cart.
PTG_AREA = frozenset({SIO_PTG, MIO_PTG, MIO_BOTH})

ORDER_PICK, BATCH_PICK = 0, 1

# Pipeline resource indices, in the order the state vector reports them.
PICKER, SHUTTLE, DTO_SLOT, STO_SLOT, PACK_SLOT = range(5)
RESOURCE_NAMES = ("picker", "shuttle", "dto_slot", "sto_slot", "pack_slot")

NO_STATION, DTO, STO, PACK = 0, 1, 2, 3
STATION_NAMES = ("none", "dto", "sto", "pack")

_ROUTE = {
    (SIO_PTG, ORDER_PICK): 1,
    (SIO_PTG, BATCH_PICK): 2,
    (SIO_GTP, ORDER_PICK): 4,
    (SIO_GTP, BATCH_PICK): 5,
    (MIO_PTG, ORDER_PICK): 1,
    (MIO_PTG, BATCH_PICK): 3,
    (MIO_GTP, ORDER_PICK): 4,
    (MIO_GTP, BATCH_PICK): 5,
    (MIO_BOTH, ORDER_PICK): 3,
    (MIO_BOTH, BATCH_PICK): 3,
}

_STATION = {
    (SIO_PTG, ORDER_PICK): NO_STATION,
    (SIO_PTG, BATCH_PICK): PACK,
    (SIO_GTP, ORDER_PICK): DTO,
    (SIO_GTP, BATCH_PICK): DTO,
    (MIO_PTG, ORDER_PICK): NO_STATION,
    (MIO_PTG, BATCH_PICK): STO,
    (MIO_GTP, ORDER_PICK): DTO,
    (MIO_GTP, BATCH_PICK): STO,
    (MIO_BOTH, ORDER_PICK): STO,
    (MIO_BOTH, BATCH_PICK): STO,
}


@dataclass(frozen=True)
class TimingConfig:
    """Durations (seconds) and capacities used by the simulator.

    The same table drives the heuristics' processing-time estimates.
    """

    ptg_setup: float = 150.0
    ptg_per_item: float = 30.0
    shuttle_per_tote: float = 40.0
    dto_per_item: float = 20.0
    sto_sort_per_item: float = 10.0
    sto_pack_per_order: float = 10.0
    pack_per_order: float = 10.0
    transfer: float = 30.0
    cart_capacity: int = 50
    dto_slots: int = 50
    sto_slots: int = 75
    pack_slots: int = 25

    def __post_init__(self):
        for name, value in zip(self.__dataclass_fields__, astuple(self)):
            if value < 0:
                raise ValueError(f"timing field {name} must be non-negative, got {value}")
        if self.ptg_setup + self.ptg_per_item <= 0 or self.shuttle_per_tote <= 0:
            raise ValueError("pick stages must take strictly positive time")
        if min(self.cart_capacity, self.dto_slots, self.sto_slots, self.pack_slots) < 1:
            raise ValueError("capacities must be at least 1")

    def kernel_params(self) -> tuple[float, ...]:
        """Flat parameter vector consumed by the planning kernels."""
        return (
            self.ptg_setup,
            self.ptg_per_item,
            self.shuttle_per_tote,
            self.dto_per_item,
            self.sto_sort_per_item,
            self.sto_pack_per_order,
            self.pack_per_order,
            self.transfer,
            float(self.cart_capacity),
        )


def base_type(composition: str, location: str) -> int:
    """Map an order's composition and location to its base-type index."""
    key = (composition, location)
    try:
        return {
            ("SIO", "PTG"): SIO_PTG,
            ("SIO", "GTP"): SIO_GTP,
            ("MIO", "PTG"): MIO_PTG,
            ("MIO", "GTP"): MIO_GTP,
            ("MIO", "BOTH"): MIO_BOTH,
        }[key]
    except KeyError:
        raise ValueError(f"no base type for {composition}/{location}") from None


def item_split(bt: int, items: int) -> tuple[int, int]:
    """Items picked in PtG and totes retrieved from GtP for one order.

    A MIO stored in both areas has its lines split as evenly as possible,
    PtG taking the odd line.
    """
    if bt in (SIO_PTG, MIO_PTG):
        return items, 0
    if bt in (SIO_GTP, MIO_GTP):
        return 0, items
    gtp = items // 2
    return items - gtp, gtp


def route(bt: int, kind: int) -> int:
    return _ROUTE[bt, kind]


def station(bt: int, kind: int) -> int:
    return _STATION[bt, kind]


def uses_picker(bt: int, kind: int) -> bool:
    return _ROUTE[bt, kind] in (1, 2, 3)


def requirements(bt: int, kind: int, n_orders: int, gtp_items: int) -> tuple[int, int, int, int, int]:
    """Pipeline units (picker, shuttle, DtO, StO, pack) a task holds."""
    r = _ROUTE[bt, kind]
    if r == 1:
        return (1, 0, 0, 0, 0)
    if r == 2:
        return (1, 0, 0, 0, 1)
    if r == 3:
        return (1, 1 if gtp_items > 0 else 0, 0, 1, 0)
    if r == 4:
        return (0, 1, 1, 0, 0)
    if bt == SIO_GTP:
        return (0, 1, n_orders, 0, 0)
    return (0, 1, 0, 1, 0)


def stage_times(bt: int, kind: int, n_orders: int, items: int, ptg_items: int, gtp_items: int,
                timing: TimingConfig) -> tuple[float, float, float, float, int]:
    """Return (picker, shuttle, station, latency, transfers) for a task.

    ``station`` is the time the workstation server is busy; ``latency`` is
    the put-wall buffering/packing delay after sorting that holds the slot
    but not the server.  ``transfers`` counts conveyor hops.
    """
    r = _ROUTE[bt, kind]
    picker = timing.ptg_setup + timing.ptg_per_item * ptg_items if r in (1, 2, 3) else 0.0
    shuttle = timing.shuttle_per_tote * gtp_items if r != 1 and r != 2 else 0.0
    st = _STATION[bt, kind]
    if st == NO_STATION:
        return picker, shuttle, 0.0, 0.0, 0
    transfers = 2 if (r == 3 and gtp_items > 0) else 1
    if st == PACK:
        return picker, shuttle, timing.pack_per_order * n_orders, 0.0, transfers
    if st == DTO:
        return picker, shuttle, timing.dto_per_item * items, 0.0, transfers
    return (picker, shuttle, timing.sto_sort_per_item * items,
            timing.sto_pack_per_order * n_orders, transfers)


def processing_times(bt: int, kind: int, n_orders: int, items: int, ptg_items: int, gtp_items: int,
                     timing: TimingConfig) -> tuple[float, float]:
    """(pick time, consolidation time) of a task, ignoring queueing."""
    picker, shuttle, st, latency, transfers = stage_times(
        bt, kind, n_orders, items, ptg_items, gtp_items, timing)
    consolidation = transfers * timing.transfer + st + latency
    return picker + shuttle, consolidation
