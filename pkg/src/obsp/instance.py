"""Problem instances: orders, resource settings, generation and CSV I/O."""

from __future__ import annotations

import enum
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import routes

# Share of orders per item count 1..10; the published column sums to 99.8%.
ITEM_COUNT_WEIGHTS = (74.0, 16.0, 5.0, 2.0, 1.0, 1.0, 0.2, 0.2, 0.2, 0.2)
ITEM_PROBS = np.asarray(ITEM_COUNT_WEIGHTS) / sum(ITEM_COUNT_WEIGHTS)
ITEM_CDF = np.cumsum(ITEM_PROBS)
ITEM_CDF[-1] = 1.0

PTG_SHARE = 0.7
DEFAULT_HORIZON = 3600
DEFAULT_SLACK_FLOOR = 900


class Composition(str, enum.Enum):
    SIO = "SIO"
    MIO = "MIO"


class Location(str, enum.Enum):
    PTG = "PTG"
    GTP = "GTP"
    BOTH = "BOTH"


class Status(enum.IntEnum):
    PENDING = 0
    ASSIGNED = 1
    PICKING = 2
    CONSOLIDATING = 3
    SHIPPED = 4
    TARDY_SHIPPED = 5
    UNPROCESSED = 6

    @property
    def terminal(self) -> bool:
        return self >= Status.SHIPPED


class Scenario(str, enum.Enum):
    A = "A"
    B = "B"

    @property
    def interval(self) -> int:
        """Release and cut-off boundary spacing in seconds."""
        return 3600 if self is Scenario.A else 900


class InvalidOrderError(ValueError):
    pass


class InstanceFormatError(ValueError):
    """Malformed instance file; the message names the line and field."""


@dataclass(frozen=True)
class Order:
    id: int
    composition: Composition
    items: int
    location: Location
    release_time: int
    cutoff_time: int
    status: Status = Status.PENDING

    def __post_init__(self):
        if self.items < 1:
            raise InvalidOrderError(f"order {self.id}: items must be positive")
        if self.composition is Composition.SIO and self.items != 1:
            raise InvalidOrderError(f"order {self.id}: SIO must have exactly 1 item")
        if self.composition is Composition.MIO and self.items < 2:
            raise InvalidOrderError(f"order {self.id}: MIO needs at least 2 items")
        if self.location is Location.BOTH and self.composition is not Composition.MIO:
            raise InvalidOrderError(f"order {self.id}: only MIOs can span both areas")
        if self.release_time < 0:
            raise InvalidOrderError(f"order {self.id}: negative release time")
        if self.cutoff_time < self.release_time:
            raise InvalidOrderError(f"order {self.id}: cut-off before release")

    @property
    def base_type(self) -> int:
        return routes.base_type(self.composition.value, self.location.value)


@dataclass(frozen=True)
class ResourceConfig:
    pickers: int = 5
    shuttles: int = 8
    dto_stations: int = 1
    sto_stations: int = 1
    pack_stations: int = 1

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {value!r}")

    @property
    def label(self) -> str:
        return (f"{self.pickers}-{self.shuttles}-{self.dto_stations}-"
                f"{self.sto_stations}-{self.pack_stations}")

    @classmethod
    def from_label(cls, label: str) -> "ResourceConfig":
        """Parse ``pickers-shuttles-dto-sto-pack``, e.g. ``5-8-1-1-1``."""
        parts = label.strip().split("-")
        if len(parts) != 5 or not all(p.isdigit() for p in parts):
            raise ValueError(f"resource label must look like 5-8-1-1-1, got {label!r}")
        return cls(*map(int, parts))


def parse_setting(label: str) -> tuple[int, ResourceConfig]:
    """Split an instance-size label ``330-5-8-1-1-1`` into orders and resources."""
    head, _, rest = label.strip().partition("-")
    if not head.isdigit() or int(head) < 1:
        raise ValueError(f"setting must look like 330-5-8-1-1-1, got {label!r}")
    return int(head), ResourceConfig.from_label(rest)


@dataclass(frozen=True)
class ProblemInstance:
    scenario: Scenario
    orders: tuple[Order, ...]
    resource_config: ResourceConfig = field(default_factory=ResourceConfig)
    horizon: int = DEFAULT_HORIZON
    seed: int = 0

    @property
    def n_orders(self) -> int:
        return len(self.orders)

    @property
    def setting(self) -> str:
        return f"{self.n_orders}-{self.resource_config.label}"

    def validate(self) -> None:
        if not self.orders:
            raise ValueError("an instance needs at least one order")
        interval = self.scenario.interval
        if self.horizon <= 0 or self.horizon % interval:
            raise ValueError(f"horizon {self.horizon} is not a multiple of {interval} s")
        seen = set()
        for o in self.orders:
            if o.id in seen:
                raise ValueError(f"duplicate order id {o.id}")
            seen.add(o.id)
            if not 0 <= o.release_time < self.horizon:
                raise ValueError(f"order {o.id}: release outside [0, horizon)")
            if o.release_time % interval or o.cutoff_time % interval:
                raise ValueError(f"order {o.id}: times off the {interval} s boundaries")


def items_from_quantile(q):
    """Inverse CDF of the items-per-order distribution (scalar or array)."""
    k = np.searchsorted(ITEM_CDF, q, side="left") + 1
    return int(k) if np.ndim(k) == 0 else k.astype(np.int64)


def sample_items_per_order(rng: np.random.Generator) -> int:
    return items_from_quantile(rng.random())


def _release_boundaries(scenario: Scenario, horizon: int) -> np.ndarray:
    return np.arange(0, horizon, scenario.interval, dtype=np.int64)


def generate_instance(scenario: Scenario | str, n_orders: int, resource_config: ResourceConfig,
                      seed: int, *, horizon: int = DEFAULT_HORIZON,
                      slack_floor: int = DEFAULT_SLACK_FLOOR,
                      ptg_share: float = PTG_SHARE) -> ProblemInstance:
    """Draw an instance; the output depends only on the arguments."""
    scenario = Scenario(scenario)
    if n_orders < 1:
        raise ValueError("n_orders must be positive")
    interval = scenario.interval
    if horizon <= 0 or horizon % interval:
        raise ValueError(f"horizon {horizon} is not a multiple of {interval} s")

    rng = np.random.default_rng(seed)
    items = items_from_quantile(rng.random(n_orders))
    line_u = rng.random((n_orders, len(ITEM_COUNT_WEIGHTS)))
    releases = _release_boundaries(scenario, horizon)
    release = releases[rng.integers(0, len(releases), n_orders)]
    cut_u = rng.random(n_orders)

    cut_bounds = np.arange(interval, horizon + 1, interval, dtype=np.int64)
    orders = []
    for i in range(n_orders):
        k = int(items[i])
        in_ptg = line_u[i, :k] < ptg_share
        if in_ptg.all():
            loc = Location.PTG
        elif not in_ptg.any():
            loc = Location.GTP
        else:
            loc = Location.BOTH
        eligible = cut_bounds[cut_bounds >= release[i] + slack_floor]
        if len(eligible) == 0:
            raise ValueError(f"no cut-off boundary leaves {slack_floor} s of slack "
                             f"after release {release[i]}")
        cutoff = eligible[min(int(cut_u[i] * len(eligible)), len(eligible) - 1)]
        orders.append(Order(
            id=i,
            composition=Composition.SIO if k == 1 else Composition.MIO,
            items=k,
            location=loc,
            release_time=int(release[i]),
            cutoff_time=int(cutoff),
        ))
    inst = ProblemInstance(scenario, tuple(orders), resource_config, horizon, int(seed))
    inst.validate()
    return inst


CSV_COLUMNS = ("id", "composition", "items", "location", "release_s", "cutoff_s")
_HEADER_RE = re.compile(r"(\w+)=(\S+)")


def dumps_instance(instance: ProblemInstance) -> str:
    lines = [
        f"# obsp-instance scenario={instance.scenario.value} seed={instance.seed} "
        f"horizon={instance.horizon} resources={instance.resource_config.label}",
        ",".join(CSV_COLUMNS),
    ]
    for o in instance.orders:
        lines.append(f"{o.id},{o.composition.value},{o.items},{o.location.value},"
                     f"{o.release_time},{o.cutoff_time}")
    return "\n".join(lines) + "\n"


def save_instance(instance: ProblemInstance, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_instance(instance))
    os.replace(tmp, path)


def _int_field(raw: str, lineno: int, name: str, minimum: int | None = None) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise InstanceFormatError(f"line {lineno}: field '{name}': not an integer: {raw!r}") from None
    if minimum is not None and value < minimum:
        raise InstanceFormatError(f"line {lineno}: field '{name}': must be >= {minimum}, got {value}")
    return value


def loads_instance(text: str) -> ProblemInstance:
    meta: dict[str, str] = {}
    orders = []
    header_seen = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            meta.update(_HEADER_RE.findall(line))
            continue
        cells = [c.strip() for c in line.split(",")]
        if not header_seen:
            if tuple(cells) != CSV_COLUMNS:
                raise InstanceFormatError(
                    f"line {lineno}: expected header {','.join(CSV_COLUMNS)}, got {line!r}")
            header_seen = True
            continue
        if len(cells) != len(CSV_COLUMNS):
            raise InstanceFormatError(
                f"line {lineno}: expected {len(CSV_COLUMNS)} fields, got {len(cells)}")
        raw = dict(zip(CSV_COLUMNS, cells))
        oid = _int_field(raw["id"], lineno, "id", 0)
        try:
            comp = Composition(raw["composition"])
        except ValueError:
            raise InstanceFormatError(
                f"line {lineno}: field 'composition': expected SIO|MIO, got {raw['composition']!r}") from None
        try:
            loc = Location(raw["location"])
        except ValueError:
            raise InstanceFormatError(
                f"line {lineno}: field 'location': expected PTG|GTP|BOTH, got {raw['location']!r}") from None
        items = _int_field(raw["items"], lineno, "items", 1)
        release = _int_field(raw["release_s"], lineno, "release_s", 0)
        cutoff = _int_field(raw["cutoff_s"], lineno, "cutoff_s", 0)
        try:
            orders.append(Order(oid, comp, items, loc, release, cutoff))
        except InvalidOrderError as exc:
            raise InstanceFormatError(f"line {lineno}: invariant violation: {exc}") from None
    if not header_seen:
        raise InstanceFormatError("missing header row")
    try:
        inst = ProblemInstance(
            scenario=Scenario(meta.get("scenario", "A")),
            orders=tuple(orders),
            resource_config=ResourceConfig.from_label(meta.get("resources", "5-8-1-1-1")),
            horizon=int(meta.get("horizon", DEFAULT_HORIZON)),
            seed=int(meta.get("seed", 0)),
        )
        inst.validate()
    except ValueError as exc:
        if isinstance(exc, InstanceFormatError):
            raise
        raise InstanceFormatError(f"line 1: header/instance: {exc}") from None
    return inst


def load_instance(path) -> ProblemInstance:
    return loads_instance(Path(path).read_text())
