import numpy as np
import pytest

from obsp.instance import (
    ITEM_COUNT_WEIGHTS,
    Composition,
    InstanceFormatError,
    InvalidOrderError,
    Location,
    Order,
    ProblemInstance,
    ResourceConfig,
    Scenario,
    dumps_instance,
    generate_instance,
    items_from_quantile,
    load_instance,
    loads_instance,
    parse_setting,
    save_instance,
)


def test_items_quantile_table():
    assert items_from_quantile(0.5) == 1
    assert items_from_quantile(0.999) == 10
    assert items_from_quantile(0.0) == 1
    # renormalised cumulative weights: 74/99.8 is the first step
    assert items_from_quantile(74.0 / 99.8 - 1e-9) == 1
    assert items_from_quantile(74.0 / 99.8 + 1e-9) == 2


def test_items_mean_matches_table():
    w = np.asarray(ITEM_COUNT_WEIGHTS)
    expect = (w * np.arange(1, 11)).sum() / w.sum()
    assert expect == pytest.approx(146.8 / 99.8)
    rng = np.random.default_rng(7)
    draws = items_from_quantile(rng.random(200_000))
    assert draws.mean() == pytest.approx(expect, abs=0.01)


def test_generation_deterministic():
    a = generate_instance("B", 330, ResourceConfig(), 11)
    b = generate_instance("B", 330, ResourceConfig(), 11)
    c = generate_instance("B", 330, ResourceConfig(), 12)
    assert a == b
    assert a != c


def test_generated_orders_satisfy_invariants():
    inst = generate_instance("B", 2000, ResourceConfig(), 3)
    comp = np.array([o.composition is Composition.SIO for o in inst.orders])
    items = np.array([o.items for o in inst.orders])
    assert np.all(items[comp] == 1) and np.all(items[~comp] >= 2)
    for o in inst.orders:
        assert o.release_time % 900 == 0 and o.cutoff_time % 900 == 0
        assert o.cutoff_time >= o.release_time + 900
        assert o.cutoff_time <= inst.horizon
    sio_ptg = np.mean([o.location is Location.PTG for o in inst.orders if o.items == 1])
    assert sio_ptg == pytest.approx(0.7, abs=0.03)


def test_scenario_a_single_release_and_cutoff():
    inst = generate_instance("A", 300, ResourceConfig(), 0)
    assert {o.release_time for o in inst.orders} == {0}
    assert {o.cutoff_time for o in inst.orders} == {3600}


def test_scenario_b_cutoff_spread():
    # cut-offs uniform over admissible boundaries; shares near 52/27/15/6 %
    inst = generate_instance("B", 20_000, ResourceConfig(), 5)
    slack = np.array([o.cutoff_time - o.release_time for o in inst.orders])
    shares = [np.mean(slack == s) for s in (900, 1800, 2700, 3600)]
    assert shares == pytest.approx([0.521, 0.271, 0.146, 0.0625], abs=0.015)


def test_order_invariants_rejected():
    with pytest.raises(InvalidOrderError):
        Order(0, Composition.SIO, 2, Location.PTG, 0, 900)
    with pytest.raises(InvalidOrderError):
        Order(0, Composition.MIO, 1, Location.PTG, 0, 900)
    with pytest.raises(InvalidOrderError):
        Order(0, Composition.SIO, 1, Location.BOTH, 0, 900)
    with pytest.raises(InvalidOrderError):
        Order(0, Composition.MIO, 3, Location.GTP, 900, 0)


def test_setting_labels():
    n, rc = parse_setting("300-3-10-1-1-1")
    assert n == 300 and rc == ResourceConfig(3, 10, 1, 1, 1)
    assert generate_instance("A", 5, rc, 0).setting == "5-3-10-1-1-1"
    with pytest.raises(ValueError):
        parse_setting("300-3-10")
    with pytest.raises(ValueError):
        ResourceConfig(0, 1, 1, 1, 1)


def test_csv_round_trip(tmp_path):
    inst = generate_instance("B", 120, ResourceConfig(4, 6, 1, 2, 1), 9)
    path = tmp_path / "i.csv"
    save_instance(inst, path)
    assert load_instance(path) == inst
    assert dumps_instance(load_instance(path)) == path.read_text()


@pytest.mark.parametrize("line, field", [
    ("0,SIO,x,PTG,0,900", "items"),
    ("0,XIO,1,PTG,0,900", "composition"),
    ("0,SIO,1,MARS,0,900", "location"),
    ("0,SIO,1,PTG,-5,900", "release_s"),
])
def test_csv_errors_name_line_and_field(line, field):
    text = "id,composition,items,location,release_s,cutoff_s\n" + line + "\n"
    with pytest.raises(InstanceFormatError, match=f"line 2: field '{field}'"):
        loads_instance(text)


def test_csv_invariant_violation_reported():
    text = "id,composition,items,location,release_s,cutoff_s\n0,SIO,3,PTG,0,900\n"
    with pytest.raises(InstanceFormatError, match="line 2: invariant"):
        loads_instance(text)


def test_empty_instance_rejected():
    with pytest.raises(ValueError):
        ProblemInstance(Scenario.A, ()).validate()
    with pytest.raises(ValueError):
        generate_instance("A", 0, ResourceConfig(), 0)
