from fractions import Fraction

import numpy as np
import pytest

from obsp import routes
from obsp.env import (N_ACTIONS, STATE_SLOTS, WAIT, EpisodeFinished, ObspEnv, RewardParams,
                      action_meaning, earliness, encode_raw, encode_state, order_type_counts)
from obsp.instance import (Composition, Location, Order, ProblemInstance, ResourceConfig,
                           Scenario, generate_instance)

GOLDEN_RAW = (180, 12, 0, 55, 10, 0, 38, 5, 0, 25, 0, 0, 5, 0, 0)
GOLDEN_ENCODED = (25, 12, 0, 25, 10, 0, 25, 5, 0, 25, 0, 0, 5, 0, 0, 25, 25, 25, 25, 25, 0, 0, 0)


def encode_worked_example():
    return encode_raw(GOLDEN_RAW, 10, 10, 12, 12, 50, 75, 25, 0, 0, 0, n_orders=330, horizon=3600,
                      M=25)


def test_worked_example_golden():
    assert tuple(encode_worked_example()) == GOLDEN_ENCODED


def test_layout_and_actions():
    assert len(STATE_SLOTS) == 23
    assert STATE_SLOTS[15:] == ("p", "g", "d", "v", "b", "t", "u", "n")
    assert action_meaning(0) == ("order", routes.SIO_PTG, 0)
    assert action_meaning(14) == ("order", routes.MIO_BOTH, 2)
    assert action_meaning(15) == ("batch", routes.SIO_PTG, 0)
    assert action_meaning(WAIT) == ("wait", -1, -1)
    with pytest.raises(ValueError):
        action_meaning(31)


def test_earliness_buckets():
    assert earliness(20 * 60) == 1
    assert earliness(15 * 60) == 2
    assert earliness(15 * 60 + 1) == 1
    assert earliness(40 * 60) == 1
    assert earliness(40 * 60 + 1) == 0
    assert earliness(-50) == 2


def test_zero_observation_encodes_full_capacity():
    v = encode_raw(np.zeros(15), 10, 10, 16, 16, 50, 75, 25, 0, 0, 0, n_orders=10, horizon=3600)
    assert v[:15].sum() == 0 and tuple(v[15:20]) == (25,) * 5 and tuple(v[20:]) == (0, 0, 0)


def test_pipeline_rounding_and_extras():
    v = encode_raw(np.zeros(15), 3, 10, 5, 16, 3, 80, 0, 33, 1800, 330, n_orders=330, horizon=3600)
    assert v[15] == 8  # 7.5 rounds up
    assert v[16] == 8  # 7.8125
    assert tuple(v[17:20]) == (3, 25, 0)
    assert v[20] == pytest.approx(2.5)
    assert v[21] == pytest.approx(12.5)
    assert v[22] == 25


def test_reward_terms():
    rp = RewardParams()
    assert rp.terminal(37, 330) == pytest.approx((293 / 330) ** 2, abs=1e-12)
    assert abs(rp.terminal(37, 330) - float(Fraction(293, 330) ** 2)) < 1e-12
    assert rp.terminal(0, 330) == 1.0
    with pytest.raises(ValueError):
        RewardParams(infeasible_penalty=0.01)


def _o(i, comp, items, loc, cutoff=3600):
    return Order(i, Composition(comp), items, Location(loc), 0, cutoff)


def test_infeasible_action_leaves_state():
    env = ObspEnv(ProblemInstance(Scenario.A, (_o(0, "SIO", 1, "PTG"),)))
    s0 = env.reset()
    clock = env.sim.clock
    for k in range(5):
        res = env.step(3)  # SIO-GtP: none pending
        assert res.reward == -0.005 and res.tau == 0 and not res.done
        assert not res.info["feasible"]
        np.testing.assert_array_equal(res.next_state, s0)
    assert env.sim.clock == clock
    assert env.episode_return == pytest.approx(-0.025)


def test_wait_infeasible_while_pick_possible():
    env = ObspEnv(ProblemInstance(Scenario.A, (_o(0, "SIO", 1, "PTG"),)))
    env.reset()
    assert env.mask[0] and not env.mask[WAIT]
    assert env.step(WAIT).reward == -0.005


def test_single_order_episode():
    env = ObspEnv(ProblemInstance(Scenario.A, (_o(0, "SIO", 1, "PTG"),)))
    env.reset()
    a = env.step(0)
    assert a.tau == 0 and not a.done and env.mask[WAIT]
    b = env.step(WAIT)
    assert b.done and b.reward == 1.0 and b.tau == env.timing.ptg_setup + env.timing.ptg_per_item
    assert b.info["w"] == 0
    with pytest.raises(EpisodeFinished):
        env.step(WAIT)


def test_tardy_reward_and_terminal():
    orders = (_o(0, "MIO", 10, "PTG", cutoff=0), _o(1, "SIO", 1, "PTG"))
    env = ObspEnv(ProblemInstance(Scenario.B, orders))
    env.reset()
    env.step(2 * 3 + 2)  # MIO-PtG, overdue bucket
    env.step(0)
    total = 0.0
    while not env.done:
        total += env.step(WAIT).reward
    assert total == pytest.approx(-0.0075 + (1 - 1 / 2) ** 2)


def test_batch_takes_earliest_cutoffs():
    orders = tuple(_o(i, "SIO", 1, "PTG", cutoff=3600 - 0 * i) for i in range(12))
    env = ObspEnv(ProblemInstance(Scenario.A, orders))
    env.reset()
    members, kind = env._selection(15)
    assert members == list(range(10)) and kind == routes.BATCH_PICK
    # one pending order: batch degenerates to pick-by-order
    env = ObspEnv(ProblemInstance(Scenario.A, orders[:1]))
    env.reset()
    assert env._selection(15) == ([0], routes.ORDER_PICK)


def test_batch_respects_cart():
    orders = tuple(_o(i, "MIO", 10, "PTG") for i in range(8))
    env = ObspEnv(ProblemInstance(Scenario.A, orders))
    env.reset()
    members, _ = env._selection(15 + 6)
    assert len(members) == 5


def test_reset_twice_identical():
    inst = generate_instance("B", 200, ResourceConfig(), 4)
    env = ObspEnv(inst)
    a = env.reset()
    env.step(int(np.flatnonzero(env.mask)[0]))
    b = env.reset()
    np.testing.assert_array_equal(a, b)


def test_empty_instance_rejected():
    env = ObspEnv()
    with pytest.raises(ValueError):
        env.reset(ProblemInstance(Scenario.A, ()))


# ------------------------------------------------------- feasibility oracle
def brute_force_mask(env: ObspEnv) -> np.ndarray:
    """Recompute feasibility from the observation and the route table alone."""
    obs = env.observe()
    pool = obs.resource_pool
    free = (pool.p, pool.g, pool.dto_slots_free, pool.sto_slots_free, pool.pack_slots_free)
    by_type = {}
    for o in sorted(obs.pending_orders, key=lambda o: (o.cutoff_time, o.id)):
        k = 3 * o.base_type + earliness(o.cutoff_time - obs.clock)
        by_type.setdefault(k, []).append(o)
    mask = np.zeros(N_ACTIONS, dtype=bool)
    for k, orders in by_type.items():
        bt = k // 3
        first = orders[0]
        split = routes.item_split(bt, first.items)
        req = routes.requirements(bt, routes.ORDER_PICK, 1, split[1])
        mask[k] = all(r <= f for r, f in zip(req, free))
        chosen, load = [], 0
        for o in orders[:10]:
            ptg = routes.item_split(bt, o.items)[0]
            if routes.uses_picker(bt, 1) and load + ptg > env.timing.cart_capacity:
                break
            load += ptg
            chosen.append(o)
        kind = routes.BATCH_PICK if len(chosen) > 1 else routes.ORDER_PICK
        gtp = sum(routes.item_split(bt, o.items)[1] for o in chosen)
        req = routes.requirements(bt, kind, len(chosen), gtp)
        mask[15 + k] = all(r <= f for r, f in zip(req, free))
    mask[WAIT] = not mask[:WAIT].any()
    return mask


def random_states(n_states, seed=0):
    """Yield environments in varied states reached by random feasible play."""
    rng = np.random.default_rng(seed)
    produced = 0
    while produced < n_states:
        rc = ResourceConfig(int(rng.integers(1, 6)), int(rng.integers(1, 9)), 1, 1, 1)
        inst = generate_instance(rng.choice(["A", "B"]), int(rng.integers(20, 200)), rc,
                                 int(rng.integers(1 << 30)))
        from obsp.routes import TimingConfig
        tm = TimingConfig(dto_slots=int(rng.integers(1, 12)), sto_slots=int(rng.integers(1, 12)),
                          pack_slots=int(rng.integers(1, 6)))
        env = ObspEnv(inst, timing=tm)
        env.reset()
        while not env.done and produced < n_states:
            yield env
            produced += 1
            env.step(int(rng.choice(np.flatnonzero(env.mask))))


def test_feasibility_matches_brute_force():
    for env in random_states(300):
        mask = env.feasible_mask()
        assert mask.any()
        np.testing.assert_array_equal(mask, brute_force_mask(env))


def test_incremental_state_matches_pure_encoding():
    for env in random_states(300, seed=1):
        inst = env.instance
        pure = encode_state(env.observe(), env.M, inst.resource_config, inst.n_orders,
                            inst.horizon)
        np.testing.assert_array_equal(env.state, pure)
        counts = order_type_counts(env.observe())
        np.testing.assert_array_equal(env.counts, counts)


def test_w_accounting():
    inst = generate_instance("B", 150, ResourceConfig(2, 2, 1, 1, 1), 8)
    env = ObspEnv(inst)
    env.reset()
    rng = np.random.default_rng(0)
    while not env.done:
        res = env.step(int(rng.choice(np.flatnonzero(env.mask))))
    sim = env.sim
    assert res.info["w"] == sim.tardy + sim.unprocessed == sim.n_orders - sim.shipped
