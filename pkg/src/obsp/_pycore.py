"""Pure-Python kernels; reference semantics for the compiled ``_core``.

Both modules expose the same two functions and must return identical
results.  Arithmetic is written in the same order in both so that float
keys agree bit for bit.
"""

import numpy as np

# batching rules
GR, LST, POSB, LST_POSB = 0, 1, 2, 3
# sequencing rules; NONE keeps the batching order
NONE, EDD, LPT, SPT, MAXTP, SEQ_LST = -1, 0, 1, 2, 3, 4

SIO_PTG, SIO_GTP, MIO_PTG, MIO_GTP, MIO_BOTH = range(5)


def discounted_returns(rewards, dones, gamma, bootstrap=0.0):
    """G[t] = r[t] + gamma * G[t+1], restarting after every done step.

    ``bootstrap`` stands in for G[T] when the last step is not terminal.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    out = np.empty(len(rewards), dtype=np.float64)
    running = float(bootstrap)
    for t in range(len(rewards) - 1, -1, -1):
        if dones[t]:
            running = 0.0
        running = float(rewards[t]) + gamma * running
        out[t] = running
    return out


def _unit_times(bt, batch, n, items, ptg, gtp, p):
    # p: ptg_setup, ptg_per_item, shuttle, dto, sto_sort, sto_pack, pack, transfer, cart
    if bt == SIO_PTG or bt == MIO_PTG:
        if batch:
            route = 2 if bt == SIO_PTG else 3
        else:
            route = 1
    elif bt == MIO_BOTH:
        route = 3
    else:
        route = 5 if batch else 4
    picker = p[0] + p[1] * ptg if route <= 3 else 0.0
    shuttle = p[2] * gtp if route >= 3 else 0.0
    pick = picker + shuttle
    if route == 1:
        return pick, 0.0
    transfers = 2 if (route == 3 and gtp > 0) else 1
    if route == 2:
        st, lat = p[6] * n, 0.0
    elif route == 4 or (route == 5 and bt == SIO_GTP):
        st, lat = p[3] * items, 0.0
    else:
        st, lat = p[4] * items, p[5] * n
    return pick, transfers * p[7] + st + lat


def plan_units(bt, items, ptg, gtp, cutoff, now, batching, sequencing, params,
               sio_cap=10, mio_cap=12, posb_max=4):
    """Batch and sequence pending orders.

    Inputs are parallel arrays already sorted by (cut-off, id).  Returns
    ``(members, bounds)``: unit ``u`` consists of input positions
    ``members[bounds[u]:bounds[u + 1]]``, units in dispatch priority order.
    """
    p = [float(x) for x in params]
    cart = p[8]
    n = len(bt)
    bt = [int(x) for x in bt]
    items = [int(x) for x in items]
    ptg = [int(x) for x in ptg]
    gtp = [int(x) for x in gtp]
    cutoff = [float(x) for x in cutoff]
    now = float(now)

    # greedy: GtP orders are singletons; PtG-area orders fill homogeneous carts
    units = []
    open_unit = [-1] * 5
    open_items = [0] * 5
    for i in range(n):
        b = bt[i]
        if b == SIO_GTP or b == MIO_GTP:
            units.append([i])
            continue
        cap = sio_cap if b == SIO_PTG else mio_cap
        u = open_unit[b]
        if u >= 0 and len(units[u]) < cap and open_items[b] + ptg[i] <= cart:
            units[u].append(i)
            open_items[b] += ptg[i]
        else:
            open_unit[b] = len(units)
            open_items[b] = ptg[i]
            units.append([i])

    def times(members):
        b = bt[members[0]]
        m = len(members)
        it = pt = gt = 0
        for j in members:
            it += items[j]
            pt += ptg[j]
            gt += gtp[j]
        return _unit_times(b, m > 1, m, it, pt, gt, p)

    final = []
    for members in units:
        m = len(members)
        split = False
        if m > 1:
            if batching == LST or batching == LST_POSB:
                pick, cons = times(members)
                if cutoff[members[0]] - now - (pick + cons) < 0.0:
                    split = True
            if not split and (batching == POSB or batching == LST_POSB) and m <= posb_max:
                split = True
        if split:
            final.extend([j] for j in members)
        else:
            final.append(members)

    if sequencing != NONE:
        keys = []
        for members in final:
            pick, cons = times(members)
            if sequencing == EDD:
                keys.append(cutoff[members[0]])
            elif sequencing == LPT:
                keys.append(-pick)
            elif sequencing == SPT:
                keys.append(pick)
            elif sequencing == MAXTP:
                keys.append(-(pick + cons))
            elif sequencing == SEQ_LST:
                keys.append(cutoff[members[0]] - now - (pick + cons))
            else:
                raise ValueError(f"unknown sequencing rule {sequencing}")
        order = sorted(range(len(final)), key=keys.__getitem__)
        final = [final[u] for u in order]

    bounds = np.zeros(len(final) + 1, dtype=np.int64)
    flat = np.empty(n, dtype=np.int64)
    pos = 0
    for u, members in enumerate(final):
        flat[pos:pos + len(members)] = members
        pos += len(members)
        bounds[u + 1] = pos
    return flat, bounds
