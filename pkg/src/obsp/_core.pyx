# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for batch planning and discounted returns.

Semantics are defined by ``obsp._pycore``; this module must agree with it
exactly.
"""

import numpy as np

cdef enum:
    GR = 0
    LST = 1
    POSB = 2
    LST_POSB = 3

cdef enum:
    NONE = -1
    EDD = 0
    LPT = 1
    SPT = 2
    MAXTP = 3
    SEQ_LST = 4

cdef enum:
    SIO_PTG = 0
    SIO_GTP = 1
    MIO_PTG = 2
    MIO_GTP = 3
    MIO_BOTH = 4


def discounted_returns(rewards, dones, double gamma, double bootstrap=0.0):
    cdef double[::1] r = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef unsigned char[::1] d = np.ascontiguousarray(dones, dtype=np.bool_).view(np.uint8)
    cdef Py_ssize_t n = r.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double running = bootstrap
    cdef Py_ssize_t t
    for t in range(n - 1, -1, -1):
        if d[t]:
            running = 0.0
        running = r[t] + gamma * running
        o[t] = running
    return out


cdef inline void unit_times(int bt, bint batch, long n, long items, long ptg, long gtp,
                            double* p, double* pick, double* cons) noexcept nogil:
    cdef int route
    cdef double picker = 0.0, shuttle = 0.0, st, lat
    cdef int transfers
    if bt == SIO_PTG or bt == MIO_PTG:
        if batch:
            route = 2 if bt == SIO_PTG else 3
        else:
            route = 1
    elif bt == MIO_BOTH:
        route = 3
    else:
        route = 5 if batch else 4
    if route <= 3:
        picker = p[0] + p[1] * ptg
    if route >= 3:
        shuttle = p[2] * gtp
    pick[0] = picker + shuttle
    if route == 1:
        cons[0] = 0.0
        return
    transfers = 2 if (route == 3 and gtp > 0) else 1
    if route == 2:
        st = p[6] * n
        lat = 0.0
    elif route == 4 or (route == 5 and bt == SIO_GTP):
        st = p[3] * items
        lat = 0.0
    else:
        st = p[4] * items
        lat = p[5] * n
    cons[0] = transfers * p[7] + st + lat


cdef void stable_sort(long[::1] idx, double[::1] key, long[::1] tmp, Py_ssize_t n) noexcept nogil:
    # bottom-up merge sort; equal keys keep their relative order
    cdef Py_ssize_t width = 1, lo, mid, hi, i, j, k
    cdef long[::1] src = idx
    cdef long[::1] dst = tmp
    cdef long[::1] swap
    cdef bint in_tmp = False
    while width < n:
        lo = 0
        while lo < n:
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i = lo
            j = mid
            k = lo
            while i < mid and j < hi:
                if key[src[j]] < key[src[i]]:
                    dst[k] = src[j]
                    j += 1
                else:
                    dst[k] = src[i]
                    i += 1
                k += 1
            while i < mid:
                dst[k] = src[i]
                i += 1
                k += 1
            while j < hi:
                dst[k] = src[j]
                j += 1
                k += 1
            lo += 2 * width
        swap = src
        src = dst
        dst = swap
        in_tmp = not in_tmp
        width *= 2
    if in_tmp:
        for i in range(n):
            idx[i] = tmp[i]


def plan_units(bt_in, items_in, ptg_in, gtp_in, cutoff_in, double now, int batching,
               int sequencing, params, int sio_cap=10, int mio_cap=12, int posb_max=4):
    cdef long[::1] bt = np.ascontiguousarray(bt_in, dtype=np.int64)
    cdef long[::1] items = np.ascontiguousarray(items_in, dtype=np.int64)
    cdef long[::1] ptg = np.ascontiguousarray(ptg_in, dtype=np.int64)
    cdef long[::1] gtp = np.ascontiguousarray(gtp_in, dtype=np.int64)
    cdef double[::1] cutoff = np.ascontiguousarray(cutoff_in, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(params, dtype=np.float64)
    if pv.shape[0] < 9:
        raise ValueError("params must hold 9 timing values")
    if sequencing < NONE or sequencing > SEQ_LST:
        raise ValueError(f"unknown sequencing rule {sequencing}")
    cdef double* p = &pv[0]
    cdef double cart = p[8]
    cdef Py_ssize_t n = bt.shape[0]

    # greedy pass: unit id per order, units numbered in creation order
    unit_of_arr = np.empty(n, dtype=np.int64)
    cdef long[::1] unit_of = unit_of_arr
    cdef long open_unit[5]
    cdef long open_size[5]
    cdef long open_items[5]
    cdef Py_ssize_t i, j, u, v
    cdef long b, cap, n_units = 0
    for i in range(5):
        open_unit[i] = -1
        open_size[i] = 0
        open_items[i] = 0
    with nogil:
        for i in range(n):
            b = bt[i]
            if b == SIO_GTP or b == MIO_GTP:
                unit_of[i] = n_units
                n_units += 1
                continue
            cap = sio_cap if b == SIO_PTG else mio_cap
            if open_unit[b] >= 0 and open_size[b] < cap and open_items[b] + ptg[i] <= cart:
                unit_of[i] = open_unit[b]
                open_size[b] += 1
                open_items[b] += ptg[i]
            else:
                open_unit[b] = n_units
                open_size[b] = 1
                open_items[b] = ptg[i]
                unit_of[i] = n_units
                n_units += 1

    # group members per unit (inputs are cut-off sorted, so members stay sorted)
    start_arr = np.zeros(n_units + 1, dtype=np.int64)
    members_arr = np.empty(n, dtype=np.int64)
    cdef long[::1] start = start_arr
    cdef long[::1] members = members_arr
    fill_arr = np.zeros(n_units, dtype=np.int64)
    cdef long[::1] fill = fill_arr
    usum_arr = np.zeros((n_units, 3), dtype=np.int64)
    cdef long[:, ::1] usum = usum_arr
    with nogil:
        for i in range(n):
            start[unit_of[i] + 1] += 1
        for u in range(n_units):
            start[u + 1] += start[u]
        for i in range(n):
            u = unit_of[i]
            members[start[u] + fill[u]] = i
            fill[u] += 1
            usum[u, 0] += items[i]
            usum[u, 1] += ptg[i]
            usum[u, 2] += gtp[i]

    # dismantling pass; final units are (first member offset, size)
    fstart_arr = np.empty(n, dtype=np.int64)
    fsize_arr = np.empty(n, dtype=np.int64)
    cdef long[::1] fstart = fstart_arr
    cdef long[::1] fsize = fsize_arr
    cdef Py_ssize_t n_final = 0
    cdef long m
    cdef bint split
    cdef double pick, cons
    with nogil:
        for u in range(n_units):
            m = start[u + 1] - start[u]
            split = False
            if m > 1:
                if batching == LST or batching == LST_POSB:
                    unit_times(bt[members[start[u]]], True, m, usum[u, 0], usum[u, 1], usum[u, 2],
                               p, &pick, &cons)
                    if cutoff[members[start[u]]] - now - (pick + cons) < 0.0:
                        split = True
                if not split and (batching == POSB or batching == LST_POSB) and m <= posb_max:
                    split = True
            if split:
                for j in range(start[u], start[u + 1]):
                    fstart[n_final] = j
                    fsize[n_final] = 1
                    n_final += 1
            else:
                fstart[n_final] = start[u]
                fsize[n_final] = m
                n_final += 1

    order_arr = np.arange(n_final, dtype=np.int64)
    cdef long[::1] order = order_arr
    cdef long first, it, pt, gt
    cdef double[::1] key
    cdef long[::1] tmp
    if sequencing != NONE and n_final > 1:
        key_arr = np.empty(n_final, dtype=np.float64)
        key = key_arr
        tmp = np.empty(n_final, dtype=np.int64)
        with nogil:
            for v in range(n_final):
                first = fstart[v]
                m = fsize[v]
                if m == 1:
                    i = members[first]
                    it = items[i]
                    pt = ptg[i]
                    gt = gtp[i]
                else:
                    u = unit_of[members[first]]
                    it = usum[u, 0]
                    pt = usum[u, 1]
                    gt = usum[u, 2]
                unit_times(bt[members[first]], m > 1, m, it, pt, gt, p, &pick, &cons)
                if sequencing == EDD:
                    key[v] = cutoff[members[first]]
                elif sequencing == LPT:
                    key[v] = -pick
                elif sequencing == SPT:
                    key[v] = pick
                elif sequencing == MAXTP:
                    key[v] = -(pick + cons)
                else:
                    key[v] = cutoff[members[first]] - now - (pick + cons)
            stable_sort(order, key, tmp, n_final)

    flat = np.empty(n, dtype=np.int64)
    bounds = np.zeros(n_final + 1, dtype=np.int64)
    cdef long[::1] fl = flat
    cdef long[::1] bd = bounds
    cdef Py_ssize_t pos = 0
    with nogil:
        for v in range(n_final):
            u = order[v]
            for j in range(fsize[u]):
                fl[pos] = members[fstart[u] + j]
                pos += 1
            bd[v + 1] = pos
    return flat, bounds
