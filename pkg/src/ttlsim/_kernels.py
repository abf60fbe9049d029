"""Compiled simulation loops.

These replay the arithmetic of :mod:`ttlsim.adaptive` and :mod:`ttlsim.core`
over dense integer object ids.  Instead of an expiry heap, each object's
residency interval is closed lazily at its next request (or at the final
arrival), which gives the same byte-second integral.
"""

import numpy as np
from numba import njit

# policy codes
STATIC_DTTL, STATIC_FTTL, ADAPTIVE_DTTL, ADAPTIVE_FTTL = 0, 1, 2, 3
# event codes
MISS, DEEP_HIT, SHALLOW_HIT, VIRTUAL_HIT = 0, 1, 2, 3


@njit(cache=True)
def gamma(x, y, eps):
    a = x - 1.0 + 1.5 * eps
    b = 1.0 - 0.5 * eps - x
    if b <= 0.0:
        return 1.0
    if a <= 0.0:
        return y
    a = a * a * a * a
    b = b * b * b * b
    if b == 0.0:
        return 1.0
    if a == 0.0:
        return y
    frac = 1.0 / (1.0 + b / a)
    return min(1.0, y + (1.0 - y) * frac)


@njit(cache=True)
def _window(x, t0, width, nw):
    k = int((x - t0) / width)
    if k < 0:
        return 0
    if k >= nw:
        return nw - 1
    return k


@njit(cache=True)
def _add_interval(a, b, w, j, t0, width, nw, integral, full):
    """Add ``w * (b - a)`` byte-seconds to type column ``j``, split by window."""
    if b <= a:
        return
    ia = _window(a, t0, width, nw)
    ib = _window(b, t0, width, nw)
    if ia == ib:
        integral[ia, j] += w * (b - a)
        return
    integral[ia, j] += w * (t0 + (ia + 1) * width - a)
    integral[ib, j] += w * (b - (t0 + ib * width))
    if ib > ia + 1:
        full[ia + 1, j] += w * width
        full[ib, j] -= w * width


@njit(cache=True)
def _step(eta0, alpha, l):
    if alpha == 0.0:
        return eta0
    return eta0 / float(l) ** alpha


@njit(cache=True)
def ttl_kernel(times, objects, types, sizes, n_objects, policy,
               targets, L, size_targets, vartheta, vartheta_s, theta, theta_s,
               eps, eta0, eta_alpha, eta_s0, eta_s_alpha, eta_seconds, scale_eta_s,
               wavg_window, weight_mode, w_max,
               t0, width, nw,
               requests, hits, req_bytes, hit_bytes, integral, theta_sum, theta_s_sum,
               record, rec_event, rec_s, rec_theta, rec_theta_s, rec_v, rec_vs):
    """Run a TTL-family policy; latents and TTLs are updated in place.

    ``weight_mode``: 0 unit hit weight, 1 size, 2 size / w_max.
    Returns the total byte-seconds integral.
    """
    deep = np.zeros(n_objects)
    shallow = np.zeros(n_objects)
    shadow = np.zeros(n_objects)
    start = np.zeros(n_objects)
    rsize = np.zeros(n_objects)
    rtype = np.zeros(n_objects, dtype=np.int64)
    full = np.zeros_like(integral)

    n = len(times)
    l = 0
    size_sum = 0.0
    w_avg = 0.0
    for k in range(n):
        t = times[k]
        c = objects[k]
        i = types[k] - 1
        w = float(sizes[k])
        win = _window(t, t0, width, nw)

        d = deep[c]
        sh = shallow[c]
        sd = shadow[c]
        ev = MISS
        rem = 0.0
        if d > 0.0 and d >= t:
            ev = DEEP_HIT
            rem = d - t
        elif sh > 0.0 and sh >= t:
            ev = SHALLOW_HIT
            rem = sh - t
        elif sd > 0.0 and sd >= t:
            ev = VIRTUAL_HIT

        # close the previous residency of c
        if d > 0.0 or sh > 0.0:
            exp = d if d > 0.0 else sh
            end = exp if exp < t else t
            _add_interval(start[c], end, rsize[c], rtype[c], t0, width, nw, integral, full)
        deep[c] = 0.0
        shallow[c] = 0.0
        shadow[c] = 0.0

        hit = ev == DEEP_HIT or ev == SHALLOW_HIT
        y = 1.0 if hit else 0.0
        s_est = 0.0
        if policy == STATIC_DTTL:
            ttl_d = theta[i]
            ttl_s = 0.0
            promote = True
        elif policy == STATIC_FTTL:
            ttl_d = theta[i]
            ttl_s = theta_s[i]
            promote = ev != MISS
        else:
            if policy == ADAPTIVE_FTTL:
                if ev == DEEP_HIT or ev == SHALLOW_HIT:
                    s_est = theta[i] - rem
                elif ev == VIRTUAL_HIT:
                    s_est = theta[i]
                else:
                    s_est = theta_s[i]
            l += 1
            size_sum += w
            if l == 1 or (l - 1) % wavg_window == 0:
                w_avg = size_sum / l
            eta = _step(eta0, eta_alpha, l)
            if eta_seconds:
                eta /= L[i]
            if weight_mode == 0:
                w_hat = 1.0
            elif weight_mode == 1:
                w_hat = w
            else:
                w_hat = w / w_max
            v = vartheta[i] + eta * w_hat * (targets[i] - y)
            v = min(1.0, max(0.0, v))
            vartheta[i] = v
            if policy == ADAPTIVE_DTTL:
                theta[i] = L[i] * v
                ttl_d = theta[i]
                ttl_s = 0.0
                promote = True
            else:
                s_star = size_targets[i]
                eta_s = _step(eta_s0, eta_s_alpha, l)
                if scale_eta_s:
                    eta_s /= s_star * w_avg
                vs = vartheta_s[i] + eta_s * w * (s_star - s_est)
                vs = min(1.0, max(0.0, vs))
                vartheta_s[i] = vs
                th = L[i] * v
                theta[i] = th
                theta_s[i] = th * gamma(v, vs, eps)
                ttl_d = theta[i]
                ttl_s = theta_s[i]
                promote = ev != MISS

        if promote:
            if ttl_d > 0.0:
                deep[c] = t + ttl_d
                start[c] = t
                rsize[c] = w
                rtype[c] = i
        else:
            if ttl_d > 0.0:
                shadow[c] = t + ttl_d
                if ttl_s > 0.0:
                    shallow[c] = t + ttl_s
                    start[c] = t
                    rsize[c] = w
                    rtype[c] = i

        requests[win, i] += 1.0
        req_bytes[win, i] += w
        if hit:
            hits[win, i] += 1.0
            hit_bytes[win, i] += w
        theta_sum[win, i] += theta[i]
        theta_s_sum[win, i] += theta_s[i]
        if record:
            rec_event[k] = ev
            rec_s[k] = s_est
            rec_theta[k] = theta[i]
            rec_theta_s[k] = theta_s[i]
            rec_v[k] = vartheta[i]
            rec_vs[k] = vartheta_s[i]

    if n > 0:
        t_end = times[n - 1]
        for c in range(n_objects):
            d = deep[c]
            sh = shallow[c]
            if d > 0.0 or sh > 0.0:
                exp = d if d > 0.0 else sh
                end = exp if exp < t_end else t_end
                _add_interval(start[c], end, rsize[c], rtype[c], t0, width, nw, integral, full)
    total = 0.0
    for j in range(integral.shape[1]):
        acc = 0.0
        for wdx in range(nw):
            acc += full[wdx, j]
            integral[wdx, j] += acc
            total += integral[wdx, j]
    return total


@njit(cache=True)
def lru_kernel(times, objects, types, sizes, n_objects, capacity,
               t0, width, nw, requests, hits, req_bytes, hit_bytes, integral):
    """Byte-capacity LRU with a doubly linked recency list (head = most recent)."""
    prev = np.full(n_objects, -1, dtype=np.int64)
    nxt = np.full(n_objects, -1, dtype=np.int64)
    inside = np.zeros(n_objects, dtype=np.bool_)
    osize = np.zeros(n_objects)
    otype = np.zeros(n_objects, dtype=np.int64)
    n_types = integral.shape[1]
    type_bytes = np.zeros(n_types)
    full = np.zeros_like(integral)
    head = -1
    tail = -1
    current = 0.0
    n = len(times)
    t_prev = times[0] if n > 0 else 0.0
    for k in range(n):
        t = times[k]
        for j in range(n_types):
            if type_bytes[j] > 0.0:
                _add_interval(t_prev, t, type_bytes[j], j, t0, width, nw, integral, full)
        t_prev = t
        c = objects[k]
        i = types[k] - 1
        w = float(sizes[k])
        win = _window(t, t0, width, nw)
        requests[win, i] += 1.0
        req_bytes[win, i] += w
        if inside[c]:
            hits[win, i] += 1.0
            hit_bytes[win, i] += w
            if head != c:
                # unlink and move to head
                p = prev[c]
                q = nxt[c]
                nxt[p] = q
                if q >= 0:
                    prev[q] = p
                else:
                    tail = p
                prev[c] = -1
                nxt[c] = head
                prev[head] = c
                head = c
            continue
        if w > capacity:
            continue
        inside[c] = True
        osize[c] = w
        otype[c] = i
        current += w
        type_bytes[i] += w
        prev[c] = -1
        nxt[c] = head
        if head >= 0:
            prev[head] = c
        head = c
        if tail < 0:
            tail = c
        while current > capacity:
            v = tail
            tail = prev[v]
            if tail >= 0:
                nxt[tail] = -1
            else:
                head = -1
            prev[v] = -1
            nxt[v] = -1
            inside[v] = False
            current -= osize[v]
            type_bytes[otype[v]] -= osize[v]
    total = 0.0
    for j in range(n_types):
        acc = 0.0
        for wdx in range(nw):
            acc += full[wdx, j]
            integral[wdx, j] += acc
            total += integral[wdx, j]
    return total
