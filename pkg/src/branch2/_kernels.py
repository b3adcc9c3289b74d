"""JIT-compiled inner loops. Every kernel takes a numpy Generator so that each
replicate owns an independent, reproducible stream."""
import math

import numpy as np
from numba import njit

INVERSION_MAX_N = 64
_REBUILD_EVERY = 4096

STATUS_OK = 0
STATUS_NONFINITE_RATE = 1
STATUS_MAX_EVENTS = 2

EV_SPLIT = 0
EV_BIRTH = 1
EV_DEATH = 2

DUAL_SCALE_THETA = 0
DUAL_SCALE_ONE_MINUS_THETA = 1
DUAL_MERGE = 2


@njit(nogil=True, cache=True)
def binomial_draw(rng, n, theta):
    if n <= 0:
        return 0
    if n <= INVERSION_MAX_N:
        flip = theta > 0.5
        p = 1.0 - theta if flip else theta
        u = rng.random()
        ratio = p / (1.0 - p)
        pk = (1.0 - p) ** n
        cum = pk
        k = 0
        while u > cum and k < n:
            pk *= (n - k) / (k + 1.0) * ratio
            k += 1
            cum += pk
        return n - k if flip else k
    # numpy's BTPE rejection sampler, exact
    return rng.binomial(n, theta)


@njit(nogil=True, cache=True)
def _grow_f(a, size):
    out = np.empty(size, a.dtype)
    out[: a.size] = a
    return out


# -- particle model -------------------------------------------------------------

@njit(nogil=True, cache=True)
def particle_rates(n, rbar, p, sigma, K, lam, zeta):
    if p == 0:
        split = rbar
    else:
        split = rbar * (1.0 + (zeta * n) ** p)
    birth = (sigma / zeta + K) * n
    death = n * (sigma / zeta + lam * (zeta * n - zeta))
    return split, birth, death


@njit(nogil=True, cache=True)
def _fenwick_build(tree, rates, cap):
    tree[0] = 0.0
    for i in range(1, cap + 1):
        tree[i] = rates[i - 1]
    for i in range(1, cap + 1):
        j = i + (i & -i)
        if j <= cap:
            tree[j] += tree[i]


@njit(nogil=True, cache=True)
def _fenwick_add(tree, cap, i, delta):
    j = i + 1
    while j <= cap:
        tree[j] += delta
        j += j & -j


@njit(nogil=True, cache=True)
def _fenwick_find(tree, cap, u):
    """Smallest 0-based index whose inclusive prefix sum exceeds u (cap is a power of two)."""
    pos = 0
    step = cap
    while step > 0:
        nxt = pos + step
        if nxt <= cap and tree[nxt] <= u:
            pos = nxt
            u -= tree[nxt]
        step >>= 1
    return pos


@njit(nogil=True, cache=True)
def run_particle(counts0, rbar, p, theta, sigma, K, lam, zeta, t_end, obs_times, rng, record, max_events):
    n0 = counts0.size
    cap = 16
    while cap < 2 * n0:
        cap *= 2
    counts = np.zeros(cap, np.int64)
    rates = np.zeros(cap)
    split_r = np.zeros(cap)
    birth_r = np.zeros(cap)
    tree = np.zeros(cap + 1)
    ncells = n0
    for i in range(n0):
        counts[i] = counts0[i]
        s, b, d = particle_rates(counts0[i], rbar, p, sigma, K, lam, zeta)
        split_r[i] = s
        birth_r[i] = b
        rates[i] = s + b + d
    _fenwick_build(tree, rates, cap)

    n_obs = obs_times.size
    snap_vals = np.empty(max(16, 2 * n0 * max(n_obs, 1)), np.int64)
    snap_off = np.zeros(n_obs + 1, np.int64)
    ns = 0
    oi = 0

    ev_cap = 1024 if record else 1
    ev_t = np.empty(ev_cap)
    ev_kind = np.empty(ev_cap, np.int8)
    ev_cell = np.empty(ev_cap, np.int64)
    ev_k = np.empty(ev_cap, np.int64)
    n_ev = 0

    t = 0.0
    status = STATUS_OK
    updates = 0
    while True:
        total = tree[cap]
        if not math.isfinite(total):
            status = STATUS_NONFINITE_RATE
            break
        if total > 0.0:
            t_next = t + rng.exponential() / total
        else:
            t_next = math.inf
        # observations strictly before the next jump see the current state
        while oi < n_obs and obs_times[oi] < t_next and obs_times[oi] <= t_end:
            if ns + ncells > snap_vals.size:
                snap_vals = _grow_f(snap_vals, 2 * (ns + ncells))
            for i in range(ncells):
                snap_vals[ns + i] = counts[i]
            ns += ncells
            oi += 1
            snap_off[oi] = ns
        if t_next > t_end:
            t = t_end
            break
        if n_ev >= max_events:
            status = STATUS_MAX_EVENTS
            break
        t = t_next

        c = _fenwick_find(tree, cap, rng.random() * total)
        if c >= ncells:
            c = ncells - 1
        while rates[c] <= 0.0 and c > 0:
            c -= 1
        n = counts[c]
        u = rng.random() * rates[c]
        if u < split_r[c] or n == 0:
            kind = EV_SPLIT
        elif u < split_r[c] + birth_r[c]:
            kind = EV_BIRTH
        else:
            kind = EV_DEATH

        k = 0
        if kind == EV_SPLIT:
            k = binomial_draw(rng, n, theta)
            if ncells == cap:
                new_cap = 2 * cap
                counts = _grow_f(counts, new_cap)
                rates = _grow_f(rates, new_cap)
                split_r = _grow_f(split_r, new_cap)
                birth_r = _grow_f(birth_r, new_cap)
                for i in range(cap, new_cap):
                    counts[i] = 0
                    rates[i] = 0.0
                    split_r[i] = 0.0
                    birth_r[i] = 0.0
                cap = new_cap
                tree = np.zeros(cap + 1)
                _fenwick_build(tree, rates, cap)
            counts[c] = k
            counts[ncells] = n - k
            changed_a = c
            changed_b = ncells
            ncells += 1
        elif kind == EV_BIRTH:
            counts[c] = n + 1
            changed_a = c
            changed_b = -1
        else:
            counts[c] = n - 1
            changed_a = c
            changed_b = -1

        for ci in (changed_a, changed_b):
            if ci < 0:
                continue
            s, b, d = particle_rates(counts[ci], rbar, p, sigma, K, lam, zeta)
            new = s + b + d
            _fenwick_add(tree, cap, ci, new - rates[ci])
            rates[ci] = new
            split_r[ci] = s
            birth_r[ci] = b
            updates += 1
        if updates >= _REBUILD_EVERY:
            _fenwick_build(tree, rates, cap)
            updates = 0

        if record:
            if n_ev == ev_t.size:
                ev_t = _grow_f(ev_t, 2 * n_ev)
                ev_kind = _grow_f(ev_kind, 2 * n_ev)
                ev_cell = _grow_f(ev_cell, 2 * n_ev)
                ev_k = _grow_f(ev_k, 2 * n_ev)
            ev_t[n_ev] = t
            ev_kind[n_ev] = kind
            ev_cell[n_ev] = c
            ev_k[n_ev] = k
        n_ev += 1

    n_rec = n_ev if record else 0
    return (
        status,
        t,
        counts[:ncells].copy(),
        snap_vals[:ns].copy(),
        snap_off[: oi + 1].copy(),
        ev_t[:n_rec].copy(),
        ev_kind[:n_rec].copy(),
        ev_cell[:n_rec].copy(),
        ev_k[:n_rec].copy(),
        n_ev,
    )


# -- diffusions ---------------------------------------------------------------

@njit(nogil=True, cache=True)
def logistic_feller_step(x, h, drift_lin, drift_quad, noise, normal):
    """Full-truncation Euler step of dX = X(a - bX)dt + sqrt(2 c X) dB; 0 absorbs."""
    if x <= 0.0:
        return 0.0
    y = x + x * (drift_lin - drift_quad * x) * h + math.sqrt(2.0 * noise * x * h) * normal
    if y <= 0.0 or not (y == y):
        return 0.0
    return y


@njit(nogil=True, cache=True)
def _next_grid(s, dt):
    k = math.floor(s / dt) + 1.0
    g = k * dt
    while g <= s:
        k += 1.0
        g = k * dt
    return g


@njit(nogil=True, cache=True)
def run_limit(masses0, rbar, theta, sigma, K, lam, t_end, dt, obs_times, rng):
    """Depth-first over cell lineages; cells are independent given their birth time."""
    n0 = masses0.size
    st_x = np.empty(max(64, 2 * n0))
    st_s = np.empty(max(64, 2 * n0))
    top = 0
    for i in range(n0 - 1, -1, -1):
        st_x[top] = masses0[i]
        st_s[top] = 0.0
        top += 1
    n_obs = obs_times.size
    rec_obs = np.empty(64, np.int64)
    rec_x = np.empty(64)
    n_rec = 0
    split_t = np.empty(64)
    n_split = 0

    while top > 0:
        top -= 1
        x = st_x[top]
        s = st_s[top]
        if rbar > 0.0:
            tau = s + rng.exponential() / rbar
        else:
            tau = math.inf
        end = tau if tau < t_end else t_end
        # first observation at or after s
        oi = 0
        while oi < n_obs and obs_times[oi] < s:
            oi += 1
        while True:
            while oi < n_obs and obs_times[oi] <= s and obs_times[oi] < tau and obs_times[oi] <= t_end:
                if n_rec == rec_x.size:
                    rec_x = _grow_f(rec_x, 2 * n_rec)
                    rec_obs = _grow_f(rec_obs, 2 * n_rec)
                rec_obs[n_rec] = oi
                rec_x[n_rec] = x
                n_rec += 1
                oi += 1
            if s >= end:
                break
            if x > 0.0:
                target = _next_grid(s, dt)
                if target > end:
                    target = end
            else:
                # absorbed: nothing to integrate until the next observation or split
                target = end
            if oi < n_obs and obs_times[oi] < target:
                target = obs_times[oi]
            if x > 0.0:
                x = logistic_feller_step(x, target - s, K, lam, sigma, rng.standard_normal())
            s = target
        if tau <= t_end:
            if n_split == split_t.size:
                split_t = _grow_f(split_t, 2 * n_split)
            split_t[n_split] = tau
            n_split += 1
            a = theta * x
            b = x - a
            if top + 2 > st_x.size:
                st_x = _grow_f(st_x, 2 * st_x.size)
                st_s = _grow_f(st_s, 2 * st_s.size)
            st_x[top] = b
            st_s[top] = tau
            st_x[top + 1] = a
            st_s[top + 1] = tau
            top += 2
    return rec_obs[:n_rec].copy(), rec_x[:n_rec].copy(), split_t[:n_split].copy()


@njit(nogil=True, cache=True)
def yule_count(w, r, t, rng):
    n = w
    s = 0.0
    if r <= 0.0:
        return n
    while True:
        s += rng.exponential() / (r * n)
        if s > t:
            return n
        n += 1


# -- dual process ---------------------------------------------------------------

@njit(nogil=True, cache=True)
def q_closed(q0, r, t):
    if q0 == 1.0:
        return 1.0
    return 1.0 / (1.0 + (1.0 / q0 - 1.0) * math.exp(r * t))


@njit(nogil=True, cache=True)
def q_int(q0, r, t):
    if t <= 0.0:
        return 0.0
    if q0 == 1.0:
        return t
    if r == 0.0:
        return q0 * t
    a = 1.0 / q0 - 1.0
    # ln((1 + a) / (a + e^{-rt})) / r
    return (math.log1p(a) - math.log(a + math.exp(-r * t))) / r


@njit(nogil=True, cache=True)
def run_dual(q0, marks0, lw0, r, theta, sigma, K, lam, t_end, dt, obs_times, rng, record):
    m0 = marks0.size
    x = marks0.copy()
    m = m0
    t = 0.0
    lw = lw0
    t_piece = 0.0
    q_env = q0
    n_obs = obs_times.size
    oi = 0
    obs_m = np.zeros(n_obs, np.int64)
    obs_lw = np.zeros(n_obs)
    obs_q = np.zeros(n_obs)
    obs_x = np.zeros((n_obs, m0))

    ev_cap = 64 if record else 1
    ev_t = np.empty(ev_cap)
    ev_kind = np.empty(ev_cap, np.int8)
    ev_i = np.empty(ev_cap, np.int64)
    ev_j = np.empty(ev_cap, np.int64)
    ev_x = np.zeros((ev_cap, m0))
    ev_lw = np.empty(ev_cap)
    n_ev = 0
    n_prop = 0
    min_acc = 1.0

    while True:
        env = q_env * r * m * (m + 1)
        if env > 0.0:
            prop = t + rng.exponential() / env
        else:
            prop = math.inf
        target_end = prop if prop < t_end else t_end
        # diffuse on the global grid, pausing at observation times
        while True:
            while oi < n_obs and obs_times[oi] <= t and obs_times[oi] <= t_end:
                obs_m[oi] = m
                obs_lw[oi] = lw + r * m * m * q_int(q_closed(q0, r, t_piece), r, obs_times[oi] - t_piece)
                obs_q[oi] = q_closed(q0, r, obs_times[oi])
                for k in range(m):
                    obs_x[oi, k] = x[k]
                oi += 1
            if t >= target_end:
                break
            nxt = _next_grid(t, dt)
            if nxt > target_end:
                nxt = target_end
            if oi < n_obs and obs_times[oi] < nxt:
                nxt = obs_times[oi]
            h = nxt - t
            for k in range(m):
                if x[k] > 0.0:
                    x[k] = logistic_feller_step(x[k], h, K, sigma, lam, rng.standard_normal())
            t = nxt
        if prop > t_end:
            break
        n_prop += 1
        q_now = q_closed(q0, r, t)
        acc = q_now / q_env
        if acc < min_acc:
            min_acc = acc
        q_env = q_now
        if rng.random() >= acc:
            continue
        n_ch = m * (m + 1)
        c = int(rng.random() * n_ch)
        if c >= n_ch:
            c = n_ch - 1
        if c < m:
            kind = DUAL_SCALE_THETA
            i = c
            j = -1
            x[i] = theta * x[i]
        elif c < 2 * m:
            kind = DUAL_SCALE_ONE_MINUS_THETA
            i = c - m
            j = -1
            x[i] = (1.0 - theta) * x[i]
        else:
            kind = DUAL_MERGE
            pair = c - 2 * m
            i = pair // (m - 1)
            j = pair % (m - 1)
            if j >= i:
                j += 1
            lw += r * m * m * q_int(q_closed(q0, r, t_piece), r, t - t_piece)
            t_piece = t
            merged = theta * x[i] + (1.0 - theta) * x[j]
            x[i] = merged
            for k in range(j, m - 1):
                x[k] = x[k + 1]
            x[m - 1] = 0.0
            m -= 1
        if record:
            if n_ev == ev_t.size:
                ev_t = _grow_f(ev_t, 2 * n_ev)
                ev_kind = _grow_f(ev_kind, 2 * n_ev)
                ev_i = _grow_f(ev_i, 2 * n_ev)
                ev_j = _grow_f(ev_j, 2 * n_ev)
                ev_lw = _grow_f(ev_lw, 2 * n_ev)
                new_x = np.zeros((2 * n_ev, m0))
                new_x[:n_ev] = ev_x
                ev_x = new_x
            ev_t[n_ev] = t
            ev_kind[n_ev] = kind
            ev_i[n_ev] = i
            ev_j[n_ev] = j
            for k in range(m0):
                ev_x[n_ev, k] = x[k] if k < m else 0.0
            ev_lw[n_ev] = lw + r * m * m * q_int(q_closed(q0, r, t_piece), r, t - t_piece)
        n_ev += 1

    lw += r * m * m * q_int(q_closed(q0, r, t_piece), r, t_end - t_piece)
    n_rec = n_ev if record else 0
    return (
        m,
        x[:m].copy(),
        lw,
        obs_m,
        obs_lw,
        obs_q,
        obs_x,
        ev_t[:n_rec].copy(),
        ev_kind[:n_rec].copy(),
        ev_i[:n_rec].copy(),
        ev_j[:n_rec].copy(),
        ev_x[:n_rec].copy(),
        ev_lw[:n_rec].copy(),
        n_prop,
        min_acc,
    )
