"""Hot inner loops: Arthur-table enumeration, AFC and context-impact subset
sweeps, and corpus feature matching.

Each kernel has a loop form (``*_loop``, compiled by numba) and an independent
vectorised numpy form (``*_numpy``). The unsuffixed name is the one selected by
:mod:`merlin_arthur._accel`. Both forms return identical results up to the
1e-12 tie tolerance; the test-suite checks that they agree.
"""

from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, jit

TIE_TOL = 1e-12


# ---------------------------------------------------------------------------
# min-max: enumerate all 3**n Arthur tables over the relevant features


def _minmax_loop(n_rel, merlin_slot, inc_slots, label, prob, empty_slot, tol):
    total = 1
    for _ in range(n_rel):
        total *= 3
    v = np.full(n_rel, -1, dtype=np.int64)
    n = label.shape[0]
    deg = inc_slots.shape[1]
    best = np.inf
    best_t = -1
    for t in range(total):
        mass = 0.0
        for x in range(n):
            c = label[x]
            s = merlin_slot[x]
            vm = v[s] if s >= 0 else 0
            fail = vm != c
            if not fail:
                if empty_slot >= 0 and v[empty_slot] == -c:
                    fail = True
                else:
                    for q in range(deg):
                        j = inc_slots[x, q]
                        if j < 0:
                            break
                        if v[j] == -c:
                            fail = True
                            break
            if fail:
                mass += prob[x]
                if mass >= best - tol:
                    break
        if mass < best - tol:
            best = mass
            best_t = t
        j = n_rel - 1
        while j >= 0:
            if v[j] < 1:
                v[j] += 1
                break
            v[j] = -1
            j -= 1
    return best_t, best


_minmax_jit = jit(_minmax_loop)


def _minmax_numpy(n_rel, merlin_slot, inc_slots, label, prob, empty_slot, tol,
                  chunk=1 << 16):
    total = 3 ** n_rel
    powers = 3 ** np.arange(n_rel - 1, -1, -1, dtype=np.int64)
    best, best_t = np.inf, -1
    for start in range(0, total, chunk):
        t = np.arange(start, min(total, start + chunk), dtype=np.int64)
        v = ((t[:, None] // powers) % 3 - 1).astype(np.int8)
        fail = np.zeros((t.size, label.size), dtype=bool)
        for x in range(label.size):
            c = label[x]
            s = merlin_slot[x]
            convinced = v[:, s] == c if s >= 0 else np.zeros(t.size, dtype=bool)
            slots = inc_slots[x][inc_slots[x] >= 0]
            fooled = (v[:, slots] == -c).any(axis=1)
            if empty_slot >= 0:
                fooled |= v[:, empty_slot] == -c
            fail[:, x] = ~convinced | fooled
        mass = fail.astype(np.float64) @ prob
        m = mass.min()
        if m < best - tol:
            best_t = int(start + np.flatnonzero(mass <= m + tol)[0])
            best = float(mass[best_t - start])
    return best_t, best


def minmax_scan(n_rel, merlin_slot, inc_slots, label, prob, empty_slot, tol=TIE_TOL,
                use_numba=None):
    """Return ``(t, mass)`` of the lexicographically first optimal Arthur table.

    ``t`` encodes the verdicts in base 3, most significant digit first, with
    digit ``d`` meaning verdict ``d - 1``.
    """
    use_numba = USE_NUMBA if use_numba is None else use_numba
    fn = _minmax_jit if use_numba else _minmax_numpy
    t, mass = fn(int(n_rel), np.ascontiguousarray(merlin_slot, dtype=np.int64),
                 np.ascontiguousarray(inc_slots, dtype=np.int64),
                 np.ascontiguousarray(label, dtype=np.int64),
                 np.ascontiguousarray(prob, dtype=np.float64), int(empty_slot), float(tol))
    return int(t), float(mass)


def decode_table(t: int, n_rel: int) -> np.ndarray:
    v = np.empty(n_rel, dtype=np.int64)
    for j in range(n_rel - 1, -1, -1):
        v[j] = t % 3 - 1
        t //= 3
    return v


# ---------------------------------------------------------------------------
# asymmetric feature concentration: sweep all subsets F of the features


def _afc_loop(feat_inc, rho, wl, wo, tol):
    m, n = feat_inc.shape
    total = 1 << m
    unions = np.zeros((total, n), dtype=np.uint8)
    best = -1.0
    best_mask = 0
    for mask in range(1, total):
        low = 0
        while not (mask >> low) & 1:
            low += 1
        prev = mask & (mask - 1)
        ml = 0.0
        mo = 0.0
        for y in range(n):
            u = unions[prev, y] | feat_inc[low, y]
            unions[mask, y] = u
            if u:
                ml += wl[y]
                mo += wo[y]
        if ml <= 0.0 or mo <= 0.0:
            continue
        val = 0.0
        for y in range(n):
            if unions[mask, y] and wl[y] > 0.0:
                r = 0.0
                for j in range(m):
                    if (mask >> j) & 1 and feat_inc[j, y] and rho[j] > r:
                        r = rho[j]
                val += wl[y] * r
        val /= mo
        if val > best + tol:
            best = val
            best_mask = mask
    return best, best_mask


_afc_jit = jit(_afc_loop)


def _afc_numpy(feat_inc, rho, wl, wo, tol, chunk=None):
    m, n = feat_inc.shape
    # the masks x features x points product dominates memory; keep it near 32 MB
    chunk = chunk or max(1, (1 << 22) // max(1, m * n))
    inc = feat_inc.astype(np.float64)
    rho_inc = inc * rho[:, None]
    best, best_mask = -1.0, 0
    for start in range(1, 1 << m, chunk):
        masks = np.arange(start, min(1 << m, start + chunk), dtype=np.int64)
        bits = ((masks[:, None] >> np.arange(m)) & 1).astype(np.float64)
        union = (bits @ inc) > 0
        ml = union @ wl
        mo = union @ wo
        ok = (ml > 0) & (mo > 0)
        rmax = (bits[:, :, None] * rho_inc[None]).max(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(ok, (rmax * (wl > 0) * wl).sum(axis=1) / np.where(ok, mo, 1.0), -np.inf)
        i = int(np.argmax(val))
        if val[i] > best + tol:
            first = int(np.flatnonzero(val >= val[i] - tol)[0])
            best, best_mask = float(val[first]), int(masks[first])
    return best, best_mask


def afc_scan(feat_inc, rho, wl, wo, tol=TIE_TOL, use_numba=None):
    """Maximise the AFC expectation over feature subsets for one class.

    ``feat_inc`` is features x points, ``rho[j]`` the raw mass ratio of feature
    ``j`` (other class over this class), ``wl``/``wo`` the point weights of this
    and the other class. Returns ``(value, mask)``; ``value = -1`` when no
    subset has mass in both classes.
    """
    use_numba = USE_NUMBA if use_numba is None else use_numba
    fn = _afc_jit if use_numba else _afc_numpy
    val, mask = fn(np.ascontiguousarray(feat_inc, dtype=np.uint8),
                   np.ascontiguousarray(rho, dtype=np.float64),
                   np.ascontiguousarray(wl, dtype=np.float64),
                   np.ascontiguousarray(wo, dtype=np.float64), float(tol))
    return float(val), int(mask)


# ---------------------------------------------------------------------------
# context impact: sweep subsets F of A^{-1}(l)


def _alpha_loop(cand_inc, merlin_cand, wl, wo, wfool, tol):
    m, n = cand_inc.shape
    total = 1 << m
    best = 0.0
    best_mask = 0
    for mask in range(1, total):
        ml = 0.0
        mo = 0.0
        hit = 0.0
        fooled = 0.0
        for y in range(n):
            u = False
            for j in range(m):
                if (mask >> j) & 1 and cand_inc[j, y]:
                    u = True
                    break
            if not u:
                continue
            ml += wl[y]
            mo += wo[y]
            fooled += wfool[y]
            s = merlin_cand[y]
            if s >= 0 and (mask >> s) & 1:
                hit += wl[y]
        if mo <= 0.0:
            continue
        num = hit / ml if ml > 0.0 else 0.0
        den = fooled / mo
        if den <= 0.0:
            if num > 0.0:
                return np.inf, mask
            continue
        r = num / den
        if r > best + tol:
            best = r
            best_mask = mask
    return best, best_mask


_alpha_jit = jit(_alpha_loop)


def _alpha_numpy(cand_inc, merlin_cand, wl, wo, wfool, tol, chunk=4096):
    m, n = cand_inc.shape
    inc = cand_inc.astype(np.float64)
    best, best_mask = 0.0, 0
    has_choice = merlin_cand >= 0
    for start in range(1, 1 << m, chunk):
        masks = np.arange(start, min(1 << m, start + chunk), dtype=np.int64)
        bits = (masks[:, None] >> np.arange(m)) & 1
        union = (bits.astype(np.float64) @ inc) > 0
        chosen = np.zeros_like(union)
        chosen[:, has_choice] = bits[:, merlin_cand[has_choice]] == 1
        ml = union @ wl
        mo = union @ wo
        hit = (union & chosen) @ wl
        fooled = union @ wfool
        valid = mo > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            num = np.where(ml > 0, hit / np.where(ml > 0, ml, 1.0), 0.0)
            den = np.where(valid, fooled / np.where(valid, mo, 1.0), 0.0)
        unbounded = valid & (den <= 0) & (num > 0)
        if unbounded.any():
            return np.inf, int(masks[np.flatnonzero(unbounded)[0]])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(valid & (den > 0), num / np.where(den > 0, den, 1.0), -np.inf)
        i = int(np.argmax(ratio))
        if ratio[i] > best + tol:
            first = int(np.flatnonzero(ratio >= ratio[i] - tol)[0])
            best, best_mask = float(ratio[first]), int(masks[first])
    return best, best_mask


def alpha_scan(cand_inc, merlin_cand, wl, wo, wfool, tol=TIE_TOL, use_numba=None):
    """Maximise the context-impact ratio over subsets of candidate features.

    ``cand_inc`` is candidates x points; ``merlin_cand[x]`` is the candidate
    slot Merlin picks at ``x`` (or -1); ``wl``/``wo`` are point weights of the
    class ``l`` and ``-l``; ``wfool`` is ``wo`` times the probability that
    Morgana convinces Arthur of ``l`` at that point. Returns ``(ratio, mask)``
    with ``ratio = inf`` for a positive numerator over a zero denominator.
    """
    use_numba = USE_NUMBA if use_numba is None else use_numba
    fn = _alpha_jit if use_numba else _alpha_numpy
    val, mask = fn(np.ascontiguousarray(cand_inc, dtype=np.uint8),
                   np.ascontiguousarray(merlin_cand, dtype=np.int64),
                   np.ascontiguousarray(wl, dtype=np.float64),
                   np.ascontiguousarray(wo, dtype=np.float64),
                   np.ascontiguousarray(wfool, dtype=np.float64), float(tol))
    return float(val), int(mask)


# ---------------------------------------------------------------------------
# feature matching over an image corpus


def _match_loop(corpus, supports, values, tau):
    f_count, k = supports.shape
    n = corpus.shape[0]
    out = np.zeros((f_count, n), dtype=np.bool_)
    for f in range(f_count):
        for y in range(n):
            ok = True
            for q in range(k):
                p = supports[f, q]
                if p < 0:
                    break
                if abs(corpus[y, p] - values[f, q]) > tau:
                    ok = False
                    break
            out[f, y] = ok
    return out


_match_jit = jit(_match_loop)


def _match_numpy(corpus, supports, values, tau, chunk=64):
    f_count, k = supports.shape
    out = np.zeros((f_count, corpus.shape[0]), dtype=bool)
    valid = supports >= 0
    safe = np.where(valid, supports, 0)
    for start in range(0, f_count, chunk):
        sl = slice(start, start + chunk)
        gathered = corpus[:, safe[sl]]                      # n x f x k
        close = np.abs(gathered - values[sl][None]) <= tau
        out[sl] = (close | ~valid[sl][None]).all(axis=2).T
    return out


def match_features(corpus, supports, values, tau=0.0, use_numba=None):
    """Boolean matrix ``[feature, image]``: image agrees with the feature on its support.

    ``supports`` is features x k pixel indices padded with -1; ``values`` the
    matching pixel values. Agreement means ``|y_i - x_i| <= tau`` for every
    support pixel; an empty support matches everything.
    """
    use_numba = USE_NUMBA if use_numba is None else use_numba
    fn = _match_jit if use_numba else _match_numpy
    return fn(np.ascontiguousarray(corpus, dtype=np.float64),
              np.ascontiguousarray(supports, dtype=np.int64),
              np.ascontiguousarray(values, dtype=np.float64), float(tau))
