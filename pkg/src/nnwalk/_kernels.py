"""Compiled inner loops shared by the analytics and simulator modules."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_BUF = 4096


@njit(cache=True, nogil=True)
def accumulate_terms(logu, level, level_c, total, total_c, record):
    """Extend the escape series by ``len(logu)`` terms.

    ``level`` (+ compensation) is the log of the current product of U's and
    ``total`` (+ compensation) the running sum of products; both use Neumaier
    summation.  When ``record`` is non-empty the running total after each term
    is stored there.
    """
    n = logu.shape[0]
    keep = record.shape[0] > 0
    for j in range(n):
        y = logu[j]
        t = level + y
        if abs(level) >= abs(y):
            level_c += (level - t) + y
        else:
            level_c += (y - t) + level
        level = t
        term = math.exp(level + level_c)
        t = total + term
        if abs(total) >= abs(term):
            total_c += (total - t) + term
        else:
            total_c += (term - t) + total
        total = t
        if keep:
            record[j] = total + total_c
    return level, level_c, total, total_c


@njit(cache=True, nogil=True)
def log_suffix_table(logu_desc):
    """Scaled suffix sums below an anchor site ``lo``.

    ``logu_desc[k]`` holds ``log U_{lo-k}`` for ``k = 0 .. lo-1``.  Returns
    ``out`` with ``out[x] = log sum_{j=x}^{lo-1} prod_{i=j+1}^{lo} U_i^{-1}``
    for ``x = 0 .. lo`` (``out[lo] = -inf``).
    """
    lo = logu_desc.shape[0]
    out = np.empty(lo + 1)
    out[lo] = -np.inf
    level = 0.0
    comp = 0.0
    acc = -np.inf
    for k in range(lo):
        # site j = lo - 1 - k contributes exp(-(log U_{j+1} + ... + log U_lo))
        y = -logu_desc[k]
        t = level + y
        if abs(level) >= abs(y):
            comp += (level - t) + y
        else:
            comp += (y - t) + level
        level = t
        v = level + comp
        if acc == -np.inf:
            acc = v
        elif acc > v:
            acc = acc + math.log1p(math.exp(v - acc))
        else:
            acc = v + math.log1p(math.exp(acc - v))
        out[lo - 1 - k] = acc
    return out


@njit(cache=True, nogil=True)
def _down_prob_below(log_h, a, x, c):
    # P(hit a before c | start x), a < x < c <= lo, from scaled suffix sums
    la = log_h[a]
    lx = log_h[x]
    lc = log_h[c]
    num = -math.expm1(lc - lx)
    den = -math.expm1(lc - la)
    return math.exp(lx - la) * num / den


@njit(cache=True, nogil=True)
def _down_prob_above(prefix, a, x, c):
    # same, for hi <= a < x < c with prefix[k] = D(hi, hi + k)
    den = prefix[c] - prefix[a]
    return (prefix[c] - prefix[x]) / den


@njit(cache=True, nogil=True)
def walk_window(rng, e_tab, log_h, prefix, lo, hi, barrier, shadow_to, max_moves, xi, up):
    """One walk from 0 with exact bookkeeping on the sites ``lo..hi``.

    Inside the window the chain moves one step at a time.  Outside it the walk
    jumps to the exit point of a symmetric interval that cannot contain a
    window site in its interior, using the exact exit law; this preserves the
    joint law of every visit and upcrossing inside the window.

    Stops at the first position ``>= barrier``.  If ``shadow_to > barrier`` the
    walk then continues (without counting) until it reaches ``shadow_to`` or
    returns to ``hi``; the return flag is reported.

    Returns ``(status, position, moves, returned)``; status 1 means the move
    budget was exhausted.
    """
    buf = rng.random(_BUF)
    k = 0
    x = 0
    moves = 0
    if lo == 0:
        xi[0] += 1
    top = prefix.shape[0] - 1
    while x < barrier:
        if moves >= max_moves:
            return 1, x, moves, False
        moves += 1
        if k == _BUF:
            buf = rng.random(_BUF)
            k = 0
        u = buf[k]
        k += 1
        if x < lo:
            if x == 0:
                x = 1
            else:
                h = lo - x
                if x < h:
                    h = x
                if h == 1:
                    if u < e_tab[x]:
                        x += 1
                    else:
                        x -= 1
                elif u < _down_prob_below(log_h, x - h, x, x + h):
                    x -= h
                else:
                    x += h
            if x == lo:
                xi[0] += 1
        elif x > hi:
            d = x - hi
            h = d
            if x + h - hi > top:
                h = top - (x - hi)
            if u < _down_prob_above(prefix, d - h, d, d + h):
                x -= h
            else:
                x += h
            if x == hi:
                xi[hi - lo] += 1
        else:
            # stay in this loop while inside the window; e_tab[0] = 1 covers x = 0
            j = x - lo
            w = hi - lo
            while True:
                g = np.int64(u < e_tab[x])
                up[j] += g
                s = 2 * g - 1
                x += s
                j += s
                if j < 0 or j > w:
                    break
                xi[j] += 1
                if moves >= max_moves:
                    return 1, x, moves, False
                moves += 1
                if k == _BUF:
                    buf = rng.random(_BUF)
                    k = 0
                u = buf[k]
                k += 1
    returned = False
    if shadow_to > barrier:
        while x < shadow_to:
            if moves >= max_moves:
                return 1, x, moves, False
            moves += 1
            if k == _BUF:
                buf = rng.random(_BUF)
                k = 0
            u = buf[k]
            k += 1
            d = x - hi
            h = d
            if x + h - hi > top:
                h = top - d
            if u < _down_prob_above(prefix, d - h, d, d + h):
                x -= h
            else:
                x += h
            if x <= hi:
                returned = True
                break
    return 0, x, moves, returned


@njit(cache=True, nogil=True)
def walk_positions(rng, e_tab, n, checkpoints, out_pos, profile):
    """Plain step-by-step walk of ``n`` steps from 0.

    Records positions at the (sorted) ``checkpoints`` times and, when
    ``profile`` is non-empty, the local time of every site.  Returns
    ``(position, ok)``; ``ok`` is False if the walk outgrew ``e_tab``.
    """
    buf = rng.random(_BUF)
    k = 0
    x = 0
    cap = e_tab.shape[0] - 1
    keep = profile.shape[0] > 0
    if keep:
        profile[0] += 1
    c = 0
    nc = checkpoints.shape[0]
    while c < nc and checkpoints[c] == 0:
        out_pos[c] = 0
        c += 1
    for t in range(1, n + 1):
        if k == _BUF:
            buf = rng.random(_BUF)
            k = 0
        u = buf[k]
        k += 1
        if x == 0 or u < e_tab[x]:
            x += 1
            if x > cap:
                return x, False
        else:
            x -= 1
        if keep:
            profile[x] += 1
        while c < nc and checkpoints[c] == t:
            out_pos[c] = x
            c += 1
    return x, True


@njit(cache=True, nogil=True)
def walk_first_hits(rng, e_tab, target, max_steps, out):
    """Walk until the first visit to ``target``; ``out[r]`` is the hitting time of r.

    Returns False if the step budget runs out first.
    """
    buf = rng.random(_BUF)
    k = 0
    x = 0
    t = 0
    out[0] = 0
    while x != target:
        if t >= max_steps:
            return False
        if k == _BUF:
            buf = rng.random(_BUF)
            k = 0
        u = buf[k]
        k += 1
        t += 1
        if x == 0 or u < e_tab[x]:
            x += 1
            if out[x] < 0:
                out[x] = t
        else:
            x -= 1
    return True
