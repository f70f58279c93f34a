"""Compiled inner loops. Every kernel is sequential, hence deterministic."""

import numba
import numpy as np

AGG_CODES = {"mean": 0, "max": 1, "l1": 2, "l2": 3}


@numba.njit(cache=True)
def _lex_less(pts, a, b):
    for c in range(3):
        if pts[a, c] < pts[b, c]:
            return True
        if pts[a, c] > pts[b, c]:
            return False
    return a < b


@numba.njit(cache=True)
def fps(pts, first, m):
    n = pts.shape[0]
    sel = np.empty(m, np.int64)
    mind = np.full(n, np.inf)
    sel[0] = first
    mind[first] = -1.0
    last = first
    for i in range(1, m):
        px = pts[last, 0]
        py = pts[last, 1]
        pz = pts[last, 2]
        best = -2.0
        bi = -1
        for j in range(n):
            dx = pts[j, 0] - px
            dy = pts[j, 1] - py
            dz = pts[j, 2] - pz
            d = dx * dx + dy * dy + dz * dz
            if d < mind[j]:
                mind[j] = d
            v = mind[j]
            if v > best:
                best = v
                bi = j
            elif v == best and _lex_less(pts, j, bi):
                bi = j
        sel[i] = bi
        mind[bi] = -1.0
        last = bi
    return sel


@numba.njit(cache=True)
def knn(candidates, centers, center_ids, k):
    """Rows ordered by (squared distance, index); a center id >= 0 is forced first."""
    n = centers.shape[0]
    num = candidates.shape[0]
    out = np.empty((n, k), np.int64)
    dist = np.empty(k)
    for i in range(n):
        cx = centers[i, 0]
        cy = centers[i, 1]
        cz = centers[i, 2]
        own = center_ids[i]
        size = 0
        for j in range(num):
            if j == own:
                d = -1.0
            else:
                dx = candidates[j, 0] - cx
                dy = candidates[j, 1] - cy
                dz = candidates[j, 2] - cz
                d = dx * dx + dy * dy + dz * dz
            if size == k and d >= dist[k - 1]:
                continue
            # Insert after every entry with distance <= d (earlier indices win ties).
            pos = size if size < k else k - 1
            while pos > 0 and dist[pos - 1] > d:
                if pos < k:
                    dist[pos] = dist[pos - 1]
                    out[i, pos] = out[i, pos - 1]
                pos -= 1
            dist[pos] = d
            out[i, pos] = j
            if size < k:
                size += 1
    return out


@numba.njit(cache=True)
def hop_apply(attrs, means, weights, agg_codes, want_coeffs):
    """Apply P stacked banks and pool the outputs over points.

    attrs: (n, d, P) inputs; means: (P, d); weights: (P, d, d), rows are filters.
    Returns coefficients (P, n, d) (empty unless ``want_coeffs``) and
    aggregates (P, d, A).
    """
    n, d, p_count = attrs.shape
    a_count = agg_codes.shape[0]
    coeffs = np.empty((p_count if want_coeffs else 0, n, d))
    acc_sum = np.zeros((p_count, d))
    acc_abs = np.zeros((p_count, d))
    acc_sq = np.zeros((p_count, d))
    acc_max = np.full((p_count, d), -np.inf)
    centered = np.empty(d)
    for i in range(n):
        for p in range(p_count):
            for o in range(d):
                centered[o] = attrs[i, o, p] - means[p, o]
            for j in range(d):
                s = 0.0
                for o in range(d):
                    s += weights[p, j, o] * centered[o]
                acc_sum[p, j] += s
                acc_abs[p, j] += abs(s)
                acc_sq[p, j] += s * s
                if s > acc_max[p, j]:
                    acc_max[p, j] = s
                if want_coeffs:
                    coeffs[p, i, j] = s
    aggs = np.empty((p_count, d, a_count))
    for a in range(a_count):
        code = agg_codes[a]
        if code == 0:
            aggs[:, :, a] = acc_sum / n
        elif code == 1:
            aggs[:, :, a] = acc_max
        elif code == 2:
            aggs[:, :, a] = acc_abs / n
        else:
            aggs[:, :, a] = np.sqrt(acc_sq / n)
    return coeffs, aggs
