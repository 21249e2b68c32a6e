"""Independent reference implementations used as test oracles."""

import math

import numpy as np


def ccf_brute(u, y, k):
    """Sample cross-correlation written out term by term."""
    n = len(u)
    ubar = sum(u) / n
    ybar = sum(y) / n
    su = math.sqrt(sum((a - ubar) ** 2 for a in u) / n)
    sy = math.sqrt(sum((b - ybar) ** 2 for b in y) / n)
    acc = 0.0
    for t in range(n - k):
        acc += (u[t] - ubar) * (y[t + k] - ybar)
    return max(-1.0, min(1.0, acc / (n - k) / (su * sy)))


def pacf_by_regression(x, max_lag):
    """Lag-k partial autocorrelation as the last coefficient of a Yule-Walker AR(k) fit."""
    x = np.asarray(x, dtype=float)
    n = x.size
    dx = x - x.mean()
    gamma = np.array([dx[: n - h] @ dx[h:] / n for h in range(max_lag + 1)])
    out = []
    for k in range(1, max_lag + 1):
        r = np.array([[gamma[abs(i - j)] for j in range(k)] for i in range(k)])
        out.append(np.linalg.solve(r, gamma[1 : k + 1])[-1])
    return np.array(out)


def _runs(labels):
    runs = []
    for t, lab in enumerate(labels):
        if runs and runs[-1][0] == lab:
            runs[-1][2] = t
        else:
            runs.append([lab, t, t])
    return runs


def dissolve_short_runs(labels, speeds, delta):
    """Literal rendering of the range-dissolution rule.

    While some maximal run is shorter than ``delta`` (and more than one run
    exists), take the shortest, earliest such run. At a day edge its slots join
    the single neighbour. Otherwise try every split point, hand the left part
    to the earlier neighbour and the right part to the later one, and keep the
    split with the smallest total |speed - neighbour mean|, preferring the
    split that gives more slots to the earlier neighbour on ties.
    """
    labels = list(labels)
    while True:
        runs = _runs(labels)
        if len(runs) == 1:
            return labels
        short = [(r[2] - r[1] + 1, i) for i, r in enumerate(runs) if r[2] - r[1] + 1 < delta]
        if not short:
            return labels
        _, i = min(short)
        _, s, e = runs[i]
        if i == 0 or i == len(runs) - 1:
            other = runs[1] if i == 0 else runs[i - 1]
            for t in range(s, e + 1):
                labels[t] = other[0]
            continue
        prev, nxt = runs[i - 1], runs[i + 1]
        mp = sum(speeds[prev[1] : prev[2] + 1]) / (prev[2] - prev[1] + 1)
        mn = sum(speeds[nxt[1] : nxt[2] + 1]) / (nxt[2] - nxt[1] + 1)
        best_cost, best_cut = None, None
        for cut in range(e - s + 2):
            cost = sum(abs(speeds[t] - mp) for t in range(s, s + cut))
            cost += sum(abs(speeds[t] - mn) for t in range(s + cut, e + 1))
            if best_cost is None or cost <= best_cost + 1e-12:
                best_cut = cut
                best_cost = cost if best_cost is None else min(cost, best_cost)
        for t in range(s, e + 1):
            labels[t] = prev[0] if t < s + best_cut else nxt[0]


def literal_reassignment(labels, speeds, delta):
    """Reassignment of slots of short ranges as the published listing states it.

    Each slot of a short range goes to the surviving range with the nearest
    mean speed (earlier range on ties). Defined here only for inputs where the
    short range's own cluster has no other range, so the nearest range always
    belongs to another cluster.
    """
    runs = _runs(labels)
    short = [r for r in runs if r[2] - r[1] + 1 < delta]
    survivors = [r for r in runs if r[2] - r[1] + 1 >= delta]
    out = list(labels)
    for lab, s, e in short:
        for t in range(s, e + 1):
            dists = [abs(speeds[t] - np.mean(speeds[a : b + 1])) for _, a, b in survivors]
            out[t] = survivors[int(np.argmin(dists))][0]
    return out


def ols(x, y):
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    return beta
