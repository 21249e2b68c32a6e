"""Simulators for processes with known coefficients, used as estimation oracles."""

import numpy as np

from tvstarima.core_data import FlowPanel, StationNetwork
from tvstarima.lags import constant_lag_matrices
from tvstarima.starima import build_weights


def simulate_starima(n_slots, phi_own, phi1, theta0, theta1, lag=2, n_stations=3, d=1, seed=0, burn=200):
    """Chain corridor driven by one-hop spatial AR and MA terms at a fixed lag."""
    rng = np.random.default_rng(seed)
    network = StationNetwork.chain(n_stations, 1000.0)
    w1 = build_weights(network, 1)[1]
    total = n_slots + burn
    eps = rng.standard_normal((total, n_stations))
    z = np.zeros((total, n_stations))
    p = len(phi_own)
    for t in range(max(p, lag, 1), total):
        z[t] = sum(phi_own[j] * z[t - 1 - j] for j in range(p))
        z[t] += phi1 * (w1 @ z[t - lag])
        z[t] += eps[t] - theta0 * eps[t - 1] - theta1 * (w1 @ eps[t - 1])
    z = z[burn:]
    levels = z
    for _ in range(d):
        levels = np.cumsum(np.vstack([np.full((1, n_stations), 100.0), levels]), axis=0)
    panel = FlowPanel(network.stations, 30.0, levels)
    return network, panel, [constant_lag_matrices(network, 1, lag)]


def simulate_arima(n_slots, phi, d=1, seed=0, burn=200, level=50.0):
    rng = np.random.default_rng(seed)
    total = n_slots + burn
    e = rng.standard_normal(total)
    z = np.zeros(total)
    for t in range(len(phi), total):
        z[t] = sum(phi[j] * z[t - 1 - j] for j in range(len(phi))) + e[t]
    x = z[burn:]
    for _ in range(d):
        x = np.concatenate([[level], level + np.cumsum(x)])
    return x
