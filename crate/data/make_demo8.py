"""Writes demo8.csv: eight positive series on different scales with a daily
cycle, a slow upward drift and an AR(1) component whose coefficient changes
every 200 steps. Two covariates carry the phase of the cycle."""

import numpy as np

T, P, PERIOD, REGIME = 1400, 8, 24, 200
rng = np.random.default_rng(8)

levels = np.array([20, 35, 50, 80, 120, 200, 300, 500], dtype=float)
scales = levels / 10
amp = rng.uniform(1.0, 2.0, P)
phase = rng.uniform(0, 2 * np.pi, P)

t = np.arange(T)
season = amp * np.sin(2 * np.pi * t[:, None] / PERIOD + phase)
drift = 1 + 0.3 * t[:, None] / T

w = np.repeat(rng.uniform(-0.3, 0.95, T // REGIME), REGIME)
x = np.zeros((T, P))
for k in range(1, T):
    common = rng.normal()
    x[k] = w[k] * x[k - 1] + 0.6 * common + 0.8 * rng.normal(size=P)

y = levels * drift + scales * (season + x)

with open("demo8.csv", "w") as f:
    f.write("t," + ",".join(f"dim_{i}" for i in range(P)) + ",x_0,x_1\n")
    for k in range(T):
        cov = [np.sin(2 * np.pi * k / PERIOD), np.cos(2 * np.pi * k / PERIOD)]
        f.write(f"{k}," + ",".join(f"{v:.4f}" for v in y[k]) + "," + ",".join(f"{v:.6f}" for v in cov) + "\n")
