"""Independent brute-force evaluations used as test oracles.

These deliberately avoid the package's code paths: explicit normal
equations instead of QR, Python loops instead of vectorised sums.
"""

import numpy as np


def ols_normal_equations(X, y):
    xtx_inv = np.linalg.inv(X.T @ X)
    return xtx_inv @ X.T @ y, xtx_inv


def white_hc1(X, y):
    n, k = X.shape
    beta, bread = ols_normal_equations(X, y)
    e = y - X @ beta
    meat = np.zeros((k, k))
    for i in range(n):
        meat += e[i] ** 2 * np.outer(X[i], X[i])
    return n / (n - k) * bread @ meat @ bread


def liang_zeger(X, y, clusters):
    n, k = X.shape
    beta, bread = ols_normal_equations(X, y)
    e = y - X @ beta
    labels = sorted(set(clusters))
    meat = np.zeros((k, k))
    for g in labels:
        idx = [i for i in range(n) if clusters[i] == g]
        s = sum(X[i] * e[i] for i in idx)
        meat += np.outer(s, s)
    G = len(labels)
    c = G / (G - 1) * (n - 1) / (n - k)
    return c * bread @ meat @ bread


def bh_brute(p, m=None):
    """Adjusted p for each input: min over j >= rank(i) of m p_(j) / j."""
    p = list(p)
    m = len(p) if m is None else m
    order = sorted(range(len(p)), key=lambda i: (p[i], i))
    sorted_p = [p[i] for i in order]
    # p * (m / j) rather than m * p / j: the factor is >= 1, so the product never rounds below p
    adj_sorted = [min(min(1.0, sorted_p[j] * (m / (j + 1))) for j in range(r, len(p))) for r in range(len(p))]
    out = [0.0] * len(p)
    for r, i in enumerate(order):
        out[i] = adj_sorted[r]
    return out


def did_of_means(y, group, period, t1=1, t0=0):
    cell = lambda g, t: y[(group == g) & (period == t)].mean()
    return (cell(1, t1) - cell(1, t0)) - (cell(0, t1) - cell(0, t0))
