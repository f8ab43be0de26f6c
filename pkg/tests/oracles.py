"""Independent reference computations used as test oracles.

Nothing here imports the code under test; each routine is written from the
textbook definition with plain numpy.
"""

import math

import numpy as np


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logistic_newton(X, y, tol=1e-12, maxiter=100):
    """Unpenalized logistic MLE by plain Newton iterations."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    beta = np.zeros(X.shape[1])
    for _ in range(maxiter):
        mu = _sigmoid(X @ beta)
        grad = X.T @ (y - mu)
        hess = X.T @ (X * (mu * (1 - mu))[:, None])
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            break
    return beta


def logistic_loglik(X, y, beta):
    eta = np.asarray(X, float) @ beta
    return float(np.sum(y * eta - np.log1p(np.exp(eta))))


def gh_group_loglik(y, offset, sigma2, nodes=20):
    """log of int prod_i Bern(y_i | offset + b) N(b; 0, sigma2) db by adaptive Gauss-Hermite."""
    y = np.asarray(y, float)

    def h(b):
        eta = offset + b
        return (np.sum(y * eta - np.log1p(np.exp(eta)))
                - 0.5 * b * b / sigma2 - 0.5 * math.log(2 * math.pi * sigma2))

    # mode of the integrand by 1-d Newton
    b = 0.0
    for _ in range(100):
        mu = _sigmoid(offset + b)
        g = np.sum(y - mu) - b / sigma2
        H = -np.sum(mu * (1 - mu)) - 1.0 / sigma2
        step = g / H
        b -= step
        if abs(step) < 1e-14:
            break
    mu = _sigmoid(offset + b)
    scale = 1.0 / math.sqrt(np.sum(mu * (1 - mu)) + 1.0 / sigma2)
    x, w = np.polynomial.hermite.hermgauss(nodes)
    vals = np.array([h(b + math.sqrt(2) * scale * xk) for xk in x]) + x ** 2
    m = vals.max()
    return math.log(math.sqrt(2) * scale) + m + math.log(np.sum(w * np.exp(vals - m)))


def grid_binomial_fit(successes, trials, x, center=(0.0, 0.0), width=4.0, points=41, tol=1e-10):
    """Maximize the grouped binomial likelihood over (a, g) by repeated grid refinement."""
    s = np.asarray(successes, float)
    n = np.asarray(trials, float)
    x = np.asarray(x, float)

    def ll(a, g):
        eta = a[..., None] + g[..., None] * x
        return np.sum(s * eta - n * np.log1p(np.exp(eta)), axis=-1)

    a0, g0 = center
    while width > tol:
        grid = np.linspace(-width, width, points)
        A, G = np.meshgrid(a0 + grid, g0 + grid, indexing="ij")
        vals = ll(A, G)
        i, j = np.unravel_index(np.argmax(vals), vals.shape)
        a0, g0 = A[i, j], G[i, j]
        width *= 4.0 / (points - 1)
    return a0, g0


def pearson_textbook(x, y):
    n = len(x)
    sx, sy = sum(x), sum(y)
    sxx = sum(a * a for a in x)
    syy = sum(b * b for b in y)
    sxy = sum(a * b for a, b in zip(x, y))
    return (n * sxy - sx * sy) / math.sqrt((n * sxx - sx * sx) * (n * syy - sy * sy))


def features_by_groupby(points, serve_type):
    """Second route to the per-server summaries via pandas group-by."""
    import pandas as pd

    df = pd.DataFrame([{
        "server": p.server, "speed": p.speed_mph, "bin": (p.location_bin.width, p.location_bin.depth),
    } for p in points if p.serve_type == serve_type])
    out = {}
    for server, g in df.groupby("server"):
        counts = g["bin"].value_counts()
        probs = counts.to_numpy() / counts.sum()
        top = counts.max()
        out[server] = {
            "n": len(g),
            "avg_speed": g["speed"].mean(),
            "sd_speed": g["speed"].std(ddof=1),
            "loc_entropy": float(-(probs * np.log2(probs)).sum()),
            "modal_loc": sorted(b for b, c in counts.items() if c == top)[0],
        }
    return out
