"""Slow, obviously-correct reference computations used as test oracles.

Nothing here imports the code paths under test beyond plain data types.
"""

import itertools
from fractions import Fraction

import numpy as np


def exact_le(a, b, r):
    """|a - b| <= r in rational arithmetic, so boundary ties are decided exactly."""
    d2 = sum((Fraction(float(x)) - Fraction(float(y))) ** 2 for x, y in zip(a, b))
    return d2 <= Fraction(float(r)) ** 2


def within_matrix(points, controls, r):
    """Full N x M membership matrix; pairs near the boundary go through exact_le."""
    points = np.asarray(points, dtype=float)
    controls = np.asarray(controls, dtype=float)
    out = np.zeros((len(points), len(controls)), dtype=bool)
    for s in range(0, len(points), 2048):
        P = points[s : s + 2048]
        D = np.sqrt(((P[:, None, :] - controls[None, :, :]) ** 2).sum(-1))
        block = D <= r
        for i, j in zip(*np.nonzero(np.abs(D - r) <= 1e-9 * (r + 1))):
            block[i, j] = exact_le(P[i], controls[j], r)
        out[s : s + 2048] = block
    return out


def brute_force_sample(points, controls, r):
    """Indices of points within distance r (inclusive) of any control, O(N*M)."""
    if len(controls) == 0:
        return np.zeros(0, dtype=int)
    return np.flatnonzero(within_matrix(points, controls, r).any(axis=1))


def brute_force_margin(sampled, sfm, margin):
    if len(sfm) == 0:
        return np.arange(len(sampled))
    return np.flatnonzero(~within_matrix(sampled, sfm, margin).any(axis=1))


def greedy_cluster(points, radius):
    near = within_matrix(points, points, radius)
    kept = []
    for i in range(len(points)):
        if not any(near[i, j] for j in kept):
            kept.append(i)
    return np.array(kept, dtype=int)


def connected_components(edges):
    """Transitive closure by repeated set merging."""
    comps = []
    for a, b in edges:
        hit = [c for c in comps if a in c or b in c]
        merged = {a, b}.union(*hit)
        comps = [c for c in comps if c not in hit] + [merged]
    return comps


def dense_tps_reference(sources, targets):
    """Assemble the (M+4)^2 interpolation system from scratch and solve it densely."""
    M = len(sources)
    L = np.zeros((M + 4, M + 4))
    for i in range(M):
        for j in range(M):
            L[i, j] = np.sqrt(sum((sources[i][k] - sources[j][k]) ** 2 for k in range(3)))
        L[i, M] = 1.0
        L[i, M + 1 : M + 4] = sources[i]
    L[M:, :M] = L[:M, M:].T
    rhs = np.zeros((M + 4, 3))
    rhs[:M] = targets
    sol = np.linalg.lstsq(L, rhs, rcond=None)[0]
    W, a = sol[:M], sol[M:]

    def evaluate(X):
        out = a[0] + X @ a[1:]
        for i in range(M):
            out = out + np.linalg.norm(X - sources[i], axis=-1)[..., None] * W[i]
        return out

    return evaluate


def naive_tps_eval(t, A, centers, W, X):
    out = np.array(t, dtype=float) + A @ X
    for c, w in zip(centers, W):
        out = out + w * np.sqrt(((X - c) ** 2).sum())
    return out


def reprojection_objective(X, Ps, pixels):
    total = 0.0
    for P, p in zip(Ps, pixels):
        y = P @ np.append(X, 1.0)
        total += (y[0] / y[2] - p[0]) ** 2 + (y[1] / y[2] - p[1]) ** 2
    return total


def grid_search_min(f, center, half_width, n=21, levels=8):
    """Coarse-to-fine exhaustive grid search over a cube."""
    c = np.array(center, dtype=float)
    h = float(half_width)
    best = (f(c), c)
    for _ in range(levels):
        ax = np.linspace(-h, h, n)
        for d in itertools.product(ax, ax, ax):
            X = c + np.array(d)
            v = f(X)
            if v < best[0]:
                best = (v, X)
        c = best[1]
        h *= 4.0 / (n - 1)
    return best


def linear_normal_equations(est, ref):
    A = np.array([[np.sum(est * est), np.sum(est)], [np.sum(est), len(est)]])
    b = np.array([np.sum(est * ref), np.sum(ref)])
    return np.linalg.solve(A, b)
