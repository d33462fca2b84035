"""Shared builders and independent oracles for the test suite."""

import numpy as np

import voltvar as vv
from voltvar.network import Bus, Line


def two_bus_feeder(r=0.1, x=0.5, v0=1.05, p_c=0.0, q_c=0.0, inverter=None):
    """Single-line feeder; default inverter is effectively unconstrained."""
    if inverter is None:
        inverter = vv.Inverter(s=1e6, p=0.0)
    return vv.build_feeder(
        [Bus(0), Bus(1, p_c=p_c, q_c=q_c)],
        [Line(0, 1, r=r, x=x)],
        inverters={1: inverter},
        slack_label=0,
        v0=v0,
    )


def random_tree_records(rng, n, degree_one_root=False, z_lo=0.01, z_hi=1.0):
    """Random recursive tree on buses 0..n with uniform impedances."""
    buses = [Bus(i) for i in range(n + 1)]
    lines = []
    for i in range(1, n + 1):
        if i == 1:
            parent = 0
        elif degree_one_root:
            parent = int(rng.integers(1, i))
        else:
            parent = int(rng.integers(0, i))
        lines.append(
            Line(parent, i, r=float(rng.uniform(z_lo, z_hi)), x=float(rng.uniform(z_lo, z_hi)))
        )
    return buses, lines


def random_feeder(rng, n, degree_one_root=False, **kwargs):
    buses, lines = random_tree_records(rng, n, degree_one_root, **kwargs)
    return vv.build_feeder(buses, lines, slack_label=0)


def brute_force_sensitivities(feeder):
    """O(n^3) oracle: enumerate the explicit line sets of every root path
    and sum impedances over pairwise intersections."""
    paths = []
    for k in range(feeder.n):
        lines = set()
        node = k
        while node >= 0:
            lines.add(node)
            node = int(feeder.parent[node])
        paths.append(lines)
    X = np.zeros((feeder.n, feeder.n))
    R = np.zeros((feeder.n, feeder.n))
    for i in range(feeder.n):
        for j in range(feeder.n):
            common = paths[i] & paths[j]
            X[i, j] = sum(feeder.x[l] for l in common)
            R[i, j] = sum(feeder.r[l] for l in common)
    return R, X


def single_line_distflow_oracle(r, x, p_net, q_net, v0=1.0):
    """Exact one-line solution by bisection on the current fixed point."""

    def gap(ell):
        p = p_net + r * ell
        q = q_net + x * ell
        return (p * p + q * q) / v0**2 - ell

    lo, hi = 0.0, 1.0
    while gap(hi) > 0:
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("no solvable operating point")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gap(mid) > 0:
            lo = mid
        else:
            hi = mid
    ell = 0.5 * (lo + hi)
    p = p_net + r * ell
    q = q_net + x * ell
    v1sq = v0**2 - 2 * (r * p + x * q) + (r * r + x * x) * ell
    return np.sqrt(v1sq), ell
