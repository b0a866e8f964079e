"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from skillgraph.dataio import InstrumentTrack
from skillgraph.graph import SurgicalGraph


def make_track(positions, t=None, clip_id="c0", instrument_id="tool0", visible=None):
    positions = np.asarray(positions, dtype=np.float64)
    n = len(positions)
    if t is None:
        t = np.arange(n, dtype=np.float64)
    if visible is None:
        visible = np.ones(n, dtype=bool)
    return InstrumentTrack(
        clip_id, instrument_id, np.arange(n, dtype=np.int64),
        np.asarray(t, dtype=np.float64), positions, np.asarray(visible, dtype=bool),
    )


def random_adjacency(rng, n, p=0.5, w_lo=0.5, w_hi=2.0):
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.uniform() < p:
                A[i, j] = A[j, i] = rng.uniform(w_lo, w_hi)
    return A


def random_graph(rng, n, f=3, p=0.6, labels=None):
    A = random_adjacency(rng, n, p)
    X = rng.normal(size=(n, f))
    node_ids = [(f"i{k}", "p0") for k in range(n)]
    return SurgicalGraph("t", node_ids, X, A, labels)


def union_find_components(A) -> int:
    """Independent connected-component count (isolated nodes included)."""
    n = A.shape[0]
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(n):
        for j in range(i + 1, n):
            if A[i, j] > 0:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    return len({find(i) for i in range(n)})


def gradcheck(model, g, target, step=1e-5, rel_tol=1e-5, abs_tol=1e-8):
    """Central-difference comparison for every parameter coordinate.

    Returns (n_checked, n_failed, per_block) where per_block maps block name
    to (checked, failed). A coordinate fails when both the relative error
    exceeds rel_tol and the absolute difference exceeds abs_tol (the absolute
    floor keeps near-zero gradients from tripping on FD roundoff).
    """
    from skillgraph.gnn import forward_backward, parameters

    _, grads = forward_backward(model, g, target)
    params = parameters(model)
    checked = failed = 0
    per_block = {}
    for name, P in params.items():
        flat = P.reshape(-1)
        gflat = grads[name].reshape(-1)
        block_failed = 0
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            lp, _ = forward_backward(model, g, target)
            flat[idx] = orig - step
            lm, _ = forward_backward(model, g, target)
            flat[idx] = orig
            numeric = (lp - lm) / (2 * step)
            analytic = gflat[idx]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-300)
            if rel > rel_tol and abs(analytic - numeric) > abs_tol:
                block_failed += 1
        per_block[name] = (flat.size, block_failed)
        checked += flat.size
        failed += block_failed
    return checked, failed, per_block


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
