"""Pure numpy kernels; ``jacobi_eigvalsh`` has a compiled twin in ``_ext.pyx``.

The eigensolver here uses the round-robin (parallel) ordering of Jacobi
rotations so that each round of n/2 disjoint rotations is two small matrix
products instead of a Python loop over pairs.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _round_robin(n):
    """Yield n-1 (or n) rounds of disjoint index pairs covering every pair once."""
    players = list(range(n)) if n % 2 == 0 else list(range(n)) + [-1]
    m = len(players)
    for _ in range(m - 1):
        pairs = [
            (min(players[i], players[m - 1 - i]), max(players[i], players[m - 1 - i]))
            for i in range(m // 2)
            if players[i] >= 0 and players[m - 1 - i] >= 0
        ]
        yield np.array(pairs, dtype=np.intp).reshape(-1, 2)
        players = [players[0]] + [players[-1]] + players[1:-1]


def jacobi_eigvalsh(a, tol=1e-12, max_sweeps=100):
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    norm2 = float(np.sum(a * a))
    if norm2 == 0.0:
        return np.zeros(n), 0
    limit = tol * tol * norm2
    rounds = list(_round_robin(n))
    iu = np.triu_indices(n, 1)

    for sweep in range(max_sweeps + 1):
        off2 = 2.0 * float(np.sum(a[iu] ** 2))
        if off2 <= limit:
            return np.diag(a).copy(), sweep
        if sweep == max_sweeps:
            break
        for pairs in rounds:
            if len(pairs) == 0:
                continue
            p, q = pairs[:, 0], pairs[:, 1]
            apq = a[p, q]
            live = apq != 0.0
            if not live.any():
                continue
            p, q, apq = p[live], q[live], apq[live]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0.0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rot = np.eye(n)
            rot[p, p] = c
            rot[q, q] = c
            rot[p, q] = s
            rot[q, p] = -s
            a = rot.T @ a @ rot
            a[p, q] = 0.0
            a[q, p] = 0.0
    return np.diag(a).copy(), -1


def conv2d(x, w, stride=1, pad=0):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    k = w.shape[2]
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))
