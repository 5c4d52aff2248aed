"""Shared test utilities: central finite differences and gradient comparison."""

import numpy as np

FD_H = 1e-6


def finite_difference(f, x, h=FD_H):
    """Central-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for k in range(xf.size):
        orig = xf[k]
        xf[k] = orig + h
        up = f(x)
        xf[k] = orig - h
        down = f(x)
        xf[k] = orig
        flat[k] = (up - down) / (2 * h)
    return grad


def assert_grad_close(analytic, numeric, rel=1e-5, abs_near_zero=1e-8):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    assert analytic.shape == numeric.shape
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric)
    ok = (err <= abs_near_zero) | (err <= rel * denom)
    assert ok.all(), f"gradient mismatch: max rel {np.max(err / np.maximum(denom, 1e-300)):.3g}"


def brute_force_matching(adj, n_right):
    """Exhaustive maximum bipartite matching by backtracking over left nodes."""
    best = 0

    def rec(l, used, count):
        nonlocal best
        if count + (len(adj) - l) <= best:
            return
        if l == len(adj):
            best = max(best, count)
            return
        rec(l + 1, used, count)
        for r in adj[l]:
            if r not in used:
                used.add(r)
                rec(l + 1, used, count + 1)
                used.remove(r)

    rec(0, set(), 0)
    return best


def fd_grads_multi(f, arrays, h=FD_H):
    """Central differences of scalar f(list-of-arrays) wrt each array."""
    arrays = [np.asarray(a, dtype=np.float64).copy() for a in arrays]
    grads = []
    for target in arrays:
        g = np.zeros_like(target)
        flat_t = target.reshape(-1)
        flat_g = g.reshape(-1)
        for k in range(flat_t.size):
            orig = flat_t[k]
            flat_t[k] = orig + h
            up = f(arrays)
            flat_t[k] = orig - h
            down = f(arrays)
            flat_t[k] = orig
            flat_g[k] = (up - down) / (2 * h)
        grads.append(g)
    return grads
