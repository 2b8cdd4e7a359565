"""Finite-difference gradient checking shared by the network and dual tests."""

import numpy as np


def fd_check(fun, flat, grad, idx, h=1e-6):
    """Relative error between ``grad[idx]`` and central differences of ``fun``.

    ``fun()`` is evaluated after perturbing ``flat`` in place.
    """
    fd = np.empty(len(idx))
    for n, k in enumerate(idx):
        old = flat[k]
        flat[k] = old + h
        up = fun()
        flat[k] = old - h
        down = fun()
        flat[k] = old
        fd[n] = (up - down) / (2 * h)
    bp = grad[idx]
    scale = max(np.linalg.norm(fd), np.linalg.norm(bp), 1e-30)
    return float(np.linalg.norm(fd - bp) / scale)


def group_indices(net, groups, rng, per_array=6):
    """Random flat indices for every parameter array, split by network group."""
    out = {name: [] for name in groups}
    offset = 0
    for shape in net.shapes:
        size = int(np.prod(shape))
        block = np.arange(offset, offset + size).reshape(shape)
        for name, sl in groups.items():
            sub = block[sl].ravel()
            out[name].extend(rng.choice(sub, size=min(per_array, sub.size), replace=False))
        offset += size
    return {k: np.array(v) for k, v in out.items()}
