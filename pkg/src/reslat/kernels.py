"""Hot loops: the mean-field vector field, fixed-step RK4, and the
random-sequential lattice updates.

Every kernel works on preallocated numpy arrays and is compiled with
numba unless ``RESLAT_DISABLE_NUMBA`` is set (see ``reslat._jit``).
Lattice kernels never draw random numbers themselves; callers pass the
site indices and uniforms, so compiled and fallback runs agree bit for bit.
"""

import numpy as np

from ._jit import njit

NEG_FAIL = -1e-6


@njit(cache=True)
def mf_rhs(a, u, out):
    """du/dt for the mean-field model, written into ``out``.

    A resource column with zero total ability is skipped entirely: neither
    its births nor the matching deaths happen, as in a canceled update.
    """
    n = u.shape[0]
    for i in range(n):
        out[i] = 0.0
    for j in range(n):
        d = 0.0
        for m in range(n):
            d += a[m, j] * u[m]
        if d > 0.0:
            # a[i, j] u[i] / d lies in [0, 1], so nothing overflows
            for i in range(n):
                out[i] += (a[i, j] * u[i] / d) * u[j]
            out[j] -= u[j]


@njit(cache=True)
def _rk4_step(a, u, h, k1, k2, k3, k4, tmp, out):
    # returns False if a stage state dips below NEG_FAIL
    n = u.shape[0]
    mf_rhs(a, u, k1)
    for i in range(n):
        tmp[i] = u[i] + 0.5 * h * k1[i]
        if tmp[i] < NEG_FAIL:
            return False
    mf_rhs(a, tmp, k2)
    for i in range(n):
        tmp[i] = u[i] + 0.5 * h * k2[i]
        if tmp[i] < NEG_FAIL:
            return False
    mf_rhs(a, tmp, k3)
    for i in range(n):
        tmp[i] = u[i] + h * k3[i]
        if tmp[i] < NEG_FAIL:
            return False
    mf_rhs(a, tmp, k4)
    s = 0.0
    for i in range(n):
        x = u[i] + h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0
        if x < NEG_FAIL:
            return False
        if x < 0.0:
            x = 0.0
        out[i] = x
        s += x
    for i in range(n):
        out[i] /= s
    return True


@njit(cache=True)
def rk4_integrate(a, u0, h, nsteps, h_last, states):
    """Fill ``states[0..nsteps]`` (plus one row for a short final step when
    ``h_last > 0``). Returns the number of rows written; a value smaller
    than ``states.shape[0]`` means a stage went below ``NEG_FAIL``."""
    n = u0.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    for i in range(n):
        states[0, i] = u0[i]
    for s in range(nsteps):
        if not _rk4_step(a, states[s], h, k1, k2, k3, k4, tmp, states[s + 1]):
            return s + 1
    if h_last > 0.0:
        if not _rk4_step(a, states[nsteps], h_last, k1, k2, k3, k4, tmp, states[nsteps + 1]):
            return nsteps + 1
        return nsteps + 2
    return nsteps + 1


@njit(cache=True)
def _choose(a, j, nb, w, r):
    # new type for a site of type j given neighbour counts; -1 means canceled
    n = nb.shape[0]
    total = 0.0
    for i in range(n):
        w[i] = a[i, j] * nb[i]
        total += w[i]
    if total <= 0.0:
        return -1
    x = r * total
    acc = 0.0
    for i in range(n):
        acc += w[i]
        if x < acc:
            return i
    return j


@njit(cache=True)
def lattice_updates_2d(grid, a, counts, sites, uniforms):
    """Apply ``len(sites)`` updates to a 2D torus in place.

    ``sites`` holds flat row-major indices and ``uniforms`` values in [0, 1).
    ``counts`` is kept in sync. Stops right after the update that makes the
    lattice monochromatic; returns the number of updates applied.
    """
    lx, ly = grid.shape
    size = lx * ly
    n = counts.shape[0]
    nb = np.zeros(n, dtype=np.int64)
    w = np.empty(n)
    for s in range(sites.shape[0]):
        idx = sites[s]
        x = idx // ly
        y = idx - x * ly
        j = grid[x, y]
        for i in range(n):
            nb[i] = 0
        nb[grid[x - 1 if x > 0 else lx - 1, y]] += 1
        nb[grid[x + 1 if x < lx - 1 else 0, y]] += 1
        nb[grid[x, y - 1 if y > 0 else ly - 1]] += 1
        nb[grid[x, y + 1 if y < ly - 1 else 0]] += 1
        new = _choose(a, j, nb, w, uniforms[s])
        if new >= 0 and new != j:
            grid[x, y] = new
            counts[j] -= 1
            counts[new] += 1
            if counts[new] == size:
                return s + 1
    return sites.shape[0]


@njit(cache=True)
def lattice_updates_1d(line, a, counts, sites, uniforms, frozen_ends):
    """1D analogue of ``lattice_updates_2d``. With ``frozen_ends`` the two
    end sites are never updated and the segment does not wrap."""
    size = line.shape[0]
    n = counts.shape[0]
    nb = np.zeros(n, dtype=np.int64)
    w = np.empty(n)
    for s in range(sites.shape[0]):
        x = sites[s]
        if frozen_ends and (x == 0 or x == size - 1):
            continue
        j = line[x]
        for i in range(n):
            nb[i] = 0
        nb[line[x - 1 if x > 0 else size - 1]] += 1
        nb[line[x + 1 if x < size - 1 else 0]] += 1
        new = _choose(a, j, nb, w, uniforms[s])
        if new >= 0 and new != j:
            line[x] = new
            counts[j] -= 1
            counts[new] += 1
            if counts[new] == size:
                return s + 1
    return sites.shape[0]


def same_type_edges(state: np.ndarray) -> tuple[int, int]:
    """(edges joining equal types, total edges) over the torus, each
    unordered nearest-neighbour edge counted once."""
    same = 0
    total = 0
    for ax in range(state.ndim):
        same += int(np.count_nonzero(state == np.roll(state, 1, axis=ax)))
        total += state.size
    return same, total
