"""Mean-field dynamics: vector field, integrator, boundary equilibria and the
stability / permanence classification for two and three species.

Species arguments (``i``, ``j``, pairs) are 1-based, matching reports.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .core import (
    TOL,
    DegenerateError,
    InteractionMatrix,
    Regime,
    RegimeReport,
    ReslatError,
    StepTooLargeError,
    ZeroDiagonalError,
    as_simplex,
)

# ---------------------------------------------------------------- comparisons
# Strict inequalities return True/False, or None when the two sides are
# within TOL of each other.


def _lt(x: float, y: float) -> Optional[bool]:
    if abs(x - y) <= TOL:
        return None
    return bool(x < y)


def _all(*conds) -> Optional[bool]:
    if any(c is False for c in conds):
        return False
    if any(c is None for c in conds):
        return None
    return True


def _sign(x: float, what: str) -> int:
    if abs(x) <= TOL:
        raise DegenerateError(f"{what} is zero within {TOL:g}")
    return 1 if x > 0 else -1


def _check_n(m: InteractionMatrix, n: int):
    if m.n != n:
        raise ReslatError(f"expected a {n}-species matrix, got n={m.n}", "SIZE_MISMATCH")


def _idx(m: InteractionMatrix, *species: int) -> list[int]:
    out = []
    for s in species:
        if not 1 <= s <= m.n:
            raise ReslatError(f"species {s} out of range 1..{m.n}", "BAD_SPECIES")
        out.append(s - 1)
    if len(set(out)) != len(out):
        raise ReslatError(f"species must be distinct, got {species}", "BAD_SPECIES")
    return out


# ---------------------------------------------------------------- dynamics


def rhs(m: InteractionMatrix, u) -> np.ndarray:
    u = np.ascontiguousarray(u, dtype=np.float64)
    out = np.empty_like(u)
    kernels.mf_rhs(m.entries, u, out)
    return out


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def n(self) -> int:
        return self.states.shape[1]

    def to_csv(self, path) -> None:
        header = ",".join(["t"] + [f"u{k + 1}" for k in range(self.n)])
        data = np.column_stack([self.times, self.states])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> Trajectory:
        data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:])


def integrate(
    m: InteractionMatrix,
    u0,
    t_end: float,
    step: float = 0.01,
    record_every: int = 1,
) -> Trajectory:
    """Classical fixed-step RK4 on the simplex.

    After each step negative coordinates are set to 0 and the state is
    rescaled to sum 1; a coordinate that starts at 0 stays exactly 0. Any
    stage value below -1e-6 raises ``StepTooLargeError``. The last step is
    shortened so the trajectory ends exactly at ``t_end``.
    """
    if not t_end > 0 or not step > 0:
        raise ReslatError("t_end and step must be positive", "BAD_TIME")
    u0 = as_simplex(u0)
    if u0.size != m.n:
        raise ReslatError(f"initial state has {u0.size} entries for n={m.n}", "SIZE_MISMATCH")
    nsteps = int(math.floor(t_end / step + 1e-9))
    h_last = t_end - nsteps * step
    if h_last <= 1e-12 * max(1.0, t_end):
        h_last = 0.0
    rows = nsteps + 1 + (1 if h_last > 0 else 0)
    states = np.empty((rows, m.n))
    written = kernels.rk4_integrate(m.entries, u0, float(step), nsteps, float(h_last), states)
    if written < rows:
        raise StepTooLargeError(
            f"integration left the simplex near t={(written - 1) * step:g}; reduce the step"
        )
    times = np.arange(rows, dtype=np.float64) * step
    times[-1] = t_end if h_last > 0 else times[-1]
    if record_every > 1:
        keep = np.arange(0, rows, record_every)
        if keep[-1] != rows - 1:
            keep = np.append(keep, rows - 1)
        times, states = times[keep], states[keep]
    return Trajectory(times, states)


# ---------------------------------------------------------------- two species


def pair_density(a: np.ndarray, i: int, j: int) -> float:
    """Density of species i (0-based) at the i-j boundary equilibrium."""
    num = a[j, i] * (a[i, j] - a[j, j])
    den = a[i, j] * (a[j, i] - a[i, i]) + a[j, i] * (a[i, j] - a[j, j])
    return num / den


def _pair_relation(a: np.ndarray, i: int, j: int) -> tuple[Optional[bool], Optional[bool]]:
    """(cooperate, compete) for 0-based species i, j, each tri-state."""
    coop = _all(_lt(a[i, i], a[j, i]), _lt(a[j, j], a[i, j]))
    comp = _all(_lt(a[j, i], a[i, i]), _lt(a[i, j], a[j, j]))
    return coop, comp


def _pair_point(m: InteractionMatrix, i: int, j: int) -> Optional[np.ndarray]:
    coop, comp = _pair_relation(m.entries, i, j)
    if not (coop or comp):
        return None
    a = m.entries
    if a[i, j] <= TOL and a[j, i] <= TOL:
        # each species lives off its own resource only: a line of rest points
        return None
    x = pair_density(a, i, j)
    u = np.zeros(m.n)
    u[i], u[j] = x, 1.0 - x
    return u


def two_type_equilibrium(m: InteractionMatrix) -> Optional[np.ndarray]:
    """Interior rest point of the two-species system, or None.

    It exists iff both species cooperate or both compete, strictly. At a
    tie the candidate point merges with a vertex, so None is returned.
    """
    _check_n(m, 2)
    return _pair_point(m, 0, 1)


def _bistable_slope(a: np.ndarray) -> float:
    # derivative of the reduced one-dimensional field at the interior point
    num = (a[1, 0] - a[0, 0]) * (a[0, 1] - a[1, 1]) * (
        a[0, 1] * (a[0, 0] - a[1, 0]) + a[1, 0] * (a[1, 1] - a[0, 1])
    )
    return num / (a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]) ** 2


def classify_two_type(m: InteractionMatrix) -> RegimeReport:
    _check_n(m, 2)
    a = m.entries
    s1 = _sign(a[0, 0] - a[1, 0], "a11 - a21")
    s2 = _sign(a[0, 1] - a[1, 1], "a12 - a22")
    ev = {"theta": [a[0, 0] / (a[0, 0] + a[1, 0]), a[1, 1] / (a[0, 1] + a[1, 1])]}
    if s1 > 0 and s2 > 0:
        return RegimeReport(Regime.CHEATER_WINS, 1, ev)
    if s1 < 0 and s2 < 0:
        return RegimeReport(Regime.CHEATER_WINS, 2, ev)
    u = _pair_point(m, 0, 1)
    if u is None:
        raise DegenerateError("every point of the simplex is a rest point")
    ev["equilibrium"] = u.tolist()
    ev["eigenvalue"] = _bistable_slope(a)
    if s1 > 0:
        ev["threshold_u1"] = float(u[0])
        return RegimeReport(Regime.BISTABLE, None, ev)
    return RegimeReport(Regime.COOPERATION_COEXIST, None, ev)


def extinction_rate(m: InteractionMatrix, i: int, j: int) -> Optional[float]:
    """Guaranteed exponential decay rate of u_j / u_i when species i is
    strictly better than j on every resource; None otherwise."""
    ii, jj = _idx(m, i, j)
    a = m.entries
    diff = a[ii] - a[jj]
    if np.any(diff <= TOL):
        return None
    return float(np.min(diff / a.max(axis=0)))


# ---------------------------------------------------------------- three species


class Stability(str, enum.Enum):
    SINK = "SINK"
    SOURCE = "SOURCE"
    SADDLE = "SADDLE"


class PairStability(str, enum.Enum):
    STABLE = "STABLE"
    REPELLING = "REPELLING"
    SOURCE = "SOURCE"
    SADDLE = "SADDLE"
    ABSENT = "ABSENT"


class Cycle(str, enum.Enum):
    NO_CYCLE = "NO_CYCLE"
    STABLE_CYCLE = "STABLE_CYCLE"
    REPELLING_CYCLE = "REPELLING_CYCLE"
    INDETERMINATE = "INDETERMINATE"


@dataclass(frozen=True)
class BoundaryEquilibrium:
    support: tuple[int, ...]  # 1-based species
    point: np.ndarray

    @property
    def kind(self) -> str:
        return "TRIVIAL" if len(self.support) == 1 else "NONTRIVIAL"

    def to_dict(self):
        return {"kind": self.kind, "support": list(self.support), "point": self.point.tolist()}


def boundary_equilibria(m: InteractionMatrix) -> list[BoundaryEquilibrium]:
    out = []
    for i in range(m.n):
        e = np.zeros(m.n)
        e[i] = 1.0
        out.append(BoundaryEquilibrium((i + 1,), e))
    for i, j in itertools.combinations(range(m.n), 2):
        u = _pair_point(m, i, j)
        if u is not None:
            out.append(BoundaryEquilibrium((i + 1, j + 1), u))
    return out


def trivial_eigenvalues(m: InteractionMatrix, i: int) -> np.ndarray:
    """Transversal eigenvalues at vertex e_i, in the order of the other species."""
    (ii,) = _idx(m, i)
    a = m.entries
    if a[ii, ii] <= TOL:
        raise ZeroDiagonalError(f"a[{i},{i}] = 0: the vertex e{i} cannot be classified")
    others = [j for j in range(m.n) if j != ii]
    return (a[others, ii] - a[ii, ii]) / a[ii, ii]


def trivial_equilibrium_stability(m: InteractionMatrix, i: int) -> tuple[Stability, np.ndarray]:
    lam = trivial_eigenvalues(m, i)
    signs = [_sign(x, f"transversal eigenvalue at e{i}") for x in lam]
    if all(s < 0 for s in signs):
        return Stability.SINK, lam
    if all(s > 0 for s in signs):
        return Stability.SOURCE, lam
    return Stability.SADDLE, lam


def _delta(a: np.ndarray, i: int, j: int, k: int) -> float:
    return (2 * a[k, i] - a[i, i] - a[j, i]) * (a[i, j] - a[j, j]) + (
        2 * a[k, j] - a[i, j] - a[j, j]
    ) * (a[j, i] - a[i, i])


def invadibility(m: InteractionMatrix, i: int, j: int) -> float:
    """How strongly the third species grows at the i-j boundary equilibrium
    (sign only; it is defined even when that equilibrium does not exist)."""
    _check_n(m, 3)
    ii, jj = _idx(m, i, j)
    (kk,) = {0, 1, 2} - {ii, jj}
    return float(_delta(m.entries, ii, jj, kk))


def nontrivial_equilibrium_stability(
    m: InteractionMatrix, i: int, j: int
) -> tuple[PairStability, Optional[np.ndarray]]:
    _check_n(m, 3)
    ii, jj = _idx(m, i, j)
    coop, comp = _pair_relation(m.entries, ii, jj)
    if not (coop or comp):
        return PairStability.ABSENT, None
    u = _pair_point(m, ii, jj)
    d = _sign(invadibility(m, i, j), f"invadibility of the third species at e{i},{j}")
    if coop:
        return (PairStability.STABLE if d < 0 else PairStability.REPELLING), u
    return (PairStability.SOURCE if d < 0 else PairStability.SADDLE), u


def tristability_check(m: InteractionMatrix) -> bool:
    _check_n(m, 3)
    a = m.entries
    return all(a[i, i] - a[j, i] > TOL for i in range(3) for j in range(3) if i != j)


def _cycle_chain(b: np.ndarray) -> Optional[bool]:
    # e1 -> e2 -> e3 -> e1 in the labelling of b
    return _all(
        _lt(b[2, 0], b[0, 0]), _lt(b[0, 0], b[1, 0]),
        _lt(b[0, 1], b[1, 1]), _lt(b[1, 1], b[2, 1]),
        _lt(b[1, 2], b[2, 2]), _lt(b[2, 2], b[0, 2]),
    )


def vertex_psi(a: np.ndarray, i: int) -> float:
    """Sum of the per-capita growth rates at vertex e_i (0-based)."""
    return (a[:, i].sum() - 3 * a[i, i]) / a[i, i]


@dataclass(frozen=True)
class CycleResult:
    kind: Cycle
    orientation: Optional[tuple[int, int, int]] = None  # 1-based order of visits
    row_sums: Optional[np.ndarray] = None


_ORIENTATIONS = ((0, 1, 2), (0, 2, 1))


def heteroclinic_analysis(m: InteractionMatrix) -> CycleResult:
    """Look for a cycle of saddle connections between the three vertices,
    in either direction, and classify it by the characteristic row sums."""
    _check_n(m, 3)
    a = m.entries
    found = []
    for perm in _ORIENTATIONS:
        p = np.asarray(perm)
        found.append(_cycle_chain(a[np.ix_(p, p)]))
    hit = [perm for perm, ok in zip(_ORIENTATIONS, found) if ok]
    if not hit:
        if any(ok is None for ok in found):
            raise DegenerateError("cycle conditions hold only up to equalities")
        return CycleResult(Cycle.NO_CYCLE)
    orient = tuple(k + 1 for k in hit[0])
    sums = np.array([vertex_psi(a, i) for i in range(3)])
    signs = [_sign(s, f"characteristic row sum at e{i + 1}") for i, s in enumerate(sums)]
    if all(s < 0 for s in signs):
        kind = Cycle.STABLE_CYCLE
    elif all(s > 0 for s in signs):
        kind = Cycle.REPELLING_CYCLE
    else:
        kind = Cycle.INDETERMINATE
    return CycleResult(kind, orient, sums)


def _permanence_case(b: np.ndarray) -> dict[int, Optional[bool]]:
    """Tri-state truth of the four sufficient condition sets, in b's labels."""
    d12 = _delta(b, 0, 1, 2)
    d23 = _delta(b, 1, 2, 0)
    d31 = _delta(b, 2, 0, 1)

    def pos(x):
        return None if abs(x) <= TOL else bool(x > 0)

    def half(i, j, k):
        # b_ii below the mean of the other two abilities on resource i
        return _lt(b[i, i], 0.5 * (b[j, i] + b[k, i]))

    low1 = _all(_lt(b[0, 0], b[1, 0]), _lt(b[0, 0], b[2, 0]))
    low2 = _all(_lt(b[1, 1], b[2, 1]), _lt(b[1, 1], b[0, 1]))
    low3 = _all(_lt(b[2, 2], b[0, 2]), _lt(b[2, 2], b[1, 2]))
    chain1 = _all(_lt(b[2, 0], b[0, 0]), _lt(b[0, 0], b[1, 0]))
    chain3 = _all(_lt(b[1, 2], b[2, 2]), _lt(b[2, 2], b[0, 2]))
    return {
        0: _all(_cycle_chain(b), half(0, 1, 2), half(1, 2, 0), half(2, 0, 1)),
        1: _all(pos(d12), chain1, low2, chain3),
        2: _all(pos(d12), pos(d23), chain1, low2, low3),
        3: _all(pos(d12), pos(d23), pos(d31), low1, low2, low3),
    }


def _dominated(a: np.ndarray) -> Optional[tuple[int, int, bool]]:
    """(loser, winner, strict) for the first species outperformed on every
    resource by another one. Weak dominance (ties allowed) counts when the
    winner is strictly better on the resource of one of the two."""
    for k, i in itertools.permutations(range(3), 2):
        diff = a[i] - a[k]
        if np.all(diff > TOL):
            return k, i, True
    for k, i in itertools.permutations(range(3), 2):
        diff = a[i] - a[k]
        if np.all(diff >= -TOL) and (diff[i] > TOL or diff[k] > TOL):
            return k, i, False
    return None


def _evidence(m: InteractionMatrix) -> dict:
    a = m.entries
    ev: dict = {"equilibria": [e.to_dict() for e in boundary_equilibria(m)]}
    eig, psi = {}, {}
    for i in range(3):
        if a[i, i] > TOL:
            eig[f"e{i + 1}"] = trivial_eigenvalues(m, i + 1).tolist()
            psi[f"e{i + 1}"] = vertex_psi(a, i)
    delta = {}
    for i, j in ((0, 1), (1, 2), (2, 0)):
        k = 3 - i - j
        d = _delta(a, i, j, k)
        delta[f"{i + 1},{j + 1}"] = d
        if _pair_point(m, i, j) is not None:
            psi[f"e{i + 1},{j + 1}"] = d / (a[i, j] * a[j, i] - a[i, i] * a[j, j])
    ev.update(trivial_eigenvalues=eig, delta=delta, psi=psi)
    return ev


def permanence_check(m: InteractionMatrix) -> RegimeReport:
    """Three-species classification.

    Tried in order: the four sufficient conditions for permanence under all
    six relabellings, tristability, exclusion of a dominated species (the
    remaining pair is then classified as a two-species system), a stable
    heteroclinic cycle, and any locally stable boundary equilibrium.
    Anything else is UNCLASSIFIED, or DEGENERATE when a tie blocked one of
    the sufficient conditions.
    """
    _check_n(m, 3)
    a = m.entries
    ev = _evidence(m)
    blocked = False
    for perm in itertools.permutations(range(3)):
        p = np.asarray(perm)
        cases = _permanence_case(a[np.ix_(p, p)])
        for k in range(4):
            if cases[k]:
                ev["relabelling"] = [x + 1 for x in perm]
                return RegimeReport(Regime.PERMANENT_CASE, k, ev)
            blocked |= cases[k] is None

    if tristability_check(m):
        return RegimeReport(Regime.TRISTABLE, None, ev)

    dom = _dominated(a)
    if dom is not None:
        loser, winner, strict = dom
        rest = [s for s in range(3) if s != loser]
        sub = classify_two_type(m.submatrix(rest))
        ev.update(excluded=loser + 1, dominated_by=winner + 1, strict_dominance=strict)
        ev["pair"] = [s + 1 for s in rest]
        ev["pair_evidence"] = sub.evidence
        index = None if sub.index is None else rest[sub.index - 1] + 1
        return RegimeReport(sub.label, index, ev)

    try:
        cyc = heteroclinic_analysis(m)
    except DegenerateError:
        cyc, blocked = CycleResult(Cycle.NO_CYCLE), True
    if cyc.kind is not Cycle.NO_CYCLE:
        # the vertex eigenvalues assume every resource is exploited at each
        # vertex (a_ik > 0); otherwise the field is not smooth there
        ev["cycle"] = {"kind": cyc.kind.value, "orientation": list(cyc.orientation),
                       "row_sums": cyc.row_sums.tolist(),
                       "linearization_valid": bool(np.all(a > TOL))}
    if cyc.kind is Cycle.STABLE_CYCLE:
        return RegimeReport(Regime.HETEROCLINIC_STABLE, None, ev)
    if cyc.kind is Cycle.REPELLING_CYCLE:
        # the case-0 test above already covers this; kept for completeness
        return RegimeReport(Regime.HETEROCLINIC_REPELLING_PERMANENT, None, ev)

    stable = []
    for i in range(3):
        try:
            if trivial_equilibrium_stability(m, i + 1)[0] is Stability.SINK:
                stable.append(f"e{i + 1}")
        except (DegenerateError, ZeroDiagonalError):
            blocked = True
    for i, j in ((1, 2), (2, 3), (1, 3)):
        try:
            if nontrivial_equilibrium_stability(m, i, j)[0] is PairStability.STABLE:
                stable.append(f"e{i},{j}")
        except DegenerateError:
            blocked = True
    if stable:
        ev["stable_boundary"] = stable
        return RegimeReport(Regime.BOUNDARY_STABLE, None, ev)
    if blocked:
        raise DegenerateError("no sufficient condition decides this matrix strictly")
    return RegimeReport(Regime.UNCLASSIFIED, None, ev)


def classify(m: InteractionMatrix) -> RegimeReport:
    if m.n == 2:
        return classify_two_type(m)
    if m.n == 3:
        return permanence_check(m)
    raise ReslatError("analytic classification covers n = 2 and n = 3 only", "SIZE_MISMATCH")
