import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from reslat.core import (
    DegenerateError,
    InteractionMatrix,
    Regime,
    ReslatError,
    StepTooLargeError,
    ThetaParams,
    ZeroDiagonalError,
    builtin_matrix,
    family_matrix,
)
from reslat.meanfield import (
    Cycle,
    PairStability,
    Stability,
    Trajectory,
    boundary_equilibria,
    classify,
    classify_two_type,
    extinction_rate,
    heteroclinic_analysis,
    integrate,
    invadibility,
    nontrivial_equilibrium_stability,
    permanence_check,
    rhs,
    trivial_eigenvalues,
    trivial_equilibrium_stability,
    tristability_check,
    two_type_equilibrium,
)

TRISTABLE = InteractionMatrix([[2, 1, 1], [1, 2, 1], [1, 1, 2]])
STABLE_CYCLE = InteractionMatrix([[3, 0, 4], [4, 3, 0], [0, 4, 3]])
DIAG_ZERO = InteractionMatrix([[0, 3, 1], [3, 0, 1], [1, 1, 0]])

entry = st.floats(0.0, 3.0, allow_nan=False)
pos_entry = st.floats(0.05, 3.0, allow_nan=False)


def matrices(n, elements=entry):
    rows = st.lists(st.lists(elements, min_size=n, max_size=n), min_size=n, max_size=n)
    return rows.filter(lambda r: all(any(r[i][j] > 0 for i in range(n)) for j in range(n))).map(
        InteractionMatrix)


def simplex_points(n, interior=False):
    lo = 0.01 if interior else 0.0
    return st.lists(st.floats(lo, 1.0), min_size=n, max_size=n).filter(
        lambda w: sum(w) > 0).map(lambda w: np.asarray(w) / sum(w))


def h_oracle(a, u1):
    # the reduced two-species field in u1 alone
    u2 = 1.0 - u1
    return (a[0, 1] / (a[0, 1] * u1 + a[1, 1] * u2)
            - a[1, 0] / (a[0, 0] * u1 + a[1, 0] * u2)) * u1 * u2


# ---------------------------------------------------------------- rhs


def test_rhs_examples():
    u = np.array([0.2, 0.3, 0.5])
    np.testing.assert_array_equal(rhs(builtin_matrix("voter", n=3), u), 0.0)
    np.testing.assert_allclose(rhs(builtin_matrix("M6"), [0.5, 0.5]), 0.0, atol=1e-15)
    # M6 at (0.9, 0.1): du1/dt = (1/0.9 - 1/0.1) * 0.09
    np.testing.assert_allclose(rhs(builtin_matrix("M6"), [0.9, 0.1]),
                               [-0.8, 0.8], atol=1e-12)


def test_rhs_matches_reduced_two_species_form_1000_points():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        a = rng.uniform(0.01, 2.0, size=(2, 2))
        u1 = rng.uniform(0.0, 1.0)
        du = rhs(InteractionMatrix(a), [u1, 1 - u1])
        expect = h_oracle(a, u1)
        assert abs(du[0] - expect) < 1e-12
        assert abs(du[1] + expect) < 1e-12


def test_rhs_zero_denominator_contributes_nothing():
    m = builtin_matrix("M6")
    np.testing.assert_array_equal(rhs(m, [1.0, 0.0]), [0.0, 0.0])
    m4 = builtin_matrix("M4", eps=0.1)
    np.testing.assert_array_equal(rhs(m4, [0.0, 1.0]), [0.0, 0.0])


@settings(max_examples=300)
@given(st.integers(2, 4).flatmap(lambda n: st.tuples(matrices(n), simplex_points(n))))
def test_conservation(case):
    m, u = case
    d = rhs(m, u)
    assert np.all(np.isfinite(d))
    assert abs(d.sum()) < 1e-12


@settings(max_examples=200)
@given(st.integers(2, 4).flatmap(lambda n: st.tuples(matrices(n), simplex_points(n))))
def test_absent_species_stay_absent_in_field(case):
    m, u = case
    d = rhs(m, u)
    assert np.all(d[u == 0] == 0)


# ---------------------------------------------------------------- integrator


def test_integrate_examples():
    tr = integrate(builtin_matrix("voter"), [0.3, 0.7], 10)
    np.testing.assert_allclose(tr.final, [0.3, 0.7], atol=1e-15)
    tr = integrate(builtin_matrix("M6"), [0.9, 0.1], 50)
    np.testing.assert_allclose(tr.final, [0.5, 0.5], atol=1e-6)
    tr = integrate(InteractionMatrix([[1, 3], [2, 1]]), [0.1, 0.9], 100)
    np.testing.assert_allclose(tr.final, [4 / 7, 3 / 7], atol=1e-6)


def test_integrate_time_grid():
    tr = integrate(builtin_matrix("M0"), [0.2, 0.3, 0.5], 1.005, step=0.01)
    assert tr.times[0] == 0 and tr.times[-1] == pytest.approx(1.005, abs=1e-15)
    assert np.all(np.diff(tr.times) > 0)
    tr = integrate(builtin_matrix("M0"), [0.2, 0.3, 0.5], 1.0, step=0.01, record_every=7)
    assert tr.times[-1] == pytest.approx(1.0)


def test_integrate_rejects_bad_input():
    with pytest.raises(ReslatError):
        integrate(builtin_matrix("M0"), [0.5, 0.5], 1)
    with pytest.raises(ReslatError):
        integrate(builtin_matrix("M0"), [0.5, 0.6, 0.1], 1)
    with pytest.raises(ReslatError):
        integrate(builtin_matrix("M6"), [0.5, 0.5], -1)


def test_step_too_large():
    with pytest.raises(StepTooLargeError) as e:
        integrate(builtin_matrix("M0"), [0.98, 0.01, 0.01], 20, step=5)
    assert e.value.code == "STEP_TOO_LARGE"


@settings(max_examples=60, deadline=None)
@given(matrices(3, pos_entry), simplex_points(3, interior=True))
def test_trajectory_stays_on_simplex_within_bounds(m, u0):
    tr = integrate(m, u0, 10, step=0.01, record_every=10)
    assert np.all(tr.states >= 0)
    np.testing.assert_allclose(tr.states.sum(axis=1), 1.0, atol=1e-9)
    bound = 0.9 * u0[None, :] * np.exp(-tr.times)[:, None]
    assert np.all(tr.states >= bound)


@settings(max_examples=60, deadline=None)
@given(matrices(3), simplex_points(2, interior=True), st.integers(0, 2))
def test_zero_coordinates_stay_zero(m, w, k):
    u0 = np.insert(w, k, 0.0)
    tr = integrate(m, u0, 5, step=0.01)
    assert np.all(tr.states[:, k] == 0.0)


@settings(max_examples=40, deadline=None)
@given(matrices(3, pos_entry), simplex_points(3, interior=True))
def test_dominated_species_decay_bound(m, u0):
    a = m.entries
    pairs = [(i, j) for i, j in itertools.permutations(range(3), 2)
             if extinction_rate(m, i + 1, j + 1) is not None]
    assume(pairs)
    i, j = pairs[0]
    gamma = extinction_rate(m, i + 1, j + 1)
    tr = integrate(m, u0, 20, step=0.01, record_every=10)
    bound = u0[j] / u0[i] * np.exp(-gamma * tr.times) * (1 + 1e-6)
    assert np.all(tr.states[:, j] <= bound + 1e-15)
    assert a[i].min() >= 0


def test_trajectory_csv_round_trip(tmp_path):
    tr = integrate(builtin_matrix("M0"), [0.2, 0.3, 0.5], 2)
    tr.to_csv(tmp_path / "t.csv")
    back = Trajectory.from_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.states, tr.states)
    np.testing.assert_array_equal(back.times, tr.times)
    assert (tmp_path / "t.csv").read_text().startswith("t,u1,u2,u3\n")


# ---------------------------------------------------------------- two species


def test_two_type_equilibrium_examples():
    np.testing.assert_allclose(two_type_equilibrium(builtin_matrix("M6")), [0.5, 0.5])
    np.testing.assert_allclose(two_type_equilibrium(InteractionMatrix([[1, 3], [2, 1]])),
                               [4 / 7, 3 / 7], atol=1e-15)
    assert two_type_equilibrium(builtin_matrix("M7")) is None
    assert two_type_equilibrium(builtin_matrix("M5", eps=0.2)) is None


def test_classify_two_type_examples():
    r = classify_two_type(builtin_matrix("M5", eps=0.2))
    assert (r.label, r.index) == (Regime.CHEATER_WINS, 2)
    r = classify_two_type(InteractionMatrix([[2, 1], [1, 2]]))
    assert r.label is Regime.BISTABLE
    assert r.evidence["threshold_u1"] == pytest.approx(0.5)
    r = classify_two_type(builtin_matrix("M6"))
    assert r.label is Regime.COOPERATION_COEXIST
    assert r.evidence["equilibrium"] == pytest.approx([0.5, 0.5])
    r = classify_two_type(InteractionMatrix([[3, 1], [1, 0.5]]))
    assert (r.label, r.index) == (Regime.CHEATER_WINS, 1)


@pytest.mark.parametrize("m", [
    builtin_matrix("voter"),
    builtin_matrix("M7"),
    InteractionMatrix([[1, 1], [1, 2]]),
    InteractionMatrix([[1, 0], [0, 1]]),
])
def test_classify_two_type_degenerate(m):
    with pytest.raises(DegenerateError) as e:
        classify_two_type(m)
    assert e.value.code == "DEGENERATE"


def test_slope_matches_finite_difference_of_reduced_field():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a = rng.uniform(0.1, 1.0, size=(2, 2))
        r = classify_two_type(InteractionMatrix(a))
        if r.label is Regime.CHEATER_WINS:
            continue
        u = r.evidence["equilibrium"][0]
        h = 1e-6
        fd = (h_oracle(a, u + h) - h_oracle(a, u - h)) / (2 * h)
        assert r.evidence["eigenvalue"] == pytest.approx(fd, rel=1e-5, abs=1e-8)
        assert (fd < 0) == (r.label is Regime.COOPERATION_COEXIST)


def test_classifier_agrees_with_ode_200_matrices():
    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 200:
        a = rng.uniform(0.1, 1.0, size=(2, 2))
        if abs(a[0, 0] - a[1, 0]) < 0.05 or abs(a[1, 1] - a[0, 1]) < 0.05:
            continue
        m = InteractionMatrix(a)
        r = classify_two_type(m)
        if r.label is not Regime.CHEATER_WINS and abs(r.evidence["eigenvalue"]) < 0.02:
            continue
        checked += 1
        for _ in range(5):
            x0 = rng.uniform(0.02, 0.98)
            if r.label is Regime.BISTABLE and abs(x0 - r.evidence["threshold_u1"]) < 0.05:
                continue
            x = integrate(m, [x0, 1 - x0], 400, step=0.05).final[0]
            if r.label is Regime.CHEATER_WINS:
                assert abs(x - (1.0 if r.index == 1 else 0.0)) < 0.01
            elif r.label is Regime.COOPERATION_COEXIST:
                assert abs(x - r.evidence["equilibrium"][0]) < 1e-4
            else:
                assert abs(x - (1.0 if x0 > r.evidence["threshold_u1"] else 0.0)) < 0.01


def test_extinction_rate_examples():
    assert extinction_rate(builtin_matrix("M5", eps=0.2), 2, 1) == pytest.approx(1 / 3)
    assert extinction_rate(builtin_matrix("voter"), 1, 2) is None
    assert extinction_rate(builtin_matrix("M4", eps=0.1), 2, 1) is None
    with pytest.raises(ReslatError):
        extinction_rate(builtin_matrix("M5", eps=0.2), 1, 1)


# ---------------------------------------------------------------- three species


def test_trivial_stability_examples():
    s, lam = trivial_equilibrium_stability(builtin_matrix("M0"), 1)
    assert s is Stability.SADDLE and lam.tolist() == [3.0, -1.0]
    s, lam = trivial_equilibrium_stability(builtin_matrix("M3"), 1)
    assert s is Stability.SOURCE and lam.tolist() == [1.0, 1.0]
    for i in (1, 2, 3):
        s, lam = trivial_equilibrium_stability(TRISTABLE, i)
        assert s is Stability.SINK and lam.tolist() == [-0.5, -0.5]


def test_trivial_stability_errors():
    with pytest.raises(ZeroDiagonalError):
        trivial_equilibrium_stability(builtin_matrix("M1"), 2)
    with pytest.raises(DegenerateError):
        trivial_equilibrium_stability(InteractionMatrix([[1, 1, 1], [1, 2, 1], [2, 1, 2]]), 1)


def test_invadibility_examples():
    assert invadibility(builtin_matrix("M3"), 1, 2) == 2.0
    assert invadibility(builtin_matrix("M1"), 1, 2) == 12.0


@settings(max_examples=100)
@given(matrices(3), st.sampled_from(list(itertools.permutations((1, 2, 3), 2))))
def test_invadibility_symmetric(m, pair):
    i, j = pair
    assert invadibility(m, i, j) == pytest.approx(invadibility(m, j, i), abs=1e-12)


@settings(max_examples=200)
@given(matrices(3))
def test_impossibility_expansion_of_delta23(m):
    a = m.entries
    expand = (2 * (a[1, 2] - a[2, 2]) * (a[0, 1] - a[1, 1])
              + 2 * (a[2, 1] - a[1, 1]) * (a[0, 2] - a[1, 2]))
    assert abs(invadibility(m, 2, 3) - expand) < 1e-12


def test_m8_delta_identity_sample():
    th = (0.1, 0.25, 0.7)
    m = family_matrix(ThetaParams("M8", th))
    for i, j in ((1, 2), (2, 3), (1, 3)):
        expect = 2 * (1 - 3 * th[i - 1]) * (1 - 3 * th[j - 1])
        assert abs(invadibility(m, i, j) - expect) < 1e-12


def test_nontrivial_stability_examples():
    s, u = nontrivial_equilibrium_stability(builtin_matrix("M3"), 1, 2)
    assert s is PairStability.REPELLING
    np.testing.assert_allclose(u, [0.5, 0.5, 0.0])
    s, u = nontrivial_equilibrium_stability(DIAG_ZERO, 1, 2)
    assert s is PairStability.STABLE
    np.testing.assert_allclose(u, [0.5, 0.5, 0.0])
    s, u = nontrivial_equilibrium_stability(builtin_matrix("M0"), 1, 2)
    assert s is PairStability.ABSENT and u is None


def test_nontrivial_pair_is_a_rest_point():
    rng = np.random.default_rng(5)
    for _ in range(100):
        m = InteractionMatrix(rng.uniform(0.0, 2.0, size=(3, 3)))
        for e in boundary_equilibria(m):
            assert abs(e.point.sum() - 1) < 1e-12
            np.testing.assert_allclose(rhs(m, e.point), 0.0, atol=1e-12)
            outside = [k for k in range(3) if k + 1 not in e.support]
            assert np.all(e.point[outside] == 0)
            if e.kind == "NONTRIVIAL":
                assert np.all((e.point[[s - 1 for s in e.support]] > 0)
                              & (e.point[[s - 1 for s in e.support]] < 1))


def test_heteroclinic_examples():
    c = heteroclinic_analysis(builtin_matrix("M0"))
    assert c.kind is Cycle.REPELLING_CYCLE and c.row_sums.tolist() == [2.0, 2.0, 2.0]
    c = heteroclinic_analysis(STABLE_CYCLE)
    assert c.kind is Cycle.STABLE_CYCLE
    np.testing.assert_allclose(c.row_sums, [-2 / 3] * 3)
    assert heteroclinic_analysis(builtin_matrix("M3")).kind is Cycle.NO_CYCLE


def test_heteroclinic_reverse_orientation():
    rev = STABLE_CYCLE.permuted([0, 2, 1])
    c = heteroclinic_analysis(rev)
    assert c.kind is Cycle.STABLE_CYCLE and c.orientation == (1, 3, 2)


def test_smooth_stable_cycle_attracts_near_boundary_start():
    # with every entry positive the vertex linearisation is valid and the
    # cycle pulls nearby orbits towards the boundary
    m = InteractionMatrix([[3, 0.1, 4], [4, 3, 0.1], [0.1, 4, 3]])
    assert heteroclinic_analysis(m).kind is Cycle.STABLE_CYCLE
    tr = integrate(m, [1 - 1e-4 - 1e-8, 1e-4, 1e-8], 200, step=0.005, record_every=20)
    assert tr.states[tr.times >= 100].min() < 1e-12


def test_permanence_examples():
    for k in range(4):
        r = permanence_check(builtin_matrix(f"M{k}"))
        assert (r.label, r.index) == (Regime.PERMANENT_CASE, k), f"M{k}"
        assert r.to_dict()["PERMANENT_CASE"] == k
    r = permanence_check(TRISTABLE)
    assert r.label is Regime.TRISTABLE and not r.is_permanent


def test_permanence_is_invariant_under_relabelling():
    for k in range(4):
        m = builtin_matrix(f"M{k}")
        for perm in itertools.permutations(range(3)):
            assert permanence_check(m.permuted(perm)).is_permanent


def test_permanence_other_labels():
    r = permanence_check(STABLE_CYCLE)
    assert r.label is Regime.HETEROCLINIC_STABLE
    assert r.evidence["cycle"]["linearization_valid"] is False
    assert permanence_check(DIAG_ZERO).label is Regime.BOUNDARY_STABLE
    # species 3 is beaten everywhere by species 1; the 1-2 pair then cooperates
    r = permanence_check(InteractionMatrix([[1, 3, 3], [2, 1, 1], [0.5, 2, 2]]))
    assert r.label is Regime.COOPERATION_COEXIST and r.evidence["excluded"] == 3


def test_permanence_degenerate():
    with pytest.raises(DegenerateError):
        permanence_check(builtin_matrix("voter", n=3))


def test_tristability_examples():
    assert tristability_check(TRISTABLE)
    assert not tristability_check(builtin_matrix("M0"))
    assert tristability_check(family_matrix(ThetaParams("M8", (0.4, 0.5, 0.9))))


@settings(max_examples=200)
@given(st.tuples(*[st.one_of(st.floats(0.0, 1 / 3 - 0.05), st.floats(1 / 3 + 0.05, 0.99))] * 3))
def test_m8_permanent_iff_all_cooperate(th):
    r = classify(family_matrix(ThetaParams("M8", th)))
    assert r.is_permanent == all(t < 1 / 3 for t in th)
    if all(t > 1 / 3 for t in th):
        assert r.label is Regime.TRISTABLE


def test_m9_examples():
    r = classify(family_matrix(ThetaParams("M9", (0.6, 0.7, 0.8))))
    assert r.label is Regime.HETEROCLINIC_STABLE and not r.is_permanent
    r = classify(family_matrix(ThetaParams("M9", (0.2, 0.3, 0.4))))
    assert r.is_permanent
    assert heteroclinic_analysis(family_matrix(ThetaParams("M9", (0.2, 0.3, 0.4)))).kind \
        is Cycle.REPELLING_CYCLE


def test_finite_difference_jacobian_at_vertices():
    rng = np.random.default_rng(9)
    for _ in range(20):
        m = InteractionMatrix(rng.uniform(0.1, 2.0, size=(3, 3)))
        for i in range(3):
            e = np.eye(3)[i]
            h = 1e-5
            J = np.column_stack([(rhs(m, e + h * d) - rhs(m, e - h * d)) / (2 * h)
                                 for d in np.eye(3)])
            got = np.sort(np.linalg.eigvals(J).real)
            want = np.sort(np.append(trivial_eigenvalues(m, i + 1), 0.0))
            np.testing.assert_allclose(got, want, atol=1e-6)


def test_classify_rejects_large_n():
    with pytest.raises(ReslatError):
        classify(builtin_matrix("voter", n=4))
    assert math.isfinite(rhs(builtin_matrix("voter", n=4), [0.25] * 4).sum())
