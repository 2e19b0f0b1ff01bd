import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cylinder_husking, gs_canonical_line, gs_husking_line, jacobi_husking_box
from sandsoliton.errors import BudgetExhaustedError, NonContainmentError, ValidationError
from sandsoliton.husking import (WindowPolicy, canonical_husking, check_e_increasing, husk_k,
                                 slicing_decomposition, solve_husking)
from sandsoliton.lattice import Box, IntField, MinAffine, identity_graph, kernel_quotient
from sandsoliton.patterns import soliton

BOX15 = Box((0, 0), (14, 14))
G2 = identity_graph(2)


def _random_reference(rng, n_forms=None):
    """min of 2-4 affine forms with small slopes, centred on the 15x15 window."""
    k = n_forms or int(rng.integers(2, 5))
    forms = []
    for _ in range(k):
        s = (int(rng.integers(-3, 4)), int(rng.integers(-3, 4)))
        c = int(rng.integers(-6, 7)) - 7 * (s[0] + s[1])
        forms.append((s, c))
    return MinAffine(tuple(forms))


def _field(spec):
    return IntField.from_spec(G2, BOX15, spec)


seeds = st.integers(0, 2 ** 32 - 1)


@given(seeds)
@settings(max_examples=60)
def test_finite_window_matches_jacobi_oracle(seed):
    rng = np.random.default_rng(seed)
    F = _field(_random_reference(rng))
    for k in range(4):
        assert np.array_equal(solve_husking(F, k).values, jacobi_husking_box(F.values, k))


@given(seeds)
@settings(max_examples=60)
def test_step_bound_and_composition(seed):
    rng = np.random.default_rng(seed)
    F = _field(_random_reference(rng))
    prev = F
    for k in range(1, 6):
        cur = solve_husking(F, k)
        step = prev.values - cur.values
        assert step.min() >= 0 and step.max() <= 1
        assert np.array_equal(solve_husking(prev, 1).values, cur.values)
        prev = cur


@given(seeds)
@settings(max_examples=60)
def test_order_preservation(seed):
    rng = np.random.default_rng(seed)
    spec = _random_reference(rng)
    # dropping forms or adding a constant can only raise the reference
    keep = spec.forms[:int(rng.integers(1, len(spec.forms) + 1))]
    lift = int(rng.integers(0, 3))
    bigger = MinAffine(tuple((s, c + lift) for s, c in keep))
    F, Fp = _field(spec), _field(bigger)
    assert (Fp.values >= F.values).all()
    for k in range(5):
        assert (solve_husking(Fp, k).values >= solve_husking(F, k).values).all()


@given(seeds)
@settings(max_examples=60)
def test_depth_witness(seed):
    rng = np.random.default_rng(seed)
    F = _field(_random_reference(rng))
    prev = solve_husking(F, 0)
    for k in range(1, 7):
        cur = solve_husking(F, k)
        if not np.array_equal(prev.values, cur.values):
            # some core cell sits on the obstacle F - k
            core = F.core_slices
            assert (cur.values[core] == F.values[core] - k).any()
        prev = cur


@given(seeds)
@settings(max_examples=60)
def test_slicing_superharmonicity(seed):
    rng = np.random.default_rng(seed)
    F = _field(_random_reference(rng))
    G = solve_husking(F, int(rng.integers(1, 6)))
    slices = slicing_decomposition(F, G)
    H = F.values - G.values
    assert np.array_equal(sum((s.values for s in slices), np.zeros_like(H)), H)
    # peel slices from the top: every partial difference stays superharmonic
    cur = F.values.copy()
    for s in reversed(slices):
        cur = cur - s.values
        assert F.with_values(cur).is_superharmonic()


def test_k_zero_and_single_form_identity():
    F = _field(_random_reference(np.random.default_rng(0)))
    assert np.array_equal(solve_husking(F, 0).values, F.values)
    plane = MinAffine((((2, -1), 3),))
    res = husk_k(plane, G2, 5)
    assert res.support == frozenset()
    assert res.field.values.tolist() == IntField.from_spec(G2, res.field.box, plane).values.tolist()
    res = canonical_husking(plane, G2)
    assert res.stabilized_at == 1 and res.support == frozenset()


def test_negative_depth_rejected():
    with pytest.raises(ValidationError):
        husk_k(MinAffine((((0, 0), 0), ((1, 0), 0))), G2, -1)


def test_non_superharmonic_reference_rejected():
    vals = np.zeros(BOX15.shape, dtype=np.int64)
    vals[7, 7] = -3
    with pytest.raises(ValidationError):
        solve_husking(IntField.from_array(G2, BOX15, vals), 1)


# --- the Psi family on rank-one quotients ------------------------------------

LINE_DIRECTIONS = [(1, 0), (1, 1), (1, 2), (2, 3), (1, 3), (3, 5), (0, 0, 1), (1, 1, 1), (1, 2, 0),
                   (1, 2, 3)]


@pytest.mark.parametrize("p", LINE_DIRECTIONS, ids=lambda p: "_".join(map(str, p)))
def test_soliton_matches_gauss_seidel_oracle(p):
    prof = soliton(p)
    N, G = gs_canonical_line(p, R=40)
    assert prof.N == N
    ts = np.arange(-40, 41)
    assert np.array_equal(prof.g_at(ts), G)


@pytest.mark.parametrize("p", LINE_DIRECTIONS, ids=lambda p: "_".join(map(str, p)))
def test_soliton_laplacian_lower_bound(p):
    prof = soliton(p)
    n = len(p)
    assert prof.phi.min() >= 0  # Delta psi >= -(2n - 1)
    assert prof.phi.max() <= 2 * n - 1  # psi is superharmonic


@pytest.mark.parametrize("p", [(1, 2), (2, 3), (1, 2, 0)], ids=lambda p: "_".join(map(str, p)))
def test_husk_k_on_line_matches_oracle(p):
    graph = kernel_quotient([p])
    ref = MinAffine((((0,), 0), ((1,), 0)))
    ts = np.arange(-40, 41)
    for k in (1, 2, 3, 4, 10, 20):
        res = husk_k(ref, graph, k)
        assert np.array_equal(res.field.evaluate(ts[:, None]), gs_husking_line(p, k, 40)[1])


def test_direction_1_2_0_examples():
    """Examples stated for p = (1,2,0): a deep husking dips below Psi, and psi != Psi.

    The independent Gauss-Seidel oracle gives Psi at depths 1-4, 10 and 20 here
    (see test_husk_k_on_line_matches_oracle), so this test records a
    disagreement between the stated examples and the definitions.
    """
    graph = kernel_quotient([(1, 2, 0)])
    ref = MinAffine((((0,), 0), ((1,), 0)))
    ts = np.arange(-3, 4)
    deep = husk_k(ref, graph, 20)
    prof = soliton((1, 2, 0))
    below = (deep.field.evaluate(ts[:, None]) < np.minimum(0, ts)).any()
    differs = not np.array_equal(prof.g_at(ts), np.minimum(0, ts))
    assert below and differs


def test_unit_directions_are_their_own_husking():
    for p in [(1, 0), (1, 1), (0, 0, 1), (1, 1, 1), (1, 1, 0)]:
        prof = soliton(p)
        ts = np.arange(prof.t_min, prof.t_max + 1)
        assert np.array_equal(prof.g, np.minimum(0, ts)) and prof.N <= 1


def test_l_periodicity_quotient_vs_cylinder():
    """Husking on Z^2 / (3 L) computed directly agrees with the lifted quotient husking."""
    p, period = (1, 2), (-2, 1)
    graph = kernel_quotient([p])
    ref = MinAffine((((0,), 0), ((1,), 0)))
    X = 20
    for k in (1, 2, 3):
        direct = cylinder_husking(p, period, 3, X, k)
        res = husk_k(ref, graph, k)
        xs, ys = np.meshgrid(np.arange(-X, X + 1), np.arange(3), indexing="ij")
        t = (p[0] * xs + p[1] * ys)[..., None]
        lifted = res.field.evaluate(t)
        inner = slice(5, -5)  # away from the strip's Dirichlet ends
        assert np.array_equal(lifted[inner], direct[inner])


@pytest.mark.parametrize("p,e", [((1, 2), (1, 0)), ((2, 3), (0, 1)), ((1, 1), (1, 1)), ((1, -1), (1, 0))])
def test_e_increasing_preserved(p, e):
    assert np.dot(p, e) > 0
    box = Box((-12, -12), (12, 12))
    F = IntField.from_spec(G2, box, MinAffine((((0, 0), 0), (tuple(p), 0))))
    assert check_e_increasing(F, e, 4)
    for k in range(1, 5):
        assert check_e_increasing(solve_husking(F, k), e, 4)


def test_e_increasing_detects_decrease():
    box = Box((-6, -6), (6, 6))
    F = IntField.from_spec(G2, box, MinAffine((((0, 0), 0), ((1, 0), 0))))
    chk = check_e_increasing(F, (-1, 0), 4)
    assert not chk and chk.witness["kind"] == "decrease"


def test_budget_exhausted_reports_difference():
    prof_ref = MinAffine((((0,), 0), ((1,), 0)))
    graph = kernel_quotient([(3, 5)])
    with pytest.raises(BudgetExhaustedError) as err:
        canonical_husking(prof_ref, graph, k_budget=1)
    assert err.value.diff_support


def test_non_containment_when_window_cannot_grow():
    ref = MinAffine((((0,), 0), ((1,), 0)))
    graph = kernel_quotient([(2, 3)])
    policy = WindowPolicy(Box((-6,), (6,)), margin=3, max_enlargements=0)
    with pytest.raises(NonContainmentError):
        canonical_husking(ref, graph, policy=policy)


def test_window_enlargement_is_result_invariant():
    ref = MinAffine((((0,), 0), ((1,), 0)))
    graph = kernel_quotient([(2, 3)])
    small = canonical_husking(ref, graph, policy=WindowPolicy(Box((-6,), (6,)), margin=3))
    big = canonical_husking(ref, graph, policy=WindowPolicy(Box((-60,), (60,))))
    ts = np.arange(-30, 31)[:, None]
    assert small.window_generation > 0
    assert small.stabilized_at == big.stabilized_at
    assert np.array_equal(small.field.evaluate(ts), big.field.evaluate(ts))
