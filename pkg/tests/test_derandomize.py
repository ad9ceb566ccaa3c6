"""Tests for the threshold-path constructions, pairwise mixing and derandomization."""

import numpy as np
import pytest

from atomless_mdp.derandomize import (
    alpha_hat,
    caratheodory,
    derandomize,
    distance_to_performance_set,
    make_context,
    mix_pair,
    path_policy,
    tv_modulus,
)
from atomless_mdp.errors import CertifiedFailure
from atomless_mdp.measure import StatePartition, total_variation
from atomless_mdp.model import (
    DeterministicPolicy,
    StationaryPolicy,
    builtin,
    discounted_to_absorbing,
    random_deterministic_policy,
    random_model,
    random_stationary_policy,
)
from atomless_mdp.occupancy import occupancy, occupancy_total_variation, performance
from atomless_mdp.scalar_dp import SubmodelSpec
from tests.test_model import one_cell_discounted


def unit_interval_pair():
    m = builtin("unit-interval-onestep")
    return m, DeterministicPolicy(m.grid, [0]), DeterministicPolicy(m.grid, [1])


# ---------------------------------------------------------------------------
# make_context
# ---------------------------------------------------------------------------

def test_context_degenerate_pair():
    m = random_model(5, 3, 1, seed=1)
    rng = np.random.default_rng(0)
    phi = random_deterministic_policy(m, rng)
    ctx = make_context(m, phi, phi)
    q_phi = occupancy(m, phi, tol=1e-12).state_marginal().coarsened_to(m.grid)
    assert total_variation(ctx.q, q_phi) <= 1e-10


def test_context_one_step_occupancy_is_initial():
    m, phi0, phi1 = unit_interval_pair()
    ctx = make_context(m, phi0, phi1)
    assert total_variation(ctx.q, m.initial) <= 1e-12


def test_context_mass_bounded_by_certificate():
    m = random_model(6, 3, 2, seed=9)
    rng = np.random.default_rng(4)
    ctx = make_context(m, random_deterministic_policy(m, rng),
                       random_deterministic_policy(m, rng))
    assert ctx.q.total <= m.certificate().L + 1e-9


# ---------------------------------------------------------------------------
# path_policy
# ---------------------------------------------------------------------------

def test_path_alpha_zero_is_phi0():
    m, phi0, phi1 = unit_interval_pair()
    ctx = make_context(m, phi0, phi1)
    assert path_policy(ctx, 0.0) == phi0


def test_path_alpha_one_matches_phi1_performance():
    m = random_model(6, 2, 2, seed=12)
    rng = np.random.default_rng(5)
    phi0, phi1 = random_deterministic_policy(m, rng), random_deterministic_policy(m, rng)
    ctx = make_context(m, phi0, phi1)
    v_path = performance(m, path_policy(ctx, 1.0), tol=1e-12)
    v_phi1 = performance(m, phi1, tol=1e-12)
    assert np.linalg.norm(v_path - v_phi1) <= 1e-10


def test_path_threshold_interpolates_one_step():
    m, phi0, phi1 = unit_interval_pair()
    ctx = make_context(m, phi0, phi1)
    phi = path_policy(ctx, 0.3)
    assert performance(m, phi)[0] == pytest.approx(0.3, abs=1e-12)


def test_path_exact_fraction_law():
    m = random_model(7, 3, 2, seed=3)
    rng = np.random.default_rng(7)
    phi0, phi1 = random_deterministic_policy(m, rng), random_deterministic_policy(m, rng)
    ctx = make_context(m, phi0, phi1)
    for alpha in (0.0, 0.17, 0.5, 0.93, 1.0):
        t = ctx.threshold(alpha)
        assert ctx.q.mass_below(t) == pytest.approx(alpha * ctx.q.total, abs=1e-12)


def test_path_rejects_bad_alpha():
    m, phi0, phi1 = unit_interval_pair()
    ctx = make_context(m, phi0, phi1)
    with pytest.raises(ValueError):
        path_policy(ctx, 1.5)


# ---------------------------------------------------------------------------
# tv_modulus
# ---------------------------------------------------------------------------

def test_tv_modulus_zero_delta_vanishes():
    m, phi0, phi1 = unit_interval_pair()
    ctx = make_context(m, phi0, phi1)
    assert tv_modulus(ctx, 0.0) <= 1e-12


def test_tv_modulus_closed_form_beta_half():
    # one-cell transform: tail(l) = 2^(1-l), q(X) = 2
    m = discounted_to_absorbing(one_cell_discounted(0.5))
    phi = DeterministicPolicy(m.grid, [0])
    ctx = make_context(m, phi, phi)
    for delta in (1e-6, 1e-4, 1e-2):
        expected = min(
            2.0 * (2.0 ** (1 - level) + (2.0**level) * 2.0 * delta) for level in range(0, 60)
        )
        assert tv_modulus(ctx, delta) == pytest.approx(expected, rel=1e-12)


def test_tv_modulus_dominates_measured_tv():
    m = random_model(6, 2, 2, seed=21)
    rng = np.random.default_rng(11)
    phi0, phi1 = random_deterministic_policy(m, rng), random_deterministic_policy(m, rng)
    ctx = make_context(m, phi0, phi1)
    for _ in range(50):
        alpha = float(rng.uniform(0, 1))
        delta = float(rng.uniform(0, 1 - alpha))
        q_a = occupancy(m, path_policy(ctx, alpha), tol=1e-12)
        q_b = occupancy(m, path_policy(ctx, alpha + delta), tol=1e-12)
        measured = occupancy_total_variation(q_a, q_b)
        assert measured <= tv_modulus(ctx, delta) + 1e-9


# ---------------------------------------------------------------------------
# distance to performance set
# ---------------------------------------------------------------------------

def test_distance_membership_of_achieved_vector():
    m = random_model(6, 3, 2, seed=31)
    rng = np.random.default_rng(2)
    phi = random_deterministic_policy(m, rng)
    res = distance_to_performance_set(SubmodelSpec.full(m), performance(m, phi), tol=1e-9)
    assert res.g <= 1e-9


def test_distance_one_dimensional_margin():
    m = builtin("unit-interval-onestep")
    from atomless_mdp.scalar_dp import support

    h, _ = support(m, np.array([1.0]))
    margin = 0.25
    res = distance_to_performance_set(SubmodelSpec.full(m),
                                      np.array([h + margin]), tol=1e-10)
    assert res.g == pytest.approx(margin, abs=1e-8)


def test_distance_matches_dense_hull_oracle():
    # 2-criteria: compare against the distance to a densely sampled vertex hull
    m = random_model(5, 3, 2, seed=41)
    rng = np.random.default_rng(3)
    from atomless_mdp.scalar_dp import support

    verts = []
    for theta in np.linspace(0, 2 * np.pi, 720, endpoint=False):
        _, phi = support(m, np.array([np.cos(theta), np.sin(theta)]))
        verts.append(performance(m, phi, tol=1e-12))
    verts = np.unique(np.round(np.array(verts), 12), axis=0)

    # independent exact distance to the polygon via edge projections
    from scipy.spatial import ConvexHull

    hull = ConvexHull(verts)
    poly = verts[hull.vertices]

    def dist_to_polygon(p):
        best = np.inf
        k = len(poly)
        for i in range(k):
            a, b = poly[i], poly[(i + 1) % k]
            ab = b - a
            t = np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0)
            best = min(best, float(np.linalg.norm(p - (a + t * ab))))
        return best

    for _ in range(8):
        target = verts.mean(axis=0) + rng.normal(size=2) * 3.0
        res = distance_to_performance_set(SubmodelSpec.full(m), target, tol=1e-8)
        oracle = dist_to_polygon(target)
        if oracle == 0.0:
            continue
        assert res.g == pytest.approx(oracle, abs=1e-4)


# ---------------------------------------------------------------------------
# alpha_hat
# ---------------------------------------------------------------------------

def test_alpha_hat_at_phi1_is_one():
    m = random_model(5, 2, 2, seed=8)
    rng = np.random.default_rng(6)
    phi0, phi1 = random_deterministic_policy(m, rng), random_deterministic_policy(m, rng)
    ctx = make_context(m, phi0, phi1)
    v1 = performance(m, phi1, tol=1e-12)
    assert alpha_hat(ctx, v1, tol=1e-7) == 1.0


def test_alpha_hat_midpoint_one_step():
    m, phi0, phi1 = unit_interval_pair()
    ctx = make_context(m, phi0, phi1)
    v = 0.5 * performance(m, phi0) + 0.5 * performance(m, phi1)
    a = alpha_hat(ctx, v, tol=1e-9)
    assert a == pytest.approx(0.5, abs=1e-6)


def test_alpha_hat_exposed_endpoint_zero():
    # targeting v(phi0) = 0 on the unit-interval model: any frozen mass forces
    # the first coordinate strictly above 0, so alpha_hat must stay at 0
    m, phi0, phi1 = unit_interval_pair()
    ctx = make_context(m, phi0, phi1)
    v0 = performance(m, phi0, tol=1e-12)
    a = alpha_hat(ctx, v0, tol=1e-9)
    assert a <= 1e-6


def test_alpha_hat_rejects_outside_target():
    m, phi0, phi1 = unit_interval_pair()
    ctx = make_context(m, phi0, phi1)
    with pytest.raises(CertifiedFailure):
        alpha_hat(ctx, np.array([5.0]), tol=1e-9)


def test_alpha_hat_monotone_distance_profile():
    m = random_model(5, 2, 2, seed=50)
    rng = np.random.default_rng(9)
    phi0, phi1 = random_deterministic_policy(m, rng), random_deterministic_policy(m, rng)
    ctx = make_context(m, phi0, phi1)
    v = 0.4 * performance(m, phi0, tol=1e-12) + 0.6 * performance(m, phi1, tol=1e-12)
    tol = 1e-8
    values = []
    for alpha in np.arange(0.0, 1.0001, 0.01):
        res = distance_to_performance_set(ctx.submodel_at(min(alpha, 1.0)), v, tol=tol)
        values.append(res.g)
    for a, b in zip(values, values[1:]):
        assert b >= a - 2 * tol


# ---------------------------------------------------------------------------
# mix_pair
# ---------------------------------------------------------------------------

def test_mix_endpoints():
    m = random_model(5, 3, 2, seed=2)
    rng = np.random.default_rng(1)
    phi0, phi1 = random_deterministic_policy(m, rng), random_deterministic_policy(m, rng)
    out0, cert0 = mix_pair(m, phi0, phi1, 1.0, tol=1e-8)
    assert out0 == phi0 and cert0.error == 0.0
    out1, cert1 = mix_pair(m, phi0, phi1, 0.0, tol=1e-8)
    assert out1 == phi1 and cert1.error == 0.0


def test_mix_degenerate_pair():
    m = random_model(4, 2, 2, seed=6)
    rng = np.random.default_rng(2)
    phi = random_deterministic_policy(m, rng)
    out, cert = mix_pair(m, phi, phi, 0.37, tol=1e-8)
    assert out == phi
    assert cert.error == 0.0


def test_mix_one_step_half():
    m, phi0, phi1 = unit_interval_pair()
    phi, cert = mix_pair(m, phi0, phi1, 0.5, tol=1e-9)
    assert performance(m, phi)[0] == pytest.approx(0.5, abs=1e-9)
    assert phi.partition.points.tolist() == pytest.approx([0.0, 0.5, 1.0])


def test_mix_random_two_criteria():
    m = random_model(6, 3, 2, seed=71)
    rng = np.random.default_rng(13)
    for _ in range(6):
        phi0 = random_deterministic_policy(m, rng)
        phi1 = random_deterministic_policy(m, rng)
        lam = float(rng.random())
        phi, cert = mix_pair(m, phi0, phi1, lam, tol=1e-5)
        target = lam * performance(m, phi0, tol=1e-12) + (1 - lam) * performance(m, phi1, tol=1e-12)
        assert np.linalg.norm(performance(m, phi, tol=1e-12) - target) <= 1e-5
        assert cert.error <= 1e-5


def test_mix_rejects_bad_lambda():
    m, phi0, phi1 = unit_interval_pair()
    with pytest.raises(ValueError):
        mix_pair(m, phi0, phi1, 1.5)


# ---------------------------------------------------------------------------
# caratheodory
# ---------------------------------------------------------------------------

def test_caratheodory_deterministic_single_term():
    m = random_model(5, 3, 2, seed=14)
    rng = np.random.default_rng(3)
    phi = random_deterministic_policy(m, rng)
    terms = caratheodory(m, phi.to_stationary(m.action_count), tol=1e-8)
    assert len(terms) == 1
    assert terms[0][0] == 1.0
    assert terms[0][1] == phi


def test_caratheodory_orthogonal_one_step():
    # two actions with orthogonal reward vectors; the half/half policy
    # decomposes uniquely with equal weights
    from atomless_mdp.measure import PieceMeasure
    from atomless_mdp.model import AtomlessMDP

    grid = StatePartition([0.0, 1.0])
    rewards = np.zeros((1, 2, 2))
    rewards[0, 0] = [1.0, 0.0]
    rewards[0, 1] = [0.0, 1.0]
    m = AtomlessMDP(grid, 2, [(0, 1)], np.zeros((1, 2, 1)), np.ones((1, 2)),
                    rewards, PieceMeasure.uniform())
    pi = StationaryPolicy(grid, [[0.5, 0.5]])
    terms = caratheodory(m, pi, tol=1e-9)
    weights = sorted(l for l, _ in terms)
    recomb = sum(l * performance(m, p, tol=1e-12) for l, p in terms)
    assert np.allclose(recomb, [0.5, 0.5], atol=1e-9)
    assert len(terms) == 2
    assert weights == pytest.approx([0.5, 0.5], abs=1e-9)


def test_caratheodory_recombination_random():
    rng = np.random.default_rng(8)
    for seed in range(6):
        m = random_model(6, 3, 2, seed=100 + seed)
        pi = random_stationary_policy(m, rng)
        terms = caratheodory(m, pi, tol=1e-7)
        assert len(terms) <= m.criteria + 1
        assert sum(l for l, _ in terms) == pytest.approx(1.0, abs=1e-12)
        recomb = sum(l * performance(m, p, tol=1e-12) for l, p in terms)
        target = performance(m, pi, tol=1e-12)
        assert np.linalg.norm(recomb - target) <= 1e-7


# ---------------------------------------------------------------------------
# derandomize
# ---------------------------------------------------------------------------

def test_derandomize_deterministic_unchanged():
    m = random_model(5, 3, 2, seed=23)
    rng = np.random.default_rng(5)
    phi = random_deterministic_policy(m, rng)
    out, cert = derandomize(m, phi, tol=1e-8)
    assert out is phi
    assert cert.error == 0.0


def test_derandomize_one_step_coin_flip():
    m = builtin("unit-interval-onestep")
    pi = StationaryPolicy(m.grid, [[0.5, 0.5]])
    phi, cert = derandomize(m, pi, tol=1e-8)
    assert performance(m, phi)[0] == pytest.approx(0.5, abs=1e-8)
    assert phi.partition.points.tolist() == pytest.approx([0.0, 0.5, 1.0])


def test_derandomize_random_three_criteria():
    rng = np.random.default_rng(17)
    for seed in range(4):
        m = random_model(8, 3, 3, seed=300 + seed)
        pi = random_stationary_policy(m, rng)
        phi, cert = derandomize(m, pi, tol=1e-5)
        v_pi = performance(m, pi, tol=1e-12)
        v_phi = performance(m, phi, tol=1e-12)
        assert np.linalg.norm(v_phi - v_pi) <= 1e-5
        assert isinstance(phi, DeterministicPolicy)
