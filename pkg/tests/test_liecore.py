"""Decomposition, cocycle and boundary-geometry tests for the SL(d,R) layer.

Derived expected values are frozen from independent oracles computed in the
test bodies (closed-form quadratics, classical hyperbolic-plane formulas),
never from the functions under test.
"""

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings
from hypothesis import strategies as st

from anosovps import liecore as lc
from tests.conftest import random_sl, random_rotation

ATOL_ALG = 1e-9
ATOL_GEO = 1e-8


# ---------------------------------------------------------------------------
# Cartan projection


def test_cartan_identity():
    assert np.allclose(lc.cartan_projection(np.eye(3)), 0.0)


def test_cartan_diagonal_already_in_chamber():
    g = np.diag([np.exp(2.0), np.exp(-1.0), np.exp(-1.0)])
    assert np.allclose(lc.cartan_projection(g), [2.0, -1.0, -1.0], atol=ATOL_ALG)


def test_cartan_shear_closed_form():
    # oracle: eigenvalues of g g^T for g = [[1,1],[0,1]] are (3 +- sqrt 5)/2
    g = np.array([[1.0, 1.0], [0.0, 1.0]])
    top = 0.5 * np.log((3.0 + np.sqrt(5.0)) / 2.0)
    mu = lc.cartan_projection(g)
    assert np.allclose(mu, [top, -top], atol=1e-12)
    assert abs(top - 0.4812118250596034) < 1e-15


def test_cartan_trace_zero_and_chamber(rng):
    for _ in range(50):
        d = int(rng.integers(2, 6))
        mu = lc.cartan_projection(random_sl(rng, d))
        assert abs(mu.sum()) < ATOL_ALG
        assert np.all(np.diff(mu) <= ATOL_ALG)


def test_cartan_round_trip(rng):
    for _ in range(50):
        d = int(rng.integers(2, 5))
        g = random_sl(rng, d)
        mu, k1, k2, _ = lc.cartan_projection(g, return_frames=True)
        recon = k1 @ np.diag(np.exp(mu)) @ k2.T
        assert np.abs(recon - g).max() <= 1e-9 * max(1.0, np.abs(g).max())


def test_cartan_rejects_bad_input():
    with pytest.raises(lc.InputError):
        lc.cartan_projection(np.full((3, 3), np.nan))
    with pytest.raises(lc.InputError):
        lc.cartan_projection(2.0 * np.eye(3))


# ---------------------------------------------------------------------------
# Jordan projection


def test_jordan_diagonal():
    g = np.diag([2.0, 0.5])
    lam, lox = lc.jordan_projection(g, return_loxodromy=True)
    assert np.allclose(lam, [np.log(2.0), -np.log(2.0)], atol=1e-12)
    assert lox


def test_jordan_unipotent():
    g = np.array([[1.0, 1.0], [0.0, 1.0]])
    lam, lox = lc.jordan_projection(g, return_loxodromy=True)
    assert np.allclose(lam, 0.0, atol=1e-12)
    assert not lox


def test_jordan_power_homogeneity(rng):
    done = 0
    while done < 20:
        g = random_sl(rng, 3)
        lam, lox = lc.jordan_projection(g, return_loxodromy=True)
        if not lox:
            continue
        for n in range(2, 6):
            got = lc.jordan_projection(np.linalg.matrix_power(g, n))
            assert np.allclose(got, n * lam, atol=ATOL_GEO)
        done += 1


# ---------------------------------------------------------------------------
# Opposition involution


def test_opposition_example():
    assert np.allclose(lc.opposition_involution(np.array([2.0, -1.0, -1.0])),
                       [1.0, 1.0, -2.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=6))
def test_opposition_involution_is_involution(coords):
    v = np.array(coords)
    assert np.allclose(lc.opposition_involution(lc.opposition_involution(v)), v)


def test_mu_lambda_inverse_involution(rng):
    for _ in range(100):
        d = int(rng.integers(2, 5))
        g = random_sl(rng, d)
        gi = la.inv(g)
        assert np.allclose(lc.cartan_projection(gi),
                           lc.opposition_involution(lc.cartan_projection(g)),
                           atol=ATOL_GEO)
        assert np.allclose(lc.jordan_projection(gi),
                           lc.opposition_involution(lc.jordan_projection(g)),
                           atol=ATOL_GEO)


# ---------------------------------------------------------------------------
# Iwasawa cocycle


def test_sigma_at_identity(rng):
    for _ in range(10):
        xi = lc.visual_flags(random_sl(rng, 3)).xi
        assert np.allclose(lc.iwasawa_sigma(np.eye(3), xi), 0.0, atol=1e-12)


def test_sigma_diagonal_at_standard_flag():
    a = np.diag([np.exp(0.7), np.exp(0.2), np.exp(-0.9)])
    sigma = lc.iwasawa_sigma(a, lc.standard_flag(3))
    assert np.allclose(sigma, [0.7, 0.2, -0.9], atol=1e-12)


def test_sigma_cocycle(rng):
    for _ in range(1000):
        d = int(rng.integers(2, 4))
        g1, g2 = random_sl(rng, d), random_sl(rng, d)
        xi = lc.visual_flags(random_sl(rng, d)).xi
        lhs = lc.iwasawa_sigma(g1 @ g2, xi)
        rhs = lc.iwasawa_sigma(g1, lc.flag_action(g2, xi)) + lc.iwasawa_sigma(g2, xi)
        assert np.allclose(lhs, rhs, atol=ATOL_GEO)


def test_iwasawa_round_trip(rng):
    for _ in range(50):
        d = int(rng.integers(2, 5))
        g = random_sl(rng, d)
        q, r = lc.qr_pos(g)
        assert np.abs(q @ r - g).max() <= 1e-9 * max(1.0, np.abs(g).max())
        assert np.all(np.diag(r) > 0)
        n = r / np.diag(r)[:, None]
        assert np.allclose(np.tril(n, -1), 0.0, atol=1e-12)


# ---------------------------------------------------------------------------
# Flag action


def test_flag_action_identity(rng):
    xi = lc.visual_flags(random_sl(rng, 3)).xi
    assert lc.chordal_distance(lc.flag_action(np.eye(3), xi), xi) < 1e-12


def test_unipotent_stabilizes_standard_flag():
    n = np.array([[1.0, 2.0, -1.0], [0.0, 1.0, 0.5], [0.0, 0.0, 1.0]])
    assert lc.chordal_distance(lc.flag_action(n, lc.standard_flag(3)),
                               lc.standard_flag(3)) < 1e-12


def test_flag_action_is_action(rng):
    for _ in range(50):
        g1, g2 = random_sl(rng, 3), random_sl(rng, 3)
        xi = lc.visual_flags(random_sl(rng, 3)).xi
        lhs = lc.flag_action(g1 @ g2, xi)
        rhs = lc.flag_action(g1, lc.flag_action(g2, xi))
        assert lc.chordal_distance(lhs, rhs) < ATOL_GEO


# ---------------------------------------------------------------------------
# Busemann cocycle


def test_busemann_equal_points(rng):
    g = random_sl(rng, 3)
    xi = lc.visual_flags(random_sl(rng, 3)).xi
    assert np.allclose(lc.busemann(xi, g, g), 0.0, atol=1e-12)


def test_busemann_standard_flag_diagonal():
    a = np.diag([np.e, 1.0, 1.0 / np.e])
    beta = lc.busemann(lc.standard_flag(3), np.eye(3), a)
    assert np.allclose(beta, [1.0, 0.0, -1.0], atol=ATOL_ALG)


def test_busemann_three_identities(rng):
    for _ in range(1000):
        d = int(rng.integers(2, 4))
        g, h, q = (random_sl(rng, d) for _ in range(3))
        xi = lc.visual_flags(random_sl(rng, d)).xi
        # additivity
        lhs = lc.busemann(xi, g, h) + lc.busemann(xi, h, q)
        assert np.allclose(lhs, lc.busemann(xi, g, q), atol=ATOL_GEO)
        # equivariance
        lhs = lc.busemann(lc.flag_action(g, xi), g @ h, g @ q)
        assert np.allclose(lhs, lc.busemann(xi, h, q), atol=ATOL_GEO)
        # normalization against the cocycle
        lhs = lc.busemann(xi, g, np.eye(d))
        assert np.allclose(lhs, lc.iwasawa_sigma(la.inv(g), xi), atol=ATOL_GEO)


def test_busemann_fixed_point_identities(rng):
    done = 0
    while done < 50:
        g = random_sl(rng, 3)
        lam, lox = lc.jordan_projection(g, return_loxodromy=True)
        if not lox:
            continue
        p = random_sl(rng, 3)
        beta = lc.busemann(lc.attracting_flag(g), p, g @ p)
        assert np.allclose(beta, lam, atol=ATOL_GEO)
        beta = lc.busemann(lc.attracting_flag(la.inv(g)), p, g @ p)
        assert np.allclose(beta, -lc.jordan_projection(la.inv(g)), atol=ATOL_GEO)
        done += 1


# ---------------------------------------------------------------------------
# Visual flags and attracting flags


def test_visual_flags_identity():
    pair = lc.visual_flags(np.eye(3))
    assert lc.chordal_distance(pair.xi, lc.standard_flag(3)) < 1e-12
    assert lc.chordal_distance(pair.eta, lc.opposite_standard_flag(3)) < 1e-12
    assert abs(pair.transversality_margin - 1.0) < 1e-12


def test_visual_flags_rotation_margin(rng):
    for _ in range(20):
        k = random_rotation(rng, 3)
        pair = lc.visual_flags(k)
        assert abs(pair.transversality_margin - 1.0) < 1e-9


def test_visual_flags_transversal(rng):
    for _ in range(100):
        pair = lc.visual_flags(random_sl(rng, 3))
        assert pair.transversality_margin > 0.0


def test_attracting_flag_diagonal():
    g = np.diag([3.0, 1.0, 1.0 / 3.0])
    assert lc.chordal_distance(lc.attracting_flag(g), lc.standard_flag(3)) < 1e-12


def test_attracting_flag_fixed_and_equivariant(rng):
    done = 0
    while done < 30:
        g = random_sl(rng, 3)
        lam, lox = lc.jordan_projection(g, return_loxodromy=True)
        if not lox:
            continue
        y = lc.attracting_flag(g)
        assert lc.chordal_distance(lc.flag_action(g, y), y) < ATOL_GEO
        h = random_sl(rng, 3)
        assert lc.chordal_distance(lc.attracting_flag(h @ g @ la.inv(h)),
                                   lc.flag_action(h, y)) < 1e-6
        done += 1


def test_attracting_flag_rejects_rotation():
    theta = 0.3
    k = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    with pytest.raises(lc.LoxodromyError):
        lc.attracting_flag(k)


# ---------------------------------------------------------------------------
# Gromov product


def test_gromov_at_standard_pair():
    pair = lc.FlagPair(lc.standard_flag(3), lc.opposite_standard_flag(3))
    assert np.allclose(lc.gromov_product(pair), 0.0, atol=1e-12)
    assert np.allclose(lc.gromov_product(pair, via_busemann=True), 0.0, atol=ATOL_GEO)


def test_gromov_two_paths_and_symmetry(rng):
    for _ in range(200):
        d = int(rng.integers(2, 5))
        pair = lc.visual_flags(random_sl(rng, d))
        g1 = lc.gromov_product(pair)
        g2 = lc.gromov_product(pair, via_busemann=True)
        assert np.allclose(g1, g2, atol=ATOL_GEO)
        swapped = lc.gromov_product(lc.FlagPair(pair.eta, pair.xi))
        assert np.allclose(swapped, lc.opposition_involution(g1), atol=ATOL_GEO)


def test_gromov_rejects_degenerate_pair():
    xi = lc.standard_flag(3)
    with pytest.raises(lc.TransversalityError):
        lc.gromov_product(lc.FlagPair(xi, xi))


def test_gromov_rank_one_oracle(rng):
    # oracle: boundary lines at angles alpha, beta in the plane; the
    # classical Gromov product of the corresponding upper-half-plane
    # boundary points x = cot(alpha), y = cot(beta) based at i is
    # -log(|x - y| / sqrt((x^2+1)(y^2+1))) = -log |sin(alpha - beta)|
    for _ in range(200):
        alpha, beta = rng.uniform(0.05, np.pi - 0.05, size=2)
        if abs(np.sin(alpha - beta)) < 1e-3:
            continue
        xi = lc.Flag.from_basis(np.array([[np.cos(alpha), -np.sin(alpha)],
                                          [np.sin(alpha), np.cos(alpha)]]))
        eta = lc.Flag.from_basis(np.array([[np.cos(beta), -np.sin(beta)],
                                           [np.sin(beta), np.cos(beta)]]))
        classical = -np.log(abs(np.sin(alpha - beta)))
        got = lc.gromov_product(lc.FlagPair(xi, eta))
        assert np.allclose(got, [classical, -classical], atol=1e-7)


# ---------------------------------------------------------------------------
# Symmetric-space distance


def test_distance_zero_and_basepoint(rng):
    p = random_sl(rng, 3)
    assert np.allclose(lc.symmetric_distance(p, p), 0.0, atol=ATOL_ALG)
    g = random_sl(rng, 3)
    assert np.allclose(lc.symmetric_distance(np.eye(3), g),
                       lc.cartan_projection(g), atol=ATOL_ALG)


def test_distance_antisymmetry(rng):
    for _ in range(50):
        p, q = random_sl(rng, 3), random_sl(rng, 3)
        assert np.allclose(lc.symmetric_distance(q, p),
                           lc.opposition_involution(lc.symmetric_distance(p, q)),
                           atol=ATOL_GEO)


def test_distance_rank_one_oracle(rng):
    # oracle: cosh d_{H^2}(i, g i) = ||g||_F^2 / 2 for g in SL(2,R); the
    # trace-form distance is d_{H^2} / sqrt(2)
    for _ in range(200):
        g = random_sl(rng, 2)
        classical = np.arccosh(np.sum(g * g) / 2.0)
        ours = np.linalg.norm(lc.symmetric_distance(np.eye(2), g))
        assert abs(ours * np.sqrt(2.0) - classical) < 1e-7


# ---------------------------------------------------------------------------
# Linear forms


def test_linear_form_gauge():
    psi = lc.LinearForm(np.array([3.0, 1.0, 2.0]))
    assert abs(psi.coefficients.sum()) < 1e-12
    v = np.array([0.5, 0.2, -0.7])
    assert abs(psi(v) - (3.0 * 0.5 + 1.0 * 0.2 + 2.0 * -0.7)) < 1e-12


def test_fundamental_weights_and_roots():
    v = np.array([2.0, -0.5, -1.5])
    assert abs(lc.fundamental_weight(1, 3)(v) - 2.0) < 1e-12
    assert abs(lc.fundamental_weight(2, 3)(v) - 1.5) < 1e-12
    assert abs(lc.simple_root(1, 3)(v) - 2.5) < 1e-12
    assert abs(lc.simple_root(2, 3)(v) - 1.0) < 1e-12
    # 2rho = 2*(omega_1 + ... + omega_{d-1}) for SL(d)
    total = lc.fundamental_weight(1, 3).plus(lc.fundamental_weight(2, 3)).scaled(2.0)
    assert np.allclose(lc.two_rho(3).coefficients, total.coefficients)


def test_form_compose_involution():
    psi = lc.LinearForm(np.array([1.0, 0.4, -1.4]))
    v = np.array([0.3, 0.1, -0.4])
    assert abs(psi.compose_i()(v) - psi(lc.opposition_involution(v))) < 1e-12


# ---------------------------------------------------------------------------
# Weight subadditivity and bounded displacement


def test_weight_subadditivity(rng):
    for _ in range(200):
        d = int(rng.integers(2, 5))
        g, h = random_sl(rng, d), random_sl(rng, d)
        mug, muh = lc.cartan_projection(g), lc.cartan_projection(h)
        mugh = lc.cartan_projection(g @ h)
        for k in range(1, d):
            w = lc.fundamental_weight(k, d)
            assert w(mugh) <= w(mug) + w(muh) + 1e-9


def test_compact_displacement_bound(rng):
    # multiplying by elements of a fixed compact set moves mu by a bounded
    # amount regardless of ||mu(g)||
    bound = 0.0
    samples = []
    for _ in range(30):
        l1, l2 = random_sl(rng, 3), random_sl(rng, 3)
        bound = max(bound, np.linalg.norm(lc.cartan_projection(l1))
                    + np.linalg.norm(lc.cartan_projection(l2)))
        samples.append((l1, l2))
    g = random_sl(rng, 3)
    for n in range(1, 12):
        gn = np.linalg.matrix_power(g, n)
        gn /= la.det(gn) ** (1.0 / 3.0)
        mu = lc.cartan_projection(gn)
        for l1, l2 in samples[:5]:
            moved = lc.cartan_projection(l1 @ gn @ l2)
            assert np.linalg.norm(moved - mu) <= bound + 1e-8
