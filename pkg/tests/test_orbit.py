import json

import numpy as np
import pytest

from anosovps import liecore as lc
from anosovps import orbit
from anosovps.words import Word


@pytest.fixture(scope="module")
def preset():
    return orbit.default_preset()


@pytest.fixture(scope="module")
def table(preset):
    return orbit.enumerate_ball(preset, 6)


# ---------------------------------------------------------------------------
# presets


def test_preset_structure(preset):
    assert preset.dim == 3
    assert preset.rank == 2
    for i in range(0, 4, 2):
        g, gi = preset.generators[i], preset.generators[i + 1]
        assert np.abs(g @ gi - np.eye(3)).max() < 1e-9
        assert abs(np.linalg.det(g) - 1.0) < 1e-9


def test_preset_validation_margin(preset):
    assert preset.validate() > 1e-6


def test_rank_one_preset():
    p = orbit.rank_one_preset()
    assert p.dim == 2
    assert p.validate() > 1e-6


def test_preset_json_roundtrip(preset):
    data = json.loads(json.dumps(preset.to_json()))
    back = orbit.SchottkyPreset.from_json(data)
    for g, h in zip(preset.generators, back.generators):
        assert np.abs(g - h).max() < 1e-15
    assert back.name == preset.name


def test_preset_rejects_non_inverse_pair():
    rng = np.random.default_rng(0)
    g = rng.normal(size=(3, 3))
    g /= np.linalg.det(g) ** (1 / 3)
    with pytest.raises(orbit.PresetIntegrityError):
        orbit.SchottkyPreset(3, (g, g, g, g), 1, "bad", 0)


def test_preset_rejects_non_pingpong():
    # a rotation pair has no loxodromic elements at all
    th = 0.3
    r = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    s = np.array([[np.cos(0.7), -np.sin(0.7)], [np.sin(0.7), np.cos(0.7)]])
    p = orbit.SchottkyPreset(2, (r, r.T, s, s.T), 1, "rot", 0)
    with pytest.raises(orbit.PresetIntegrityError):
        p.validate(check_length=2)


# ---------------------------------------------------------------------------
# enumeration


def test_ball_counts(preset):
    # rank 2: 1 + sum_{l=1}^{L} 4 * 3^(l-1)
    t1 = orbit.enumerate_ball(preset, 1)
    assert len(t1) == 5
    t3 = orbit.enumerate_ball(preset, 3)
    assert len(t3) == 1 + 4 + 12 + 36


def test_table_is_length_lex_and_reduced(table):
    assert np.all(np.diff(table.word_len) >= 0)
    seen = set()
    for i in range(len(table)):
        w = table.word(i)
        assert len(w) == table.word_len[i]  # reduced rows only
        seen.add(str(w))
    assert len(seen) == len(table)


def test_matrices_match_words(preset, table):
    rng = np.random.default_rng(5)
    for i in rng.choice(len(table), size=20, replace=False):
        w = table.word(i)
        m = np.eye(3)
        for letter in w.letters:
            m = m @ preset.generators[letter]
        assert np.abs(m - table.mats[i]).max() < 1e-9 * max(1, np.abs(m).max())


def test_closed_under_inverse(table):
    inv = table.inverse_row
    assert np.all(inv[inv] == np.arange(len(table)))
    # mu(g^-1) = i(mu(g)) and lam likewise
    assert np.abs(table.mu[inv] - lc.opposition_involution(table.mu)).max() < 1e-9
    assert np.abs(table.lam[inv] - lc.opposition_involution(table.lam)).max() < 1e-9


def test_mu_lam_against_scalar_kernels(table):
    rng = np.random.default_rng(11)
    for i in rng.choice(len(table), size=15, replace=False):
        g = table.mats[i]
        assert np.abs(table.mu[i] - lc.cartan_projection(g)).max() < 1e-8
        if table.word_len[i] >= 1:
            assert np.abs(table.lam[i] - lc.jordan_projection(g)).max() < 1e-7


def test_frames_are_cartan_frames(table):
    rng = np.random.default_rng(3)
    for i in rng.choice(np.flatnonzero(table.word_len >= 2), size=10, replace=False):
        _, u, _, _ = lc.cartan_projection(table.mats[i], return_frames=True)
        assert lc.chordal_distance(lc.Flag(table.frames[i]), lc.Flag(u)) < 1e-8


def test_mu_dominates_lam(table):
    # partial sums of mu majorize those of lam for every word
    cum_mu = np.cumsum(table.mu, axis=1)
    cum_lam = np.cumsum(table.lam, axis=1)
    assert np.all(cum_mu >= cum_lam - 1e-8)


def test_mu_subadditive(preset, table):
    # mu_1(gh) <= mu_1(g) + mu_1(h) on random pairs in the ball
    rng = np.random.default_rng(7)
    idx = rng.choice(len(table), size=(50, 2))
    for i, j in idx:
        gh = table.mats[i] @ table.mats[j]
        mu_gh = lc.batched_cartan(gh[None])[0][0]
        assert mu_gh[0] <= table.mu[i][0] + table.mu[j][0] + 1e-9


def test_mu_almost_additive_along_words(table):
    """|mu(gh) - mu(g) - mu(h)| stays bounded when gh is the reduced
    concatenation (no cancellation): the ping-pong certificate."""
    rng = np.random.default_rng(13)
    worst = 0.0
    rows = np.flatnonzero(table.word_len == 3)
    for i in rng.choice(rows, size=30, replace=False):
        for j in rng.choice(rows, size=10, replace=False):
            w = table.word(i) * table.word(j)
            if len(w) != 6:
                continue
            k = table.row_of(w)
            worst = max(worst, np.abs(table.mu[k] - table.mu[i] - table.mu[j]).max())
    assert 0 < worst < 5.0


def test_word_length_bounds_mu(table):
    # c1 * |w| - c0 <= mu_1 <= c2 * |w| for uniform constants
    wl = table.word_len[1:]
    mu1 = table.mu[1:, 0]
    assert np.all(mu1 <= mu1.max() / wl.min() * wl + 1e-9)
    ratio = mu1 / wl
    assert ratio.min() > 0.3  # quasi-isometric lower bound for this preset


def test_subtable(table):
    sub = table.subtable(3)
    assert len(sub) == 53
    assert sub.L == 3
    assert np.abs(sub.mu - table.mu[:53]).max() == 0
    assert sub.subtable(5) is sub


def test_row_of_errors(table):
    with pytest.raises(KeyError):
        table.row_of(Word(table.preset.alphabet, (0,) * (table.L + 1)))


def test_enumeration_cap():
    p = orbit.default_preset()
    with pytest.raises(orbit.ResourceError):
        orbit.enumerate_ball(p, 30)
    with pytest.raises(ValueError):
        orbit.enumerate_ball(p, 0)


def test_csv_roundtrip(table, tmp_path):
    path = tmp_path / "orbit.csv"
    sub = table.subtable(3)
    sub.to_csv(str(path))
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 54  # header + 53 rows
    header = lines[0].split(",")
    assert header[:2] == ["word", "word_len"]
    # %.17g round-trips float64 exactly
    row = lines[2].split(",")
    i = sub.row_of(Word.parse(sub.preset.alphabet, row[0]))
    assert float(row[2]) == sub.mu[i][0]


# ---------------------------------------------------------------------------
# cyclic-core lambda kernel


def test_lambda_is_conjugacy_invariant(preset, table):
    a = preset.generators[0]
    b = preset.generators[2]
    # b a^2 b^-1 has the lambda of a^2
    w = Word.parse(preset.alphabet, "baaB")
    i = table.row_of(w)
    j = table.row_of(Word.parse(preset.alphabet, "aa"))
    assert np.abs(table.lam[i] - table.lam[j]).max() < 1e-10
    assert np.abs(table.lam[j] - 2 * table.lam[table.row_of(
        Word.parse(preset.alphabet, "a"))]).max() < 1e-9


def test_lambda_power_homogeneous(preset, table):
    for s in ("a", "ab", "aB"):
        w = Word.parse(preset.alphabet, s)
        lam1 = table.lam[table.row_of(w)]
        lam2 = table.lam[table.row_of(w * w)]
        assert np.abs(lam2 - 2 * lam1).max() < 1e-9


def test_lambda_leq_mu_top(table):
    assert np.all(table.lam[:, 0] <= table.mu[:, 0] + 1e-9)


# ---------------------------------------------------------------------------
# limit cone


def test_limit_cone(table):
    cone = orbit.limit_cone_estimate(table, min_len=2)
    assert cone.wall_margin > 0
    assert cone.directions.shape[1] == 3
    # directions are unit and trace-free
    assert np.abs(np.linalg.norm(cone.directions, axis=1) - 1).max() < 1e-9
    assert np.abs(cone.directions.sum(axis=1)).max() < 1e-9
    # i-invariance: the cloud is symmetric under the involution
    from scipy.spatial import cKDTree

    flipped = lc.opposition_involution(cone.directions)
    gaps, _ = cKDTree(cone.directions).query(flipped)
    assert gaps.max() < 1e-6
    # hull rays are a subset of the cloud
    assert cone.hull.shape[0] >= 2


def test_limit_cone_errors(table):
    with pytest.raises(ValueError):
        orbit.limit_cone_estimate(table, min_len=0)
    with pytest.raises(orbit.InsufficientDataError):
        orbit.limit_cone_estimate(table, min_len=table.L + 1)


def test_cone_shrinks_with_depth(table):
    # deeper shells concentrate toward the limit cone: the wall margin
    # of long words is no worse than the short-word one by much
    shallow = orbit.limit_cone_estimate(table.subtable(3), min_len=2)
    deep = orbit.limit_cone_estimate(table, min_len=5)
    assert deep.wall_margin >= shallow.wall_margin - 0.05


# ---------------------------------------------------------------------------
# growth and Poincare series


def test_growth_indicator(table):
    u = np.array([1.0, 0.0, -1.0]) / np.sqrt(2)
    est = orbit.growth_indicator_estimate(table, u, theta=0.5, min_len=1)
    assert isinstance(est, orbit.SlopeEstimate)
    assert est.slope > 0
    assert est.upper >= est.slope - 5 * est.stderr
    # empty cone far from the limit set
    off = np.array([-1.0, 0.0, 1.0]) / np.sqrt(2)
    assert orbit.growth_indicator_estimate(table, off, theta=0.05) == -np.inf
    with pytest.raises(ValueError):
        orbit.growth_indicator_estimate(table, u, theta=0.0)


def test_growth_concavity_probe(table):
    """The growth indicator of the middle direction is at least the min of
    its neighbours (a sampled concavity check along the cone)."""
    cone = orbit.limit_cone_estimate(table, min_len=4)
    center = cone.directions.mean(axis=0)
    center /= np.linalg.norm(center)
    rays = [cone.hull[0], center, cone.hull[-1]]
    slopes = []
    for u in rays:
        est = orbit.growth_indicator_estimate(table, u, theta=0.35)
        slopes.append(est.slope if isinstance(est, orbit.SlopeEstimate) else -np.inf)
    assert slopes[1] >= min(slopes[0], slopes[2]) - 0.15


def test_critical_exponent(table):
    w = np.array([1.0, 0.0, -1.0])  # first+last fundamental weight direction
    est, diag = orbit.critical_exponent(table, w, min_len=1)
    assert est.slope > 0
    assert len(diag) == 3
    sums = list(diag.values())
    assert sums[0] >= sums[1] >= sums[2]  # partial sums decrease in s
    with pytest.raises(ValueError):
        orbit.critical_exponent(table, np.array([-1.0, 0.0, 0.0]))


def test_poincare_partial(table):
    psi = lc.fundamental_weight(1, 3).plus(lc.fundamental_weight(2, 3))
    total, shells, overflow = orbit.poincare_partial(table, psi, s=1.0)
    assert overflow is None
    assert len(shells) == table.L + 1
    assert shells[0] == 1.0  # identity contributes e^0
    assert abs(total - sum(shells)) < 1e-9 * total
    # larger s gives a smaller sum
    total2, _, _ = orbit.poincare_partial(table, psi, s=2.0)
    assert total2 < total


def test_regularity_margin(table):
    assert orbit.regularity_margin(table) > 0


def test_slope_estimator_oracle():
    # exact counts N(T) = e^{2T} give slope 2
    t = np.log(np.arange(1, 4001)) / 2.0
    est = orbit._count_slope(t)
    assert abs(est.slope - 2.0) < 0.05
    assert abs(est.upper - 2.0) < 0.2
    with pytest.raises(orbit.InsufficientDataError):
        orbit._count_slope(t[:5])
