"""Shadows, psi-Gromov products, virtual visual metrics and covering tools.

This layer sits between the matrix kernels (``liecore``), the free-group
combinatorics (``words``) and the orbit tables (``orbit``): it realizes the
limit map from boundary words to flags, decides shadow membership by convex
minimization over a flat, builds the virtual visual (quasi-)metric
d(xi, eta) = exp(-psi-Gromov product) together with its power-metric
chain construction, and fits the empirical constants (Morse deviation,
Busemann defects, triangle constant, covering dilation, word-to-flag
Gromov comparison) that the verification suites track.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg as la
from scipy.optimize import minimize
from scipy.sparse.csgraph import shortest_path

from anosovps import liecore as lc
from anosovps.orbit import OrbitTable, SchottkyPreset
from anosovps.words import BoundaryWord, Word, word_gromov_product

FLAT_MAX_ITER = 500
FLAT_TOL = 1e-10
DEFAULT_LIMIT_DEPTH = 32


class ConditionError(ValueError):
    """A construction's smallness condition fails (reports the threshold)."""


class CoverageError(RuntimeError):
    """A covering certificate failed; carries the uncovered witness."""


# ---------------------------------------------------------------------------
# Limit map: boundary words -> flags


def limit_flag(preset: SchottkyPreset,
               x: Union[BoundaryWord, Word, Sequence[int]],
               depth: int = DEFAULT_LIMIT_DEPTH) -> lc.Flag:
    """Flag of the boundary word x: the image of a generic flag under the
    depth-truncated prefix.

    The composition is evaluated one generator at a time from the deepest
    letter inward.  Each step is a well-conditioned flag action, and the
    ping-pong contraction damps the accumulated rounding, so the result is
    accurate far beyond the depth at which a single SVD of the full product
    stops resolving the lower subspaces.  Truncation error decays
    geometrically in ``depth``.
    """
    if isinstance(x, str):
        x = Word.parse(preset.alphabet, x)
    if isinstance(x, BoundaryWord):
        letters = x.prefix.letters
    elif isinstance(x, Word):
        letters = x.letters
    else:
        letters = tuple(int(c) for c in x)
    if not letters:
        raise lc.InputError("limit flag needs a nonempty word")
    letters = (letters * (depth // len(letters) + 1))[:depth] \
        if len(letters) < depth else letters[:depth]
    # seed with the attracting flag of the last letter, then pull back
    eta = lc.attracting_flag(preset.generators[letters[-1]])
    for letter in reversed(letters[:-1]):
        eta = lc.flag_action(preset.generators[letter], eta)
    return eta


def sample_limit_flags(preset: SchottkyPreset, n: int,
                       depth: int = DEFAULT_LIMIT_DEPTH,
                       seed: int = 0) -> tuple[list[BoundaryWord], list[lc.Flag]]:
    """n random boundary words (uniform reduced continuations) with their
    limit flags."""
    rng = np.random.default_rng(seed)
    size = 2 * preset.rank
    words, flags = [], []
    for _ in range(n):
        letters = [int(rng.integers(size))]
        while len(letters) < depth:
            step = int(rng.integers(size - 1))
            choices = [l for l in range(size) if l != (letters[-1] ^ 1)]
            letters.append(choices[step])
        w = Word(preset.alphabet, tuple(letters))
        words.append(BoundaryWord(w))
        flags.append(limit_flag(preset, w, depth))
    return words, flags


# ---------------------------------------------------------------------------
# psi-Gromov products and the virtual visual metric


def psi_gromov(xi: lc.Flag, eta: lc.Flag, psi: lc.LinearForm,
               p: Optional[np.ndarray] = None) -> float:
    """Based psi-Gromov product of a transversal pair.

    At the origin this is psi applied to the Cartan-valued Gromov product;
    at basepoint p = g(o) the flags are first pulled back by g, which
    matches the Busemann basepoint-change identity.
    """
    if p is not None:
        ginv = la.inv(lc.check_group_element(p))
        xi = lc.flag_action(ginv, xi)
        eta = lc.flag_action(ginv, eta)
    return float(psi(lc.gromov_product(lc.FlagPair(xi, eta))))


def virtual_distance(xi: lc.Flag, eta: lc.Flag, psi: lc.LinearForm,
                     p: Optional[np.ndarray] = None) -> float:
    """d_p(xi, eta) = exp(-[xi, eta]_{psi, p}); zero on the diagonal by
    convention, weakly symmetric and weakly ultrametric off it."""
    if np.array_equal(xi.frame, eta.frame):
        return 0.0
    return float(np.exp(-psi_gromov(xi, eta, psi, p)))


def _weight_coordinates(psi: lc.LinearForm) -> np.ndarray:
    """Coefficients a_k with psi = sum_k a_k omega_k on trace-zero vectors."""
    c = psi.coefficients
    return c[:-1] - c[1:]


def _psi_gromov_matrix(frames_a: np.ndarray, frames_b: np.ndarray,
                       psi: lc.LinearForm) -> np.ndarray:
    """(na, nb) table of psi-Gromov products, vectorized over both lists.

    Non-transversal pairs (in particular coincident flags) produce +inf
    when psi is a nonnegative combination of fundamental weights and nan
    otherwise; callers decide how to treat them.
    """
    d = frames_a.shape[-1]
    a = _weight_coordinates(psi)
    val = np.zeros((len(frames_a), len(frames_b)))
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(1, d):
            x = frames_a[:, :, :k]
            y = frames_b[:, :, d - k:]
            pairing = np.einsum("adk,bdl->abkl", x, y)
            w = -np.log(np.abs(np.linalg.det(pairing)))
            val += a[k - 1] * w
    return val


def cross_distances(flags_a: Sequence[lc.Flag], flags_b: Sequence[lc.Flag],
                    psi: lc.LinearForm,
                    p: Optional[np.ndarray] = None) -> np.ndarray:
    """Table of virtual distances between two flag lists."""
    fa = np.stack([f.frame for f in flags_a])
    fb = np.stack([f.frame for f in flags_b])
    if p is not None:
        ginv = la.inv(lc.check_group_element(p))
        fa = np.stack([lc.flag_action(ginv, lc.Flag(f)).frame for f in fa])
        fb = np.stack([lc.flag_action(ginv, lc.Flag(f)).frame for f in fb])
    with np.errstate(over="ignore"):
        return np.exp(-_psi_gromov_matrix(fa, fb, psi))


@dataclass
class MetricSample:
    """A finite set of pairwise transversal flags carrying the virtual
    visual metric d(xi_i, xi_j) = exp(-psi-Gromov) at a basepoint.

    ``pair_values`` has zero diagonal and positive off-diagonal entries;
    construction fails on a non-transversal pair.
    """

    points: list
    psi: lc.LinearForm
    basepoint: Optional[np.ndarray]
    pair_values: np.ndarray = field(repr=False)

    @staticmethod
    def from_flags(points: Sequence[lc.Flag], psi: lc.LinearForm,
                   basepoint: Optional[np.ndarray] = None) -> "MetricSample":
        points = list(points)
        dmat = cross_distances(points, points, psi, basepoint)
        np.fill_diagonal(dmat, 0.0)
        off = dmat[~np.eye(len(points), dtype=bool)]
        if len(points) > 1 and (not np.all(np.isfinite(off)) or off.min() <= 0):
            raise lc.TransversalityError(
                "sample contains a non-transversal pair of flags")
        return MetricSample(points, psi, basepoint, dmat)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def gromov_values(self) -> np.ndarray:
        """[xi_i, xi_j]_{psi,p} table (+inf on the diagonal)."""
        with np.errstate(divide="ignore"):
            return -np.log(self.pair_values)


def weak_constants(sample: MetricSample) -> tuple[float, float]:
    """Empirical weak-symmetry and weak-ultrametricity defects.

    C_sym bounds [xi2,xi1] - [xi1,xi2] over ordered pairs; C_ultra bounds
    min([xi1,xi2],[xi2,xi3]) - [xi1,xi3] over ordered triples of distinct
    points.  Both are clipped at zero.
    """
    g = sample.gromov_values
    n = len(sample)
    if n < 2:
        raise lc.InputError("weak constants need >= 2 points")
    off = ~np.eye(n, dtype=bool)
    with np.errstate(invalid="ignore"):
        c_sym = float(np.max((g.T - g)[off], initial=0.0))
        c_ultra = 0.0
        if n >= 3:
            pairmin = np.minimum(g[:, :, None], g.T[None, :, :])
            defect = pairmin - g[:, None, :]  # min(g[i,j], g[j,k]) - g[i,k]
            mask = off[:, :, None] & off[None, :, :] & off[:, None, :]
            c_ultra = float(max(0.0, defect[mask].max()))
    return c_sym, c_ultra


@dataclass(frozen=True)
class PowerMetric:
    """Chain-infimum table of the eps-power distance on a sample."""

    eps: float
    admissible_eps: float
    table: np.ndarray
    distortion: float  # certified C_eps on the sample


def power_metric(sample: MetricSample, eps: float) -> PowerMetric:
    """d_eps(x, y) = infimum over chains inside the sample of the summed
    eps-powers of the virtual distance; a genuine metric on the sample.

    Requires e^{eps * C} < sqrt(2) with C the larger weak constant; the
    returned distortion is the max ratio between d^eps and the chain value.
    """
    if eps <= 0:
        raise ConditionError("eps must be positive")
    c_sym, c_ultra = weak_constants(sample)
    c = max(c_sym, c_ultra)
    admissible = np.log(np.sqrt(2.0)) / c if c > 0 else np.inf
    if eps >= admissible:
        raise ConditionError(
            f"eps = {eps:g} too large; chain construction needs "
            f"eps < {admissible:g} (e^(eps C) < sqrt(2) with C = {c:g})")
    w = sample.pair_values ** eps
    np.fill_diagonal(w, 0.0)
    table = shortest_path(w, method="D", directed=True)
    off = ~np.eye(len(sample), dtype=bool)
    distortion = float(np.max(w[off] / table[off])) if off.any() else 1.0
    return PowerMetric(eps, float(admissible), table, distortion)


# ---------------------------------------------------------------------------
# Flat distance, shadows, Morse deviation


def _chamber_basis(d: int) -> np.ndarray:
    """Columns spanning the closed positive chamber over t >= 0
    (gauge-normalized fundamental coweights)."""
    b = np.zeros((d, d - 1))
    for k in range(1, d):
        b[:k, k - 1] = 1.0
    return b - b.mean(axis=0)


def flat_distance(m: np.ndarray, max_iter: int = FLAT_MAX_ITER,
                  tol: float = FLAT_TOL):
    """Distance from the orbit point m(o) to the standard positive flat
    {exp(v) o : v in the closed chamber}.

    The objective ||mu(exp(-v) m)|| is convex along the flat; it is
    minimized over the coweight coordinates t >= 0 of the chamber with a
    bound-constrained quasi-Newton iteration seeded at the chamber point
    mu(m).  Returns (distance, v, converged).
    """
    m = lc.check_group_element(m)
    d = m.shape[0]
    basis = _chamber_basis(d)

    def objective(t):
        v = basis @ t
        s = la.svdvals(np.exp(-v)[:, None] * m)
        if s[-1] <= 0 or not np.all(np.isfinite(s)):
            return 1e300
        mu = np.log(s)
        return float(np.sqrt(mu @ mu))

    # seed at the chamber point mu(m): coweight coordinates are the gaps.
    # any minimizer v satisfies ||v|| <= 2 ||mu(m)|| (coercivity), which
    # bounds the search box and keeps exp(-v) from overflowing
    mu0 = lc.batched_cartan(m[None])[0][0]
    t0 = np.maximum(-np.diff(mu0), 0.0)
    tmax = 4.0 * float(la.norm(mu0)) + 10.0
    res = minimize(objective, t0, method="L-BFGS-B",
                   bounds=[(0.0, tmax)] * (d - 1),
                   options={"maxiter": max_iter, "ftol": tol, "gtol": 1e-12})
    v = basis @ res.x
    converged = bool(res.success) or res.fun <= tol
    return float(res.fun), v, converged


@dataclass(frozen=True)
class ShadowSpec:
    """Shadow of the ball B(q(o), r) viewed from the basepoint p(o)."""

    viewpoint: np.ndarray
    target: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "viewpoint",
                           lc.check_group_element(self.viewpoint))
        object.__setattr__(self, "target", lc.check_group_element(self.target))
        if self.radius <= 0:
            raise lc.InputError("shadow radius must be > 0")


@dataclass(frozen=True)
class ShadowResult:
    """Outcome of a shadow-membership test.

    ``status`` is "member", "nonmember" or "indeterminate" (optimizer did
    not converge); ``distance`` is the minimized distance from the chamber
    flat to the target and ``witness`` the minimizing chamber vector.
    """

    status: str
    distance: float
    witness: np.ndarray

    def __bool__(self) -> bool:
        if self.status == "indeterminate":
            raise RuntimeError("indeterminate shadow result has no truth value")
        return self.status == "member"


def shadow_membership(xi: lc.Flag, spec: ShadowSpec) -> ShadowResult:
    """Test whether xi lies in the shadow: whether the chamber from the
    viewpoint toward xi passes within ``radius`` of the target point."""
    p, q = spec.viewpoint, spec.target
    # h(o) = p(o) with forward flag xi: rotate p by the frame of p^{-1} xi
    k = lc.flag_action(la.inv(p), xi).frame
    if la.det(k) < 0:
        k = k.copy()
        k[:, -1] = -k[:, -1]
    h = p @ k
    dist, v, converged = flat_distance(la.inv(h) @ q)
    if not converged:
        return ShadowResult("indeterminate", dist, v)
    status = "member" if dist < spec.radius else "nonmember"
    return ShadowResult(status, dist, v)


def kappa_defect(xi: lc.Flag, spec: ShadowSpec) -> float:
    """||beta_xi(p, q) - a(p, q)|| / r, the normalized Busemann-vs-Cartan
    defect whose sup over shadow members stays bounded."""
    beta = lc.busemann(xi, spec.viewpoint, spec.target)
    a = lc.cartan_projection(la.inv(spec.viewpoint) @ spec.target)
    return float(la.norm(beta - a) / spec.radius)


def morse_deviation(ray: Sequence[Word], table: OrbitTable) -> float:
    """Largest distance from the orbit of a geodesic ray prefix to the
    chamber flat of its limit flag.

    ``ray`` must list nested prefixes (each extending the previous by one
    letter); the flat is anchored at the frame of the limit flag computed
    from the deepest prefix.
    """
    ray = list(ray)
    if not ray or len(ray[-1]) == 0:
        raise lc.InputError("ray needs a nonempty deepest prefix")
    for a, b in zip(ray, ray[1:]):
        if len(b) != len(a) + 1 or not a.is_prefix_of(b):
            raise lc.InputError("ray is not a nested geodesic prefix family")
    g = limit_flag(table.preset, ray[-1]).frame
    if la.det(g) < 0:
        g = g.copy()
        g[:, -1] = -g[:, -1]
    ginv = la.inv(g)
    worst = 0.0
    for w in ray:
        if len(w) == 0:
            continue
        dist, _, converged = flat_distance(ginv @ table.mats[table.row_of(w)])
        if not converged:
            raise ConditionError(f"flat-distance solver stalled at prefix {w}")
        worst = max(worst, dist)
    return worst


# ---------------------------------------------------------------------------
# Busemann defect bounds


def busemann_bounds_check(table: OrbitTable, psi: lc.LinearForm,
                          limit_flags: Sequence[lc.Flag],
                          min_len: int = 1) -> tuple[float, float]:
    """Empirical defects of the two-sided Busemann bound
    -psi(a(o, gamma o)) - C <= psi(beta_xi(gamma o, o)) <= psi(a(gamma o, o)) + C
    over all (gamma, xi) pairs; requires psi > 0 on the sampled directions.

    For psi a nonnegative combination of fundamental weights both defects
    vanish to numerical tolerance.
    """
    sel = np.flatnonzero(table.word_len >= min_len)
    values = psi(table.mu[sel])
    if np.any(values <= 0):
        raise lc.InputError("psi is not positive on a sampled mu direction")
    gens = table.preset.generators
    upper = lower = 0.0
    for i in sel:
        # accumulate the cocycle one letter at a time: a single QR of the
        # full word matrix loses all digits once its condition number
        # exceeds 1/eps, while every per-letter step stays well conditioned
        w = table.letters[i]
        word = [int(c) for c in w[w >= 0]]
        psi_mu = float(psi(table.mu[i]))
        psi_mu_inv = float(psi(lc.opposition_involution(table.mu[i])))
        for xi in limit_flags:
            sigma = np.zeros(table.preset.dim)
            cur = xi
            for c in word:
                step = gens[c ^ 1]
                sigma += lc.iwasawa_sigma(step, cur)
                cur = lc.flag_action(step, cur)
            b = float(psi(sigma))
            upper = max(upper, b - psi_mu_inv)
            lower = max(lower, -psi_mu - b)
    return upper, lower


# ---------------------------------------------------------------------------
# Triangle constant and Vitali covering


def triangle_constant(sample: MetricSample) -> float:
    """Smallest N >= 1 with d(x,z) <= N (d(x,y) + d(y,z)) on the sample."""
    dmat = sample.pair_values
    n = len(sample)
    if n < 3:
        return 1.0
    # sums[i, j, k] = d(i,j) + d(j,k)
    sums = dmat[:, :, None] + dmat[None, :, :]
    direct = dmat[:, None, :]
    off = ~np.eye(n, dtype=bool)
    mask = off[:, :, None] & off[None, :, :] & off[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mask, direct / sums, 0.0)
    return float(max(1.0, np.nanmax(ratio)))


@dataclass(frozen=True)
class VitaliResult:
    """Greedy disjoint subfamily with its certified covering dilation."""

    selected: tuple[int, ...]
    dilation: float           # 3 N0
    triangle_n0: float        # N0 = N^3
    cover_of: tuple[int, ...]  # selected index covering each input ball


def vitali_cover(balls: Sequence[tuple[lc.Flag, float]],
                 sample: MetricSample) -> VitaliResult:
    """Greedy radius-descending disjoint subcollection of virtual balls.

    Balls are read as subsets of the sampled points.  The certificate
    checks that every input ball's points lie inside the 3 N0-dilate of
    the selected ball that blocked it (N0 = N^3 for the fitted triangle
    constant N); failure raises CoverageError naming the uncovered point.
    """
    if not balls:
        return VitaliResult((), 0.0, 0.0, ())
    centers = [b[0] for b in balls]
    radii = np.array([float(b[1]) for b in balls])
    if np.any(radii <= 0):
        raise lc.InputError("ball radii must be positive")
    dists = cross_distances(centers, sample.points, sample.psi,
                            sample.basepoint)  # (n_balls, n_sample)
    members = [np.flatnonzero(dists[i] <= radii[i]) for i in range(len(balls))]
    n0 = triangle_constant(sample) ** 3
    dilation = 3.0 * n0
    order = np.argsort(-radii, kind="stable")
    selected: list[int] = []
    blocker = np.full(len(balls), -1, dtype=int)
    for i in order:
        hit = next((j for j in selected
                    if np.intersect1d(members[i], members[j]).size), None)
        if hit is None:
            selected.append(int(i))
            blocker[i] = i
        else:
            blocker[i] = hit
    for i in range(len(balls)):
        j = blocker[i]
        uncovered = members[i][dists[j, members[i]] > dilation * radii[j]]
        if uncovered.size:
            raise CoverageError(
                f"sample point {int(uncovered[0])} of ball {i} escapes the "
                f"{dilation:g}-dilate of selected ball {j}")
    return VitaliResult(tuple(selected), dilation, float(n0), tuple(blocker))


# ---------------------------------------------------------------------------
# Word-to-flag Gromov comparison


def gromov_comparison_fit(table: OrbitTable, psi: lc.LinearForm,
                          pairs: Sequence[tuple[BoundaryWord, BoundaryWord]],
                          depth: int = DEFAULT_LIMIT_DEPTH) -> tuple[float, float]:
    """Affine envelope (c1, c2) with
    c1^{-1} (x|y) - c2 <= psi-Gromov(limit(x), limit(y)) <= c1 (x|y) + c2
    over the sampled boundary-word pairs."""
    preset = table.preset
    samples = []
    for x, y in pairs:
        if x.prefix.letters == y.prefix.letters:
            continue
        t = word_gromov_product(x, y)
        zx = limit_flag(preset, x, depth)
        zy = limit_flag(preset, y, depth)
        val = psi_gromov(zx, zy, psi)
        samples.append((t, val))
    if not samples:
        raise lc.InputError("no distinct boundary pairs to fit")
    c1 = 1.0
    for t, val in samples:
        if t > 0 and val > 0:
            c1 = max(c1, val / t, t / val)
    c2 = 0.0
    for t, val in samples:
        c2 = max(c2, val - c1 * t, t / c1 - val)
    return float(c1), float(c2)


# ---------------------------------------------------------------------------
# Constant reports


def constant_report(lemma_id: str, fitted_constant: float, witness,
                    sample_size: int,
                    stability_ratio: Optional[float] = None) -> dict:
    """Uniform JSON-ready record for a fitted empirical constant."""
    return {
        "lemma_id": lemma_id,
        "fitted_constant": float(fitted_constant),
        "witness": witness,
        "sample_size": int(sample_size),
        "stability_ratio": None if stability_ratio is None
        else float(stability_ratio),
    }
