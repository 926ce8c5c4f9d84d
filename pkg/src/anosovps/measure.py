"""Truncated Patterson-Sullivan measures and the measure-theoretic layer.

A measure here is a finite atomic approximation: the truncated orbital sum
sum_gamma e^{-psi(mu(gamma))} delta_{kappa1(gamma)} over an orbit table,
normalized, with atoms restricted to deep shells.  On top of it sit the
conformality residual, the shadow-lemma mass band, the product (BMS) and
horospherical (BR) density factors, the essential-value certificate search,
the Myrberg approximation score and a coarse-graining singularity
diagnostic.  All set masses are atom sums; nothing is smoothed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg as la

from anosovps import liecore as lc
from anosovps import metrics as mx
from anosovps.orbit import OrbitTable, SchottkyPreset
from anosovps.words import Word


class PrecisionError(ArithmeticError):
    """All weights underflowed; the requested form is too steep."""


DEFAULT_BANDWIDTHS = (0.1, 0.3)
ATOM_MATCH_TOL = 0.05


# ---------------------------------------------------------------------------
# batched helpers


def batched_chordal(frames: np.ndarray, frame0: np.ndarray) -> np.ndarray:
    """Chordal flag distance from every frame in a stack to one frame."""
    d = frames.shape[-1]
    worst = np.zeros(len(frames))
    for k in range(1, d):
        x = frames[:, :, :k]
        y = frame0[:, :k]
        diff = x @ x.transpose(0, 2, 1) - y @ y.T
        gap = np.linalg.svd(diff, compute_uv=False)[:, 0]
        worst = np.maximum(worst, np.minimum(gap, 1.0))
    return worst


def canonical_frames(bases: np.ndarray) -> np.ndarray:
    """Batched canonical flag frames from a stack of bases (QR with positive
    diagonal, then the first-significant-entry sign convention)."""
    q, r = np.linalg.qr(bases)
    signs = np.sign(np.diagonal(r, axis1=1, axis2=2))
    signs[signs == 0] = 1.0
    q = q * signs[:, None, :]
    first = np.argmax(np.abs(q) > 1e-10, axis=1)
    lead = np.take_along_axis(q, first[:, None, :], axis=1)[:, 0, :]
    return q * np.where(lead < 0, -1.0, 1.0)[:, None, :]


def batched_busemann(frames: np.ndarray, g: np.ndarray) -> np.ndarray:
    """beta_xi(o, g o) = -sigma(g^{-1}, xi) for a stack of flag frames."""
    ginv = la.inv(lc.check_group_element(g))
    _, r = np.linalg.qr(ginv @ frames)
    diag = np.abs(np.diagonal(r, axis1=1, axis2=2))
    return -np.log(diag)


def batched_flat_distance(ms: np.ndarray, iters: int = 80,
                          threshold: Optional[float] = None):
    """Distance to the standard positive flat for a stack of elements.

    Projected-gradient descent on the coweight coordinates t >= 0 with a
    per-instance adaptive step; gradients by central differences.  Accuracy
    around 1e-6, which suffices for the shadow-mass counts built on top.
    Instances are retired from the active set once their step collapses or,
    when a decision ``threshold`` is given, once the (monotone) objective
    drops below it.
    """
    n, d = ms.shape[0], ms.shape[1]
    basis = mx._chamber_basis(d)

    def fval(t, mats):
        v = t @ basis.T
        scaled = np.exp(-np.clip(v, -500, 500))[:, :, None] * mats
        s = np.linalg.svd(scaled, compute_uv=False)
        mu = np.log(np.clip(s, 1e-300, None))
        return np.sqrt((mu * mu).sum(axis=1))

    s0 = np.linalg.svd(ms, compute_uv=False)
    mu0 = np.log(np.clip(s0, 1e-300, None))
    t = np.maximum(-np.diff(mu0, axis=1), 0.0)
    f = fval(t, ms)
    step = np.full(n, 0.25)
    stall = np.zeros(n, dtype=np.int8)
    h = 1e-6
    active = np.arange(n)
    for _ in range(iters):
        if threshold is not None:
            active = active[f[active] >= threshold]
        active = active[stall[active] < 6]
        if len(active) == 0:
            break
        ta, ma = t[active], ms[active]
        grad = np.empty_like(ta)
        for j in range(d - 1):
            e = np.zeros(d - 1)
            e[j] = h
            grad[:, j] = (fval(ta + e, ma) - fval(ta - e, ma)) / (2 * h)
        cand = np.maximum(ta - step[active][:, None] * grad, 0.0)
        fc = fval(cand, ma)
        fa = f[active]
        better = fc < fa
        gain = np.where(better, fa - fc, 0.0)
        t[active] = np.where(better[:, None], cand, ta)
        f[active] = np.where(better, fc, fa)
        step[active] = np.clip(
            np.where(better, step[active] * 1.3, step[active] * 0.5),
            1e-12, 10.0)
        stall[active] = np.where(gain >= 1e-7, 0, stall[active] + 1)
    return f, t @ basis.T


def batched_shadow_mask(frames: np.ndarray, target: np.ndarray,
                        radius: float,
                        prefilter_kappa: float = 4.0) -> np.ndarray:
    """Membership of a stack of flags in the shadow O_radius(o, target(o)).

    For each flag the chamber from the origin toward it is tested for
    passing within ``radius`` of the target, using the batched flat-distance
    solver on the rotated targets.  Candidates are prefiltered by the
    Busemann-vs-Cartan defect: members satisfy
    ||beta_xi(o, q) - a(o, q)|| <= kappa * radius, so flags violating a
    generous multiple of that bound are rejected without optimization.
    """
    mask = np.zeros(len(frames), dtype=bool)
    mu = lc.batched_cartan(target[None])[0][0]
    defect = np.linalg.norm(batched_busemann(frames, target) - mu, axis=1)
    cand = defect <= prefilter_kappa * radius + 2.0
    if not cand.any():
        return mask
    ms = frames[cand].transpose(0, 2, 1) @ target
    dists, _ = batched_flat_distance(ms, threshold=radius)
    mask[np.flatnonzero(cand)[dists < radius]] = True
    return mask


# ---------------------------------------------------------------------------
# Discrete measures


@dataclass
class DiscreteMeasure:
    """Normalized atomic measure on flag space.

    Atoms are kappa1 frames of orbit elements at word length >= the shell
    floor; weights are the normalized e^{-psi(mu)} masses.  ``preset`` is
    carried for word-to-matrix lookups and is not serialized beyond its
    name.
    """

    frames: np.ndarray           # (n, d, d)
    weights: np.ndarray          # (n,), sums to 1
    psi: lc.LinearForm
    L: int
    preset: Optional[SchottkyPreset]
    shell_floor: int
    word_len: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @property
    def preset_name(self) -> str:
        return self.preset.name if self.preset is not None else "detached"

    def flag(self, i: int) -> lc.Flag:
        return lc.Flag(self.frames[i])

    def set_mass(self, indices) -> float:
        """Atom-sum mass of a subset (indices or boolean mask)."""
        return float(self.weights[np.asarray(indices)].sum())

    def nearest_atom(self, xi: lc.Flag,
                     tol: float = ATOM_MATCH_TOL) -> tuple[int, float]:
        """Index and weight of the closest atom; index -1 when nothing is
        within the chordal tolerance."""
        dist = batched_chordal(self.frames, xi.frame)
        i = int(dist.argmin())
        if dist[i] > tol:
            return -1, 0.0
        return i, float(self.weights[i])

    def matrix_of(self, gamma: Union[Word, np.ndarray]) -> np.ndarray:
        if isinstance(gamma, np.ndarray):
            return lc.check_group_element(gamma)
        if self.preset is None:
            raise lc.InputError("measure is detached from its preset")
        m = np.eye(self.preset.dim)
        for letter in gamma.letters:
            m = m @ self.preset.generators[letter]
        return m

    def to_json(self) -> dict:
        return {
            "psi": list(self.psi.coefficients),
            "L": self.L,
            "preset": self.preset_name,
            "shell_floor": self.shell_floor,
            "atoms": [{"frame": [list(row) for row in f], "weight": float(w)}
                      for f, w in zip(self.frames, self.weights)],
        }

    @staticmethod
    def from_json(data: dict,
                  preset: Optional[SchottkyPreset] = None) -> "DiscreteMeasure":
        frames = np.array([a["frame"] for a in data["atoms"]], dtype=float)
        weights = np.array([a["weight"] for a in data["atoms"]], dtype=float)
        return DiscreteMeasure(frames, weights,
                               lc.LinearForm(np.array(data["psi"], dtype=float)),
                               int(data["L"]), preset, int(data["shell_floor"]))


def build_ps(table: OrbitTable, psi: lc.LinearForm,
             shell_floor: Optional[int] = None) -> DiscreteMeasure:
    """Truncated orbital sum sum e^{-psi(mu(gamma))} delta_{kappa1(gamma)}.

    The tangent weighting (s = 1) is used directly; truncation at the table
    depth plays the role of Patterson's limit.  Atoms below the shell floor
    (default L/2, damping basepoint artifacts) are discarded; the result is
    normalized and bit-deterministic in its inputs.
    """
    if shell_floor is None:
        shell_floor = max(1, table.L // 2)
    if shell_floor < 1:
        raise lc.InputError("shell_floor must be >= 1")
    nonid = table.word_len >= 1
    if np.any(psi(table.mu[nonid]) <= 0):
        raise lc.InputError("psi is not positive on a sampled mu direction")
    sel = table.word_len >= shell_floor
    if not np.any(sel):
        raise lc.InputError(f"no orbit points at word length >= {shell_floor}")
    raw = np.exp(-psi(table.mu[sel]))
    total = raw.sum()
    if not np.isfinite(total) or total <= 0:
        raise PrecisionError("all atom weights underflowed")
    return DiscreteMeasure(table.frames[sel].copy(), raw / total, psi,
                           table.L, table.preset, shell_floor,
                           word_len=table.word_len[sel].copy())


# ---------------------------------------------------------------------------
# Conformality


def default_test_functions(nu: DiscreteMeasure,
                           bandwidths: Sequence[float] = DEFAULT_BANDWIDTHS,
                           centers: int = 3) -> list[Callable]:
    """Constant plus Gaussian chordal kernels centered on spread atoms.

    Each function maps a stack of frames to a vector of values.
    """
    fns: list[Callable] = [lambda frames: np.ones(len(frames))]
    picks = np.linspace(0, len(nu) - 1, centers).astype(int)
    for h in bandwidths:
        for i in picks:
            center = nu.frames[i]
            fns.append(lambda frames, c=center, b=h:
                       np.exp(-batched_chordal(frames, c) ** 2 / (2 * b * b)))
    return fns


def conformality_residual(nu: DiscreteMeasure, gamma: Union[Word, np.ndarray],
                          testfns: Optional[Sequence[Callable]] = None) -> float:
    """Max defect of the conformal transformation rule over test kernels.

    Compares the gamma-pushforward integral against the integral weighted
    by the Radon-Nikodym factor e^{psi(beta_xi(o, gamma o))}; both sides are
    atom sums, so the residual measures the truncation defect.
    """
    if testfns is None:
        testfns = default_test_functions(nu)
    g = nu.matrix_of(gamma)
    pushed = canonical_frames(g @ nu.frames)
    jac = np.exp(nu.psi(batched_busemann(nu.frames, g)))
    worst = 0.0
    for f in testfns:
        lhs = float(np.sum(nu.weights * np.asarray(f(pushed))))
        rhs = float(np.sum(nu.weights * np.asarray(f(nu.frames)) * jac))
        worst = max(worst, abs(lhs - rhs))
    return worst


# ---------------------------------------------------------------------------
# Shadow lemma


def shadow_mass_ratio(nu: DiscreteMeasure, gamma: Union[Word, np.ndarray],
                      r: float) -> float:
    """nu(O_r(o, gamma o)) * e^{psi(mu(gamma))}.

    The shadow lemma predicts this lands in a bounded band uniformly in
    gamma once r clears the shadow threshold.  Membership of each atom is
    decided by the batched flat-distance solver.
    """
    if r <= 0:
        raise lc.InputError("shadow radius must be > 0")
    g = nu.matrix_of(gamma)
    mask = batched_shadow_mask(nu.frames, g, r)
    mu = lc.batched_cartan(g[None])[0][0]
    return float(nu.weights[mask].sum() * np.exp(float(nu.psi(mu))))


# ---------------------------------------------------------------------------
# BMS and BR density factors


def bms_density(point: lc.HopfPoint, psi: lc.LinearForm) -> float:
    """Radon-Nikodym factor e^{psi(Gromov(xi, eta))} of the product
    (Bowen-Margulis-Sullivan) density at a Hopf point; the measure-class
    part lives in the atomic factors."""
    product = lc.gromov_product(lc.FlagPair(point.xi, point.eta))
    return float(np.exp(psi(product)))


def br_density(g: np.ndarray, psi: lc.LinearForm,
               nu: Optional[DiscreteMeasure] = None) -> float:
    """Horospherical density factor e^{psi(b)} for g = k exp(b) n.

    The A-part comes from the positive-diagonal QR of g; the atomic
    K-marginal, when a measure is supplied, is available through
    ``nu.nearest_atom`` on the K-flag of g.
    """
    g = lc.check_group_element(g)
    _, r = lc.qr_pos(g)
    b = np.log(np.diag(r))
    return float(np.exp(psi(b)))


# ---------------------------------------------------------------------------
# nu-hat transformation bookkeeping


@dataclass(frozen=True)
class HatMeasureSpec:
    """The horospherical lift: base measure on flags times e^{psi(b)} db."""

    base: DiscreteMeasure
    psi: lc.LinearForm

    def __post_init__(self):
        if abs(self.base.total - 1.0) > 1e-9:
            raise lc.InputError("hat lift needs a normalized base measure")


def hat_mass_defect(spec: HatMeasureSpec, gamma: Union[Word, np.ndarray],
                    b: Optional[np.ndarray] = None) -> float:
    """Defect of the transformation law of the lifted measure under gamma.

    Transporting an atom (xi, b) to (gamma xi, b + beta_xi(o, gamma o))
    multiplies the base weight by the conformal Jacobian and divides the
    e^{psi(b)} density by the same factor; the lifted mass of each atom is
    exactly preserved and the returned defect is pure rounding.
    """
    nu = spec.base
    g = nu.matrix_of(gamma)
    beta = batched_busemann(nu.frames, g)
    if b is None:
        b = np.zeros((len(nu), nu.frames.shape[-1]))
    before = nu.weights * np.exp(spec.psi(b))
    jac = np.exp(spec.psi(beta))
    after = (nu.weights * jac) * np.exp(spec.psi(b) - spec.psi(beta))
    return float(np.abs(before - after).max())


# ---------------------------------------------------------------------------
# Essential values


@dataclass(frozen=True)
class EssentialValueCertificate:
    """Witness that lambda(gamma0) behaves as an essential value of the
    Busemann cocycle at the sampled resolution."""

    gamma0: Word
    conjugator: Word
    target: np.ndarray            # lambda(gamma0)
    epsilon: float
    set_mass: float
    max_busemann_deviation: float

    def __post_init__(self):
        if self.max_busemann_deviation >= self.epsilon:
            raise lc.InputError("certificate deviation exceeds epsilon")
        if self.set_mass <= 0:
            raise lc.InputError("certificate set has zero mass")

    def to_json(self) -> dict:
        return {
            "gamma0": str(self.gamma0),
            "conjugator": str(self.conjugator),
            "target": list(self.target),
            "epsilon": self.epsilon,
            "set_mass": self.set_mass,
            "max_busemann_deviation": self.max_busemann_deviation,
        }


@dataclass(frozen=True)
class SearchOutcome:
    """Result of an essential-value search: the certificate (or None) plus
    the best deviation met and the number of conjugators tried."""

    certificate: Optional[EssentialValueCertificate]
    best_deviation: float
    tried: int

    @property
    def found(self) -> bool:
        return self.certificate is not None


def essential_value_search(nu: DiscreteMeasure, table: OrbitTable,
                           gamma0: Word, eps: float,
                           B: Optional[np.ndarray] = None,
                           max_conjugators: int = 400,
                           ball_scale: float = 1.0,
                           match_tol: float = ATOM_MATCH_TOL) -> SearchOutcome:
    """Search conjugators for a certificate that lambda(gamma0) is an
    approximate essential value.

    Conjugators gamma are tried in increasing psi(mu(gamma)) order.  For
    each, atoms near gamma . (attracting flag of gamma0) are tested for
    lying in B, being mapped back into B by gamma gamma0 gamma^{-1}, and
    satisfying the Busemann radius condition
    ||beta_xi(o, gamma gamma0 gamma^{-1} o) - lambda(gamma0)|| < eps.
    The first conjugator with positive qualifying mass wins.
    """
    if eps <= 0:
        raise lc.InputError("eps must be > 0")
    if B is None:
        B = np.ones(len(nu), dtype=bool)
    B = np.asarray(B)
    if B.dtype != bool:
        mask = np.zeros(len(nu), dtype=bool)
        mask[B] = True
        B = mask
    if nu.set_mass(B) <= 0:
        raise lc.InputError("B has zero mass")
    g0 = nu.matrix_of(gamma0)
    lam0, lox = lc.jordan_projection(g0, return_loxodromy=True)
    if not lox:
        raise lc.LoxodromyError("gamma0 is not loxodromic")
    # triangle constant fitted on an atom subsample
    picks = np.linspace(0, len(nu) - 1, min(60, len(nu))).astype(int)
    sample = mx.MetricSample.from_flags(
        [nu.flag(int(i)) for i in picks], nu.psi)
    n0 = mx.triangle_constant(sample) ** 3
    if float(nu.psi(lam0)) < 1.0 + np.log(3.0 * n0):
        raise mx.ConditionError(
            f"psi(lambda(gamma0)) = {float(nu.psi(lam0)):.3f} below the "
            f"threshold 1 + log(3 N0) = {1.0 + np.log(3.0 * n0):.3f}")
    xi0 = lc.attracting_flag(g0)
    order = np.argsort(nu.psi(table.mu), kind="stable")
    best_dev = np.inf
    tried = 0
    for row in order[:max_conjugators]:
        gamma = table.word(int(row))
        c = table.mats[row]
        h = c @ g0 @ la.inv(c)
        h /= la.det(h) ** (1.0 / h.shape[0])
        # virtual ball D(gamma xi0, r) around the conjugated flag
        center = lc.flag_action(c, xi0)
        mu_c = table.mu[row]
        shrink = np.exp(-float(nu.psi(mu_c + lc.opposition_involution(mu_c))))
        r_ball = ball_scale * shrink / (3.0 * n0)
        dvals = np.exp(-_psi_gromov_to_center(nu.frames, center.frame, nu.psi))
        near = dvals <= 3.0 * n0 * r_ball
        cand = near & B
        tried += 1
        if not cand.any():
            continue
        idx = np.flatnonzero(cand)
        beta = batched_busemann(nu.frames[idx], h)
        dev = np.linalg.norm(beta - lam0, axis=1)
        best_dev = min(best_dev, float(dev.min()))
        ok = dev < eps
        if not ok.any():
            continue
        # pulled-back atoms must land back inside B
        back = canonical_frames(la.inv(h) @ nu.frames[idx[ok]])
        in_b = np.zeros(len(back), dtype=bool)
        b_frames = nu.frames[B]
        for j, f in enumerate(back):
            in_b[j] = batched_chordal(b_frames, f).min() < match_tol
        chosen = idx[ok][in_b]
        if chosen.size == 0:
            continue
        mass = nu.set_mass(chosen)
        if mass > 0:
            cert = EssentialValueCertificate(
                gamma0, gamma, lam0, eps, mass,
                float(dev[ok][in_b].max()))
            return SearchOutcome(cert, float(dev[ok][in_b].max()), tried)
    return SearchOutcome(None, best_dev, tried)


def _psi_gromov_to_center(frames: np.ndarray, center: np.ndarray,
                          psi: lc.LinearForm) -> np.ndarray:
    """psi-Gromov products from one frame to a stack, vectorized."""
    d = frames.shape[-1]
    a = psi.coefficients[:-1] - psi.coefficients[1:]
    val = np.zeros(len(frames))
    with np.errstate(divide="ignore"):
        for k in range(1, d):
            pairing = np.einsum("dk,adl->akl", center[:, :k], frames[:, :, d - k:])
            val += a[k - 1] * -np.log(np.abs(np.linalg.det(pairing)))
    return val


def _gram_schmidt_longdouble(m: np.ndarray) -> np.ndarray:
    """Positive-diagonal QR in extended precision (modified Gram-Schmidt);
    returns the upper-triangular factor's diagonal logs."""
    a = m.astype(np.longdouble).copy()
    d = a.shape[1]
    diag = np.empty(d, dtype=np.longdouble)
    for j in range(d):
        for i in range(j):
            a[:, j] -= (a[:, i] @ a[:, j]) * a[:, i]
        nrm = np.sqrt(a[:, j] @ a[:, j])
        diag[j] = nrm
        a[:, j] /= nrm
    return np.log(diag.astype(np.longdouble))


def verify_certificate(nu: DiscreteMeasure, cert: EssentialValueCertificate,
                       table: OrbitTable) -> bool:
    """Re-verify a certificate's radius condition in extended precision.

    Recomputes the Busemann deviations of the certified atoms with a
    long-double Gram-Schmidt instead of the float64 QR kernel and checks
    they stay below epsilon.
    """
    g0 = nu.matrix_of(cert.gamma0)
    c = nu.matrix_of(cert.conjugator)
    h = c @ g0 @ la.inv(c)
    h /= la.det(h) ** (1.0 / h.shape[0])
    hinv = la.inv(h).astype(np.longdouble)
    beta = batched_busemann(nu.frames, h)
    dev = np.linalg.norm(beta - cert.target, axis=1)
    idx = np.flatnonzero(dev <= cert.max_busemann_deviation + 1e-9)
    if idx.size == 0:
        return False
    for i in idx[:200]:
        sigma = _gram_schmidt_longdouble(np.asarray(hinv) @ nu.frames[i])
        refined = -np.asarray(sigma, dtype=float)
        if la.norm(refined - cert.target) >= cert.epsilon:
            return False
    return True


# ---------------------------------------------------------------------------
# Myrberg score


def myrberg_score(xi0: lc.Flag, table: OrbitTable,
                  targets: Sequence[lc.FlagPair], tol: float) -> float:
    """Fraction of target pairs (xi, eta) approximated by some orbit
    element: kappa1(gamma) near xi and gamma . xi0 near eta."""
    if tol < 0:
        raise lc.InputError("tol must be >= 0")
    if not targets:
        return 0.0
    moved = canonical_frames(table.mats @ xi0.frame)
    hits = 0
    for pair in targets:
        near_xi = batched_chordal(table.frames, pair.xi.frame) < tol
        if not near_xi.any():
            continue
        if (batched_chordal(moved[near_xi], pair.eta.frame) < tol).any():
            hits += 1
    return hits / len(targets)


# ---------------------------------------------------------------------------
# Mutual singularity diagnostic


def mutual_singularity_diagnostic(nu1: DiscreteMeasure, nu2: DiscreteMeasure,
                                  scales: Sequence[float],
                                  seed: int = 0) -> dict:
    """Per-scale correlation of coarse-grained masses on random-rotation
    Voronoi partitions of flag space.

    Mutually singular measures decorrelate as the partition refines;
    identical measures stay at correlation 1.  Report only, no pass/fail.
    """
    d = nu1.frames.shape[-1]
    rng = np.random.default_rng(seed)
    report = {}
    for s in scales:
        if s <= 0:
            raise lc.InputError("scales must be positive")
        n_cells = max(2, int(np.ceil(1.0 / s)))
        centers = []
        for _ in range(n_cells):
            q, r = la.qr(rng.normal(size=(d, d)))
            centers.append(q * np.sign(np.diag(r)))
        m1 = _cell_masses(nu1, centers)
        m2 = _cell_masses(nu2, centers)
        if m1.std() < 1e-15 or m2.std() < 1e-15:
            corr = 1.0 if np.allclose(m1, m2) else 0.0
        else:
            corr = float(np.corrcoef(m1, m2)[0, 1])
        report[float(s)] = corr
    return report


def _cell_masses(nu: DiscreteMeasure, centers: Sequence[np.ndarray]) -> np.ndarray:
    dists = np.stack([batched_chordal(nu.frames, c) for c in centers])
    cell = np.argmin(dists, axis=0)
    masses = np.zeros(len(centers))
    np.add.at(masses, cell, nu.weights)
    return masses
