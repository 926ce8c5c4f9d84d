"""Decompositions, projections and boundary cocycles for SL(d,R).

Conventions used throughout the package:

* Group elements are plain d x d numpy arrays with determinant 1
  (``check_group_element`` enforces this).
* The Cartan subspace a is modeled as trace-zero length-d vectors with the
  Euclidean inner product; the positive chamber a+ is the set of
  nonincreasing vectors.  Cartan-valued quantities (mu, lambda, sigma,
  Busemann, Gromov product) are returned as plain length-d arrays.
* Flags are stored as canonical orthogonal frames: the first k columns span
  the k-th flag subspace.  Canonical form = positive-diagonal QR followed by
  a column sign fix, so flag equality is a frame comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

# Tolerance hierarchy: factorization residuals, algebraic identities,
# geometric identities chained through several operations.
TOL_FACTOR = 1e-12
TOL_ALGEBRA = 1e-9
TOL_GEOMETRY = 1e-8

# Singular-value margin below which kappa frames are ambiguous (M-torus
# ambiguity is only resolved for regular elements).
REGULAR_MARGIN = 1e-7


class InputError(ValueError):
    """Invalid input data (non-finite, wrong shape, not unimodular)."""


class DegeneracyError(ArithmeticError):
    """Numerically singular factorization."""


class TransversalityError(ValueError):
    """Flag pair not in general position."""


class LoxodromyError(ValueError):
    """Element is not loxodromic (eigenvalue moduli not distinct)."""


def check_group_element(g: np.ndarray) -> np.ndarray:
    """Validate a matrix as an element of SL(d,R) and return it as float64."""
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] < 2:
        raise InputError(f"expected square matrix of size >= 2, got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise InputError("non-finite matrix entries")
    scale = max(np.abs(g).max(), 1.0)
    if abs(la.det(g) - 1.0) > 1e-9 * scale ** g.shape[0]:
        raise InputError("matrix is not unimodular")
    return g


def check_cartan_vector(v: np.ndarray, positive: bool = False) -> np.ndarray:
    """Validate a trace-zero vector, optionally requiring chamber order."""
    v = np.asarray(v, dtype=float)
    if abs(v.sum()) > 1e-9 * max(1.0, np.abs(v).max()):
        raise InputError("vector is not trace-zero")
    if positive and np.any(np.diff(v) > 1e-9):
        raise InputError("vector is not in the positive chamber")
    return v


def in_positive_chamber(v: np.ndarray, tol: float = TOL_ALGEBRA) -> bool:
    return bool(np.all(np.diff(v) <= tol))


def opposition_involution(v: np.ndarray) -> np.ndarray:
    """The chamber-preserving involution i(v) = (-v_d, ..., -v_1),
    applied along the last axis."""
    return -np.flip(np.asarray(v, dtype=float), axis=-1)


def w0_matrix(d: int) -> np.ndarray:
    """Longest Weyl element as a rotation: antidiagonal permutation, one sign
    flipped when the permutation has determinant -1 (d = 2, 3 mod 4)."""
    w = np.fliplr(np.eye(d))
    if la.det(w) < 0:
        w[:, 0] = -w[:, 0]
    return w


# ---------------------------------------------------------------------------
# Cartan and Jordan projections


def cartan_projection(g: np.ndarray, return_frames: bool = False):
    """Chamber-valued radial part of g in the K exp(a+) K decomposition.

    Parameters
    ----------
    g : np.ndarray
        Element of SL(d,R).
    return_frames : bool
        Also return the left/right singular frames (kappa1, kappa2) and a
        regularity flag.  The frames are only meaningful when the
        singular-value gaps exceed REGULAR_MARGIN.

    Returns
    -------
    np.ndarray or (np.ndarray, np.ndarray, np.ndarray, bool)
        mu(g) = nonincreasing logs of singular values (trace-zero), and
        optionally (mu, kappa1, kappa2, regular).
    """
    g = check_group_element(g)
    mu = batched_cartan(g[None])[0][0]
    if not return_frames:
        return mu
    u, _, vt = la.svd(g)
    regular = bool(np.min(-np.diff(mu)) > REGULAR_MARGIN) if len(mu) > 1 else True
    return mu, u, vt.T, regular


def jordan_projection(g: np.ndarray, return_loxodromy: bool = False):
    """Sorted logs of eigenvalue moduli (translation vector of the
    loxodromic part); loxodromic iff all moduli are distinct."""
    g = check_group_element(g)
    lam, margin = batched_jordan(g[None])
    lam = lam[0]
    if not return_loxodromy:
        return lam
    return lam, bool(margin[0] > 0.0)


def symmetric_distance(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Chamber-valued distance a(p,q) = mu(p^-1 q) between orbit points
    p(o), q(o) of the symmetric space."""
    p = check_group_element(p)
    q = check_group_element(q)
    return cartan_projection(la.solve(p, q))


# ---------------------------------------------------------------------------
# Flags


def _fix_column_signs(frame: np.ndarray) -> np.ndarray:
    """Make the first non-negligible entry of each (unit) column positive."""
    d = frame.shape[0]
    out = frame.copy()
    for j in range(d):
        col = out[:, j]
        nz = np.nonzero(np.abs(col) > 1e-10)[0]
        if len(nz) and col[nz[0]] < 0:
            out[:, j] = -col
    return out


def qr_pos(m: np.ndarray):
    """QR factorization with positive-diagonal upper-triangular factor."""
    q, r = la.qr(m)
    diag = np.diag(r).copy()
    if np.any(np.abs(diag) < 1e-300):
        raise DegeneracyError("numerically singular QR factor")
    signs = np.sign(diag)
    return q * signs, r * signs[:, None]


@dataclass(frozen=True)
class Flag:
    """Full flag in R^d as a canonical orthogonal frame.

    The first k columns of ``frame`` span the k-th flag subspace for every k.
    """

    frame: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frame, dtype=float)
        if np.abs(f.T @ f - np.eye(f.shape[0])).max() > 1e-9:
            raise InputError("flag frame is not orthogonal")
        object.__setattr__(self, "frame", f)

    @property
    def dim(self) -> int:
        return self.frame.shape[0]

    @staticmethod
    def from_basis(basis: np.ndarray) -> "Flag":
        """Canonical flag whose k-th subspace is the span of the first k
        basis columns."""
        q, _ = qr_pos(np.asarray(basis, dtype=float))
        return Flag(_fix_column_signs(q))

    def subspace(self, k: int) -> np.ndarray:
        return self.frame[:, :k]


def standard_flag(d: int) -> Flag:
    """The standard flag e+ spanned by the coordinate basis."""
    return Flag(np.eye(d))


def opposite_standard_flag(d: int) -> Flag:
    """e- = w0 . e+, the flag of reversed coordinate subspaces."""
    return flag_action(w0_matrix(d), standard_flag(d))


def flag_action(g: np.ndarray, xi: Flag) -> Flag:
    """Canonical flag of the translated subspaces g . xi."""
    g = check_group_element(g)
    return Flag.from_basis(g @ xi.frame)


def chordal_distance(xi: Flag, eta: Flag) -> float:
    """max over k of the principal-angle gap (spectral norm of the
    difference of orthogonal projectors) between the k-planes."""
    d = xi.dim
    worst = 0.0
    for k in range(1, d):
        x, y = xi.frame[:, :k], eta.frame[:, :k]
        gap = la.svdvals(x @ x.T - y @ y.T)[0]
        worst = max(worst, min(gap, 1.0))
    return worst


@dataclass(frozen=True)
class FlagPair:
    """Ordered pair of flags with its transversality margin.

    The margin is the smallest |det| over k of the k x k pairing between the
    k-plane of xi and the orthocomplement of the (d-k)-plane of eta; it is
    positive exactly on the open G-orbit of pairs in general position.
    """

    xi: Flag
    eta: Flag

    @property
    def transversality_margin(self) -> float:
        d = self.xi.dim
        margin = np.inf
        for k in range(1, d):
            pairing = self.xi.frame[:, :k].T @ self.eta.frame[:, d - k:]
            margin = min(margin, abs(la.det(pairing)))
        return float(margin)


@dataclass(frozen=True)
class HopfPoint:
    """Hopf coordinates (forward flag, backward flag, Cartan-valued time)."""

    xi: Flag
    eta: Flag
    b: np.ndarray

    def __post_init__(self):
        if FlagPair(self.xi, self.eta).transversality_margin <= 0.0:
            raise TransversalityError("Hopf pair is not transversal")
        object.__setattr__(self, "b", check_cartan_vector(self.b))


def visual_flags(g: np.ndarray) -> FlagPair:
    """Forward and backward visual flags (g+, g-) of the chamber through g."""
    g = check_group_element(g)
    plus = Flag.from_basis(g)
    minus = Flag.from_basis(g @ w0_matrix(g.shape[0]))
    return FlagPair(plus, minus)


def attracting_flag(g: np.ndarray) -> Flag:
    """Fixed flag of a loxodromic element, spanned by eigenvectors in
    decreasing order of eigenvalue modulus."""
    g = check_group_element(g)
    vals, vecs = la.eig(g)
    moduli = np.abs(vals)
    order = np.argsort(moduli)[::-1]
    if np.min(-np.diff(np.log(moduli[order]))) <= 0.0:
        raise LoxodromyError("element has repeated eigenvalue moduli")
    basis = vecs[:, order]
    if np.abs(basis.imag).max() > 1e-8:
        # distinct moduli force a real spectrum; residual imaginary parts
        # are numerical noise
        raise LoxodromyError("eigenbasis is not real")
    return Flag.from_basis(basis.real)


# ---------------------------------------------------------------------------
# Iwasawa cocycle, Busemann function, Gromov product


def iwasawa_sigma(g: np.ndarray, xi: Flag) -> np.ndarray:
    """Cartan-valued Iwasawa cocycle sigma(g, xi).

    With k the frame of xi, factor g k = K exp(sigma) N by positive-diagonal
    QR and return the log of the diagonal part.  Satisfies the cocycle
    relation sigma(g1 g2, xi) = sigma(g1, g2 xi) + sigma(g2, xi).
    """
    g = check_group_element(g)
    _, r = qr_pos(g @ xi.frame)
    return np.log(np.diag(r))


def busemann(xi: Flag, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Cartan-valued Busemann cocycle beta_xi(p(o), q(o)).

    Defined as sigma(p^-1, xi) - sigma(q^-1, xi); additive in (p, q) and
    invariant under the simultaneous action on (xi, p, q).
    """
    p = check_group_element(p)
    q = check_group_element(q)
    return iwasawa_sigma(la.inv(p), xi) - iwasawa_sigma(la.inv(q), xi)


def _pair_to_group_element(pair: FlagPair) -> np.ndarray:
    """Solve for g with g+ = xi and g- = eta.

    The j-th column must span the line xi_j intersect eta_{d-j+1}; for a
    transversal pair each intersection is one-dimensional.  The result is
    well defined up to right multiplication by the diagonal torus, which
    leaves the Gromov product unchanged.
    """
    d = pair.xi.dim
    cols = []
    for j in range(1, d + 1):
        # line = null space of (complement of xi_j) + (complement of eta_{d-j+1})
        a = pair.xi.frame[:, j:].T
        b = pair.eta.frame[:, d - j + 1:].T
        stack = np.vstack([a, b]) if a.size or b.size else np.zeros((0, d))
        line = la.null_space(stack)
        if line.shape[1] != 1:
            raise TransversalityError(
                "flag pair intersection is not one-dimensional")
        cols.append(line[:, 0])
    g = np.column_stack(cols)
    det = la.det(g)
    if abs(det) < 1e-300:
        raise TransversalityError("degenerate flag pair")
    if det < 0:
        g[:, 0] = -g[:, 0]
        det = -det
    return g / det ** (1.0 / d)


def gromov_product(pair: FlagPair, via_busemann: bool = False) -> np.ndarray:
    """Cartan-valued Gromov product G(xi, eta) of a transversal flag pair.

    Primary path: for each k, the k-th fundamental weight of G(xi, eta) is
    -log |det(X_k^T Y_k)| with X_k an orthonormal basis of the k-plane of xi
    and Y_k an orthonormal basis of the orthocomplement of the (d-k)-plane
    of eta; the d-1 weight values determine the trace-zero vector.

    Cross-check path (``via_busemann``): solve for g with g+ = xi, g- = eta
    and return beta_{g+}(e, g) + i(beta_{g-}(e, g)).  Both paths agree to
    geometric tolerance; the representation formula is primary because it
    involves no group-element solve.
    """
    d = pair.xi.dim
    if pair.transversality_margin <= TOL_FACTOR:
        raise TransversalityError("flag pair is not transversal")
    if via_busemann:
        g = _pair_to_group_element(pair)
        ginv = la.inv(g)
        beta_plus = -iwasawa_sigma(ginv, pair.xi)
        beta_minus = -iwasawa_sigma(ginv, pair.eta)
        return beta_plus + opposition_involution(beta_minus)
    weights = np.empty(d - 1)
    for k in range(1, d):
        pairing = pair.xi.frame[:, :k].T @ pair.eta.frame[:, d - k:]
        weights[k - 1] = -np.log(abs(la.det(pairing)))
    # invert omega_k(v) = v_1 + ... + v_k with the trace-zero closure
    v = np.empty(d)
    v[0] = weights[0]
    v[1:d - 1] = np.diff(weights)
    v[d - 1] = -weights[d - 2]
    return v


# ---------------------------------------------------------------------------
# Linear forms on the Cartan subspace


@dataclass(frozen=True)
class LinearForm:
    """Linear functional on the Cartan subspace, stored in the gauge
    sum(coefficients) = 0 (forms differing by multiples of (1,...,1) agree
    on trace-zero vectors)."""

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        object.__setattr__(self, "coefficients", c - c.mean())

    def __call__(self, v: np.ndarray) -> float | np.ndarray:
        v = np.asarray(v, dtype=float)
        return v @ self.coefficients

    @property
    def norm(self) -> float:
        """Operator norm on the trace-zero subspace."""
        return float(la.norm(self.coefficients))

    def compose_i(self) -> "LinearForm":
        """The form psi o i, i the opposition involution."""
        return LinearForm(-self.coefficients[::-1])

    def scaled(self, c: float) -> "LinearForm":
        return LinearForm(c * self.coefficients)

    def plus(self, other: "LinearForm") -> "LinearForm":
        return LinearForm(self.coefficients + other.coefficients)


def fundamental_weight(k: int, d: int) -> LinearForm:
    """omega_k(v) = v_1 + ... + v_k (gauge-normalized)."""
    if not 1 <= k <= d - 1:
        raise InputError(f"fundamental weight index {k} out of range for d={d}")
    c = np.zeros(d)
    c[:k] = 1.0
    return LinearForm(c)


def simple_root(i: int, d: int) -> LinearForm:
    """alpha_i(v) = v_i - v_{i+1} (1-based index)."""
    if not 1 <= i <= d - 1:
        raise InputError(f"simple root index {i} out of range for d={d}")
    c = np.zeros(d)
    c[i - 1] = 1.0
    c[i] = -1.0
    return LinearForm(c)


def two_rho(d: int) -> LinearForm:
    """Sum of the positive roots: 2rho(v) = sum_i (d+1-2i) v_i."""
    return LinearForm(np.array([d + 1 - 2 * i for i in range(1, d + 1)], dtype=float))


def simple_root_values(v: np.ndarray) -> np.ndarray:
    """All simple-root values (v_1-v_2, ..., v_{d-1}-v_d) at once."""
    v = np.asarray(v, dtype=float)
    return -np.diff(v, axis=-1)


# ---------------------------------------------------------------------------
# Batched kernels (used by the orbit enumeration layer)
#
# Direct SVD/eigenvalue routines lose the small singular values once the
# condition number e^{mu_1 - mu_d} approaches 1/eps, which happens at modest
# word lengths.  The batched kernels therefore read only the *largest*
# singular value / eigenvalue modulus of each exterior power Lambda^k
# (always accurate to relative precision) and recover the full vector from
# the partial sums omega_k = mu_1 + ... + mu_k.


def compound_matrix(mats: np.ndarray, k: int) -> np.ndarray:
    """k-th exterior power (compound matrix of k x k minors) of a stack of
    d x d matrices; shape (n, C(d,k), C(d,k))."""
    from itertools import combinations

    mats = np.asarray(mats, dtype=float)
    d = mats.shape[-1]
    if k == 1:
        return mats
    rows = list(combinations(range(d), k))
    n = mats.shape[0]
    out = np.empty((n, len(rows), len(rows)))
    for i, ri in enumerate(rows):
        for j, cj in enumerate(rows):
            out[:, i, j] = np.linalg.det(mats[np.ix_(range(n), ri, cj)])
    return out


def _from_partial_sums(omega: np.ndarray) -> np.ndarray:
    """Recover a trace-zero vector from its chamber partial sums
    (omega_1, ..., omega_{d-1})."""
    n, dm1 = omega.shape
    v = np.empty((n, dm1 + 1))
    v[:, 0] = omega[:, 0]
    v[:, 1:dm1] = np.diff(omega, axis=1)
    v[:, dm1] = -omega[:, -1]
    return v


def batched_cartan(mats: np.ndarray, compounds: list[np.ndarray] | None = None):
    """mu, kappa1 frames and regularity margins for a stack of matrices.

    Parameters
    ----------
    mats : np.ndarray of shape (n, d, d)
    compounds : optional list [Lambda^1, ..., Lambda^{d-1}] of precomputed
        compound stacks.  Forming a compound from the entries of a large
        product loses the small minors to cancellation, so callers that
        multiply long words should accumulate the compound products
        representation-by-representation and pass them here.

    Returns
    -------
    (mu, frames, margins): logs of singular values (n, d), sign-canonical
    left singular frames (n, d, d), and min singular-gap margins (n,).
    """
    d = mats.shape[-1]
    if compounds is None:
        compounds = [compound_matrix(mats, k) for k in range(1, d)]
    omega = np.empty((mats.shape[0], d - 1))
    for k in range(1, d):
        s = np.linalg.svd(compounds[k - 1], compute_uv=False)
        omega[:, k - 1] = np.log(s[:, 0])
    mu = _from_partial_sums(omega)
    margins = np.min(-np.diff(mu, axis=1), axis=1)
    u, _, _ = np.linalg.svd(mats)
    # column sign fix: same first-non-negligible-entry rule as Flag.from_basis
    # (columns are unit vectors, so the absolute threshold 1e-10 applies)
    mask = np.abs(u) > 1e-10
    idx = np.argmax(mask, axis=1)
    signs = np.sign(np.take_along_axis(u, idx[:, None, :], axis=1))[:, 0, :]
    frames = u * signs[:, None, :]
    return mu, frames, margins


def batched_jordan(mats: np.ndarray, squarings: int = 14,
                   compounds: list[np.ndarray] | None = None):
    """lambda vectors and loxodromy margins for a stack of matrices.

    Small matrices (sup-norm < 1e3) go through the eigensolver directly.
    For large products the eigensolver loses the spectrum (all eigenvalue
    moduli are exponentially small relative to the norm), so lambda is
    recovered from the growth of the partial sums: with n = 2^(squarings-1),

        lambda_1 + ... + lambda_k  =  (omega_k(g^{2n}) - omega_k(g^n)) / n,

    where omega_k = log of the top singular value of the k-th compound and
    the powers come from renormalized repeated squaring.  The error is
    geometric, O(e^{-gap * n}).  Squaring is only stable when powers do not
    collapse (no catastrophic cancellation); callers with free-group words
    must pass cyclically reduced elements, whose powers are reduced
    concatenations.
    """
    mats = np.asarray(mats, dtype=float)
    n0, d, _ = mats.shape
    lam = np.empty((n0, d))
    small = np.abs(mats).max(axis=(1, 2)) < 1e3
    if small.any():
        vals = np.linalg.eigvals(mats[small])
        lam[small] = np.sort(np.log(np.abs(vals)), axis=1)[:, ::-1]
    big = ~small
    if big.any():
        sums_n = np.empty((int(big.sum()), d - 1))
        sums_2n = np.empty_like(sums_n)
        for k in range(1, d):
            m = compounds[k - 1][big] if compounds is not None \
                else compound_matrix(mats[big], k)
            alpha = np.zeros(len(m))
            half_m = half_alpha = None
            for j in range(squarings):
                scale = np.abs(m).max(axis=(1, 2))
                scale = np.where(scale > 0, scale, 1.0)
                m = m / scale[:, None, None]
                if j == squarings - 1:
                    half_m, half_alpha = m.copy(), alpha + np.log(scale)
                m = m @ m
                alpha = 2.0 * (alpha + np.log(scale))
            top_n = np.linalg.svd(half_m, compute_uv=False)[:, 0]
            top_2n = np.linalg.svd(m, compute_uv=False)[:, 0]
            sums_n[:, k - 1] = np.log(top_n) + half_alpha
            sums_2n[:, k - 1] = np.log(top_2n) + alpha
        n = 2.0 ** (squarings - 1)
        lam[big] = _from_partial_sums((sums_2n - sums_n) / n)
    margins = np.min(-np.diff(lam, axis=1), axis=1)
    return lam, margins
