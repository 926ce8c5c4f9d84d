"""Schottky subgroups of SL(d,R): orbit enumeration and growth estimation.

A preset holds ping-pong generators (random-rotation conjugates of a
regular diagonal raised to a power); ``enumerate_ball`` materializes the
word ball with cached prefix products and batched decompositions.  On top
of the table sit the limit-cone, growth-indicator, critical-exponent and
Poincare-series estimators.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as la

from anosovps import liecore as lc
from anosovps.words import Alphabet, Word


class ResourceError(RuntimeError):
    """Enumeration request exceeds the configured cap."""


class PresetIntegrityError(ValueError):
    """A nonempty word of the preset fails loxodromy/regularity."""


class InsufficientDataError(ValueError):
    """Estimator received too few points."""


DEFAULT_ENUMERATION_CAP = 2_000_000
DEFAULT_CHECK_LENGTH = 6
# word length beyond which prefix products switch to extended precision
COMPENSATION_DEPTH = 20


@dataclass(frozen=True)
class SchottkyPreset:
    """Ping-pong generators for a free subgroup of SL(d,R).

    ``generators[i]`` is the matrix of letter i (letter i^1 is its inverse);
    the stored matrices already include the ping-pong power.
    """

    dim: int
    generators: tuple[np.ndarray, ...]
    pingpong_power: int
    name: str
    seed: int
    loxodromy_threshold: float = 1e-6

    def __post_init__(self):
        if len(self.generators) % 2 or len(self.generators) < 4:
            raise PresetIntegrityError("need an inverse-closed set of >= 4 generators")
        gens = tuple(lc.check_group_element(g) for g in self.generators)
        for i in range(0, len(gens), 2):
            if np.abs(gens[i] @ gens[i + 1] - np.eye(self.dim)).max() > 1e-9:
                raise PresetIntegrityError(f"letters {i},{i+1} are not inverse")
        object.__setattr__(self, "generators", gens)

    @property
    def rank(self) -> int:
        return len(self.generators) // 2

    @property
    def alphabet(self) -> Alphabet:
        return Alphabet(self.rank)

    def validate(self, check_length: int = DEFAULT_CHECK_LENGTH) -> float:
        """Check every nonempty reduced word up to ``check_length`` for
        loxodromy and regularity; returns the worst margin found."""
        table = enumerate_ball(self, check_length, validate=False)
        margins = np.minimum(table.lox_margins[1:], table.regular_margins[1:])
        worst = float(margins.min())
        if worst < self.loxodromy_threshold:
            raise PresetIntegrityError(
                f"word {table.word(1 + int(margins.argmin()))} has margin {worst:.3e}")
        return worst

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "seed": self.seed,
            "pingpong_power": self.pingpong_power,
            "letters": [self.alphabet.letter_to_char(i) for i in range(2 * self.rank)],
            "matrices": [[list(row) for row in g] for g in self.generators],
        }

    @staticmethod
    def from_json(data: dict) -> "SchottkyPreset":
        return SchottkyPreset(
            dim=int(data["dim"]),
            generators=tuple(np.array(m, dtype=float) for m in data["matrices"]),
            pingpong_power=int(data["pingpong_power"]),
            name=str(data["name"]),
            seed=int(data.get("seed", 0)),
        )


def _random_rotation(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = la.qr(rng.normal(size=(d, d)))
    q = q * np.sign(np.diag(r))
    if la.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _build_preset(d: int, spectrum: np.ndarray, power: int, seed: int, name: str,
                  rank: int = 2) -> SchottkyPreset:
    rng = np.random.default_rng(seed)
    base = np.diag(np.exp(spectrum * power))
    gens: list[np.ndarray] = []
    for _ in range(rank):
        rot = _random_rotation(rng, d)
        g = rot @ base @ rot.T
        gens.extend([g, la.inv(g)])
    preset = SchottkyPreset(dim=d, generators=tuple(gens), pingpong_power=power,
                            name=name, seed=seed)
    preset.validate()
    return preset


def default_preset(seed: int = 2, power: int = 3) -> SchottkyPreset:
    """Desk-scale default: rank-2 Schottky subgroup of SL(3,R)."""
    spectrum = np.array([0.7, 0.0, -0.7])
    return _build_preset(3, spectrum, power, seed, f"sl3-rank2-seed{seed}")


def rank_one_preset(seed: int = 0, power: int = 4) -> SchottkyPreset:
    """Rank-one comparison preset: rank-2 Schottky subgroup of SL(2,R)."""
    spectrum = np.array([0.6, -0.6])
    return _build_preset(2, spectrum, power, seed, f"sl2-rank2-seed{seed}")


# ---------------------------------------------------------------------------
# Orbit table


@dataclass(frozen=True)
class OrbitEntry:
    word: Word
    matrix: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    flag_plus: lc.Flag
    word_len: int


@dataclass
class OrbitTable:
    """All elements of the word ball of radius L, in length-lex order.

    Row 0 is the identity.  Columns are parallel arrays; ``letters`` holds
    the reduced words as int8 rows padded with -1.
    """

    preset: SchottkyPreset
    L: int
    letters: np.ndarray          # (N, L) int8, padded with -1
    word_len: np.ndarray         # (N,)
    mats: np.ndarray             # (N, d, d)
    mu: np.ndarray               # (N, d)
    lam: np.ndarray              # (N, d)
    frames: np.ndarray           # (N, d, d) kappa1 frames, sign-canonical
    regular_margins: np.ndarray  # (N,) min singular-gap of mu
    lox_margins: np.ndarray      # (N,) min gap of lam
    _index: Optional[dict] = field(default=None, repr=False)
    _inverse_row: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.word_len)

    def word(self, i: int) -> Word:
        row = self.letters[i]
        return Word(self.preset.alphabet, tuple(int(x) for x in row[row >= 0]))

    def entry(self, i: int) -> OrbitEntry:
        return OrbitEntry(self.word(i), self.mats[i], self.mu[i], self.lam[i],
                          lc.Flag(self.frames[i]), int(self.word_len[i]))

    def flag(self, i: int) -> lc.Flag:
        return lc.Flag(self.frames[i])

    @property
    def index(self) -> dict:
        """Word bytes -> row index."""
        if self._index is None:
            keys = [bytes(row[row >= 0].astype(np.uint8)) for row in self.letters]
            self._index = dict(zip(keys, range(len(keys))))
        return self._index

    def row_of(self, word: Word) -> int:
        key = bytes(bytearray(word.letters))
        try:
            return self.index[key]
        except KeyError:
            raise KeyError(f"word {word} not in table (L={self.L})") from None

    @property
    def inverse_row(self) -> np.ndarray:
        """Row index of the inverse of each entry."""
        if self._inverse_row is None:
            idx = self.index
            rows = np.empty(len(self), dtype=np.int64)
            for i, row in enumerate(self.letters):
                w = row[row >= 0]
                rows[i] = idx[bytes((w[::-1] ^ 1).astype(np.uint8))]
            self._inverse_row = rows
        return self._inverse_row

    def subtable(self, max_len: int) -> "OrbitTable":
        """View of all entries with word length <= max_len (prefix rows,
        valid because rows are length-lex ordered)."""
        if max_len >= self.L:
            return self
        n = int(np.searchsorted(self.word_len, max_len + 1))
        return OrbitTable(self.preset, max_len, self.letters[:n, :max_len],
                          self.word_len[:n], self.mats[:n], self.mu[:n],
                          self.lam[:n], self.frames[:n],
                          self.regular_margins[:n], self.lox_margins[:n])

    def to_csv(self, path: str) -> None:
        d = self.preset.dim
        alphabet = self.preset.alphabet
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["word", "word_len"]
                            + [f"mu_{i+1}" for i in range(d)]
                            + [f"lam_{i+1}" for i in range(d)])
            for i in range(len(self)):
                row = self.letters[i]
                word = "".join(alphabet.letter_to_char(int(x)) for x in row[row >= 0])
                writer.writerow([word, int(self.word_len[i])]
                                + [f"{x:.17g}" for x in self.mu[i]]
                                + [f"{x:.17g}" for x in self.lam[i]])


def _jordan_by_cyclic_core(letters: np.ndarray, word_len: np.ndarray,
                           mats: np.ndarray, index: dict,
                           compounds: list[np.ndarray] | None = None):
    """Jordan projections for a word table, evaluated on cyclic cores.

    lambda is a conjugacy invariant, so each word is first reduced
    cyclically (strip matching first/last inverse pairs); powers of a
    cyclically reduced ping-pong word are reduced concatenations, which
    keeps the squaring kernel of batched_jordan free of catastrophic
    cancellation.  The core of every word in a ball lies in the ball.
    """
    n = len(word_len)
    wl = word_len.astype(np.int64)
    trim = np.zeros(n, dtype=np.int64)
    active = wl >= 3  # length-2 reduced words are cyclically reduced
    for j in range(letters.shape[1] // 2):
        if not active.any():
            break
        last_pos = np.clip(wl - 1 - j, 0, letters.shape[1] - 1)
        last_letter = np.take_along_axis(letters, last_pos[:, None], axis=1)[:, 0]
        cond = active & (letters[:, j] == (last_letter ^ 1)) & (wl - 2 * (j + 1) >= 1)
        trim[cond] += 1
        active = cond & (wl - 2 * (j + 1) >= 3)
    core_rows = np.empty(n, dtype=np.int64)
    for i in range(n):
        t, l = trim[i], wl[i]
        core_rows[i] = index[bytes(letters[i, t:l - t].astype(np.uint8))]
    unique, inverse = np.unique(core_rows, return_inverse=True)
    sub_compounds = None
    if compounds is not None:
        sub_compounds = [c[unique] for c in compounds]
    lam_u, margin_u = lc.batched_jordan(mats[unique], compounds=sub_compounds)
    return lam_u[inverse], margin_u[inverse]


def enumerate_ball(preset: SchottkyPreset, L: int,
                   cap: int = DEFAULT_ENUMERATION_CAP,
                   validate: bool = True) -> OrbitTable:
    """Materialize the word ball of radius L with cached prefix products.

    Deterministic length-lex order; batched SVD/eigenvalue kernels fill the
    mu, lambda and flag columns.  Raises ResourceError when the sphere at L
    exceeds ``cap`` and PresetIntegrityError when a nonempty word fails the
    loxodromy check.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    r = preset.rank
    if (2 * r) * (2 * r - 1) ** (L - 1) > cap:
        raise ResourceError(
            f"sphere at L={L} exceeds enumeration cap {cap}")
    d = preset.dim
    gens = np.stack(preset.generators)
    prod_dtype = np.longdouble if L > COMPENSATION_DEPTH else np.float64

    # prefix products are accumulated in every exterior-power representation:
    # the small minors of a long product are lost to cancellation if the
    # compound is formed from the final d x d entries, but multiplying in
    # the compound representation keeps them to full relative precision
    comp_gens = [gens.astype(prod_dtype)] + [
        lc.compound_matrix(gens, k).astype(prod_dtype) for k in range(2, d)]
    level_words = [np.empty((1, 0), dtype=np.int8)]
    level_comps = [[np.eye(c.shape[-1], dtype=prod_dtype)[None] for c in comp_gens]]
    for ell in range(1, L + 1):
        prev_w = level_words[-1]
        n_prev = len(prev_w)
        if ell == 1:
            parents = np.repeat(np.arange(n_prev), 2 * r)
            letters = np.tile(np.arange(2 * r, dtype=np.int8), n_prev)
        else:
            last = prev_w[:, -1]
            all_letters = np.arange(2 * r, dtype=np.int8)
            keep = all_letters[None, :] != (last[:, None] ^ 1)
            parents = np.repeat(np.arange(n_prev), 2 * r - 1)
            letters = np.broadcast_to(all_letters, keep.shape)[keep]
        new_w = np.concatenate(
            [prev_w[parents], letters[:, None]], axis=1)
        level_words.append(new_w)
        level_comps.append([
            prev[parents] @ cg[letters]
            for prev, cg in zip(level_comps[-1], comp_gens)])

    sizes = [len(w) for w in level_words]
    total = sum(sizes)
    letters = np.full((total, L), -1, dtype=np.int8)
    word_len = np.empty(total, dtype=np.int32)
    compounds = [np.empty((total, c.shape[-1], c.shape[-1])) for c in comp_gens]
    pos = 0
    for ell, (w, comps) in enumerate(zip(level_words, level_comps)):
        n = len(w)
        letters[pos:pos + n, :ell] = w
        word_len[pos:pos + n] = ell
        for k, c in enumerate(comps):
            compounds[k][pos:pos + n] = np.asarray(c, dtype=np.float64)
        pos += n
    mats = compounds[0]

    mu, frames, regular_margins = lc.batched_cartan(mats, compounds=compounds)
    index = {bytes(row[row >= 0].astype(np.uint8)): i
             for i, row in enumerate(letters)}
    lam, lox_margins = _jordan_by_cyclic_core(letters, word_len, mats, index,
                                              compounds=compounds)
    table = OrbitTable(preset, L, letters, word_len, mats, mu, lam, frames,
                       regular_margins, lox_margins, _index=index)
    if validate and len(table) > 1:
        worst = float(table.lox_margins[1:].min())
        if worst < preset.loxodromy_threshold:
            bad = 1 + int(table.lox_margins[1:].argmin())
            raise PresetIntegrityError(
                f"word {table.word(bad)} not loxodromic (margin {worst:.3e})")
    return table


# ---------------------------------------------------------------------------
# Limit cone


@dataclass(frozen=True)
class ConeEstimate:
    """Sampled limit-cone data: unit directions of lambda and mu, extreme
    rays of their hull, and the distance of the cloud to the chamber walls."""

    directions: np.ndarray   # (n, d) unit vectors
    hull: np.ndarray         # (h, d) extreme rays
    wall_margin: float


def _unit_rows(v: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(v, axis=1)
    keep = norms > 1e-12
    return v[keep] / norms[keep][:, None]


def _extreme_rays(directions: np.ndarray) -> np.ndarray:
    """Extreme rays of the cone hull of a set of unit directions.

    Projects onto an orthonormal basis of the trace-zero subspace and takes
    the convex hull of the projected points together with the origin; the
    non-origin hull vertices span the extreme rays.
    """
    d = directions.shape[1]
    basis = la.null_space(np.ones((1, d)))  # (d, d-1)
    pts = directions @ basis
    if d == 2:
        return directions[[pts[:, 0].argmin(), pts[:, 0].argmax()]]
    from scipy.spatial import ConvexHull

    cloud = np.vstack([np.zeros((1, d - 1)), pts])
    hull = ConvexHull(cloud, qhull_options="QJ")
    vertices = [v for v in hull.vertices if v != 0]
    return directions[np.array(vertices) - 1]


def limit_cone_estimate(table: OrbitTable, min_len: int = 1) -> ConeEstimate:
    """Direction cloud of the Jordan and Cartan projections of all words of
    length >= min_len, with hull rays and the worst simple-root margin."""
    if min_len < 1:
        raise ValueError("min_len must be >= 1")
    sel = table.word_len >= min_len
    if not np.any(sel):
        raise InsufficientDataError("no words above min_len")
    directions = np.vstack([_unit_rows(table.lam[sel]), _unit_rows(table.mu[sel])])
    hull = _extreme_rays(directions)
    wall_margin = float(lc.simple_root_values(directions).min())
    return ConeEstimate(directions, hull, wall_margin)


# ---------------------------------------------------------------------------
# Growth indicator, critical exponent, Poincare series


@dataclass(frozen=True)
class SlopeEstimate:
    slope: float
    stderr: float
    upper: float             # Legendre-type upper estimate
    count_curve: np.ndarray  # (n, 2) of (T, log count)


def _count_slope(values: np.ndarray, top_fraction: float = 0.6) -> SlopeEstimate:
    """Least-squares slope of log #{t <= T} against T over the top part of
    the range, plus the max-ratio (Legendre-type) upper estimate."""
    t = np.sort(values)
    n = len(t)
    if n < 10:
        raise InsufficientDataError(f"only {n} points for slope fit")
    logcount = np.log(np.arange(1, n + 1))
    lo = t[-1] - top_fraction * (t[-1] - t[0])
    sel = t >= lo
    if sel.sum() < 10:
        sel = np.ones(n, dtype=bool)
    x, y = t[sel], logcount[sel]
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope = float(coef[0])
    dof = max(len(x) - 2, 1)
    resid = y - A @ coef
    sxx = np.sum((x - x.mean()) ** 2)
    stderr = float(np.sqrt(resid @ resid / dof / max(sxx, 1e-300)))
    positive = t > max(t[0], 1e-9)
    upper = float(np.max(logcount[positive] / t[positive])) if positive.any() else slope
    return SlopeEstimate(slope, stderr, upper, np.column_stack([t, logcount]))


def growth_indicator_estimate(table: OrbitTable, u: np.ndarray, theta: float,
                              min_len: int = 1) -> SlopeEstimate | float:
    """Growth rate of orbit points whose mu-direction lies within angle
    theta of the unit direction u; -inf sentinel for an empty cone."""
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    if theta <= 0:
        raise ValueError("theta must be > 0")
    sel = table.word_len >= min_len
    mu = table.mu[sel]
    norms = np.linalg.norm(mu, axis=1)
    ok = norms > 1e-12
    mu, norms = mu[ok], norms[ok]
    cosang = np.clip((mu / norms[:, None]) @ u, -1.0, 1.0)
    inside = np.arccos(cosang) <= theta
    if inside.sum() == 0:
        return -np.inf
    if inside.sum() < 10:
        raise InsufficientDataError("fewer than 10 orbit points in cone")
    return _count_slope(norms[inside])


def critical_exponent(table: OrbitTable, w: np.ndarray,
                      min_len: int = 1) -> tuple[SlopeEstimate, dict]:
    """Abscissa of the w-weighted Poincare series, estimated as the slope of
    log #{gamma : <w, mu(gamma)> <= T}; diagnostics report partial sums at
    the estimate +- 10%."""
    w = np.asarray(w, dtype=float)
    sel = table.word_len >= min_len
    t = table.mu[sel] @ w
    if np.any(t[table.word_len[sel] >= 1] <= 0):
        raise ValueError("w is not positive on all sampled mu-directions")
    est = _count_slope(t)
    diagnostics = {}
    for s in (0.9 * est.slope, est.slope, 1.1 * est.slope):
        diagnostics[round(s, 12)] = float(np.sum(np.exp(-s * t)))
    return est, diagnostics


def poincare_partial(table: OrbitTable, psi: lc.LinearForm, s: float = 1.0):
    """Partial Poincare sum sum_gamma e^{-s psi(mu(gamma))} over the table,
    with per-shell subtotals; +inf sentinel (with the offending shell) on
    overflow."""
    exponents = -s * psi(table.mu)
    shells = []
    total = 0.0
    for ell in range(0, table.L + 1):
        sub = np.exp(exponents[table.word_len == ell])
        if not np.all(np.isfinite(sub)):
            return np.inf, shells, ell
        shell_sum = float(sub.sum())
        shells.append(shell_sum)
        total += shell_sum
    return total, shells, None


def regularity_margin(table: OrbitTable) -> float:
    """min over long words (|gamma| >= L/2) of the smallest simple-root
    value of mu(gamma)/|mu(gamma)|; positive margins certify that the
    sampled cone avoids the chamber walls."""
    sel = table.word_len >= max(1, table.L // 2)
    mu = table.mu[sel]
    norms = np.linalg.norm(mu, axis=1)
    return float((lc.simple_root_values(mu).min(axis=1) / norms).min())
