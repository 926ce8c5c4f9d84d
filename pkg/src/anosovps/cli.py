"""Batch front-end for orbit tables, estimators, measures and verification.

Subcommands: enumerate, limit-cone, growth, exponent, ps-build, verify,
metric, shadow, essential, myrberg, limitset.  Every command reads an
optional flat key-value config file (``--config``); command-line flags
override file values.  All randomness comes from one generator seeded by
``--seed``; the seed and a hash of the resolved configuration are embedded
in every JSON artifact, and repeated runs are byte-identical.

Exit codes: 0 success, 1 verification/suite failure, 2 resource limit,
3 missing input.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import scipy.linalg as la

from anosovps import liecore as lc
from anosovps import measure as ms
from anosovps import metrics as mx
from anosovps import orbit
from anosovps.words import (BoundaryWord, Word, WordError,
                            word_shadow_membership)

EXIT_OK = 0
EXIT_SUITE = 1
EXIT_RESOURCE = 2
EXIT_MISSING = 3

TOL_IDENTITY = 1e-8
TOL_POSITIVITY = 1e-9

DEFAULTS = {
    "preset": "default",
    "max_len": 6,
    "psi": "tangent-scan",
    "seed": 0,
    "out": None,
    "suite": "all",
    "cap": orbit.DEFAULT_ENUMERATION_CAP,
    "min_len": 1,
    "radius": 2.0,
    "eps": 0.5,
    "gamma0": "aaa",
    "samples": 30,
    "depth": 32,
    "shell_floor": 0,
    "instances": 200,
    "theta": 0.15,
    "tol": 0.05,
    "targets": 20,
}

_INT_KEYS = {"max_len", "seed", "cap", "min_len", "samples", "depth",
             "shell_floor", "instances", "targets"}
_FLOAT_KEYS = {"radius", "eps", "theta", "tol"}

DEFAULT_OUT = {
    "enumerate": "orbit.csv",
    "limit-cone": "limit_cone.json",
    "growth": "growth.json",
    "exponent": "exponent.json",
    "ps-build": "measure.json",
    "verify": "verify_report.json",
    "metric": "metric.json",
    "shadow": "shadow.json",
    "essential": "essential.json",
    "myrberg": "myrberg.json",
    "limitset": "limitset.csv",
}


class MissingInputError(FileNotFoundError):
    """A required input file does not exist."""


# ---------------------------------------------------------------------------
# Configuration


def read_config_file(path: str) -> dict:
    """Flat key-value file: one ``key = value`` per line, '#' comments."""
    p = Path(path)
    if not p.is_file():
        raise MissingInputError(f"config file not found: {path}")
    values = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, val = line.split("=", 1)
        values[key.strip().replace("-", "_")] = val.strip()
    return values


def _coerce(key: str, value):
    if value is None:
        return None
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    return str(value)


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, config-file values and command-line overrides
    (overrides win), then attach the command and the config hash."""
    file_values = read_config_file(args.config) if args.config else {}
    cfg = {}
    for key, default in DEFAULTS.items():
        value = getattr(args, key, None)
        if value is None:
            value = file_values.get(key, default)
        cfg[key] = _coerce(key, value)
    cfg["command"] = args.command
    digest = hashlib.sha256()
    digest.update(args.command.encode())
    for key in sorted(DEFAULTS):
        if key == "out":    # the output path is not part of the computation
            continue
        digest.update(f"\n{key}={cfg[key]}".encode())
    cfg["config_hash"] = digest.hexdigest()[:16]
    return cfg


def load_preset(spec: str) -> orbit.SchottkyPreset:
    """Built-in preset by name, or a preset JSON file (validated)."""
    if spec == "default":
        return orbit.default_preset()
    if spec == "rank-one":
        return orbit.rank_one_preset()
    path = Path(spec)
    if not path.is_file():
        raise MissingInputError(f"preset file not found: {spec}")
    preset = orbit.SchottkyPreset.from_json(json.loads(path.read_text()))
    preset.validate()
    return preset


def parse_psi(spec: str, table: orbit.OrbitTable) -> lc.LinearForm:
    """Linear form from comma-separated coefficients, or the fitted tangent
    form (sum of fundamental weights scaled to critical exponent 1)."""
    if spec == "tangent-scan":
        return tangent_form(table)
    coeffs = np.array([float(x) for x in spec.split(",")], dtype=float)
    if len(coeffs) != table.preset.dim:
        raise lc.InputError(
            f"psi needs {table.preset.dim} coefficients, got {len(coeffs)}")
    return lc.LinearForm(coeffs)


def tangent_form(table: orbit.OrbitTable) -> lc.LinearForm:
    """Sum of the fundamental weights, rescaled so its critical exponent
    over the table is 1 (the tangent weighting of the orbital sum)."""
    d = table.preset.dim
    base = lc.fundamental_weight(1, d)
    for k in range(2, d):
        base = base.plus(lc.fundamental_weight(k, d))
    est, _ = orbit.critical_exponent(table, base.coefficients)
    return base.scaled(est.slope)


def _write_json(path: str, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _stamp(cfg: dict) -> dict:
    return {"command": cfg["command"], "seed": cfg["seed"],
            "config_hash": cfg["config_hash"]}


def _random_sl(rng: np.random.Generator, d: int, scale: float = 1.0) -> np.ndarray:
    g = rng.normal(scale=scale, size=(d, d))
    if la.det(g) < 0:
        g[:, [0, 1]] = g[:, [1, 0]]
    return g / la.det(g) ** (1.0 / d)


def _random_rotation(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = la.qr(rng.normal(size=(d, d)))
    q = q * np.sign(np.diag(r))
    if la.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _random_flag(rng: np.random.Generator, d: int) -> lc.Flag:
    return lc.Flag.from_basis(_random_sl(rng, d))


# ---------------------------------------------------------------------------
# Length-lex row arithmetic (used by the exhaustive additivity suite)


def ball_row_indices(letters: np.ndarray, lengths: np.ndarray,
                     alphabet_size: int) -> np.ndarray:
    """Row index in a length-lex ball table of each reduced word.

    Words are given as left-aligned letter rows; the table order is the one
    produced by the ball enumeration (by length, then lexicographic with
    the reduced-word letter ranking), so the index is pure arithmetic.
    """
    s = alphabet_size
    lengths = np.asarray(lengths, dtype=np.int64)
    out = np.zeros(len(lengths), dtype=np.int64)
    lmax = int(lengths.max(initial=0))
    base = np.zeros(lmax + 1, dtype=np.int64)
    size = 1
    for ell in range(1, lmax + 1):
        base[ell] = base[ell - 1] + size
        size = s * (s - 1) ** (ell - 1)
    for ell in np.unique(lengths):
        ell = int(ell)
        if ell == 0:
            continue
        rows = lengths == ell
        w = letters[rows, :ell].astype(np.int64)
        pos = w[:, 0] * (s - 1) ** (ell - 1)
        for j in range(1, ell):
            rank = w[:, j] - (w[:, j] > (w[:, j - 1] ^ 1))
            pos += rank * (s - 1) ** (ell - 1 - j)
        out[rows] = base[ell] + pos
    return out


def almost_additivity_defect(table: orbit.OrbitTable) -> tuple[float, dict]:
    """Max of ||mu(g1 g2) - mu(g1) - mu(g2)|| over every no-cancellation
    pair whose product lies in the table (= every split of every word)."""
    s = 2 * table.preset.rank
    wl = table.word_len.astype(np.int64)
    worst, witness = 0.0, {}
    for k in range(1, table.L):
        sel = np.flatnonzero(wl > k)
        if len(sel) == 0:
            continue
        pre_idx = ball_row_indices(table.letters[sel],
                                   np.full(len(sel), k, dtype=np.int64), s)
        suf_idx = ball_row_indices(table.letters[sel][:, k:], wl[sel] - k, s)
        defect = np.abs(table.mu[sel] - table.mu[pre_idx]
                        - table.mu[suf_idx]).max(axis=1)
        i = int(defect.argmax())
        if defect[i] > worst:
            worst = float(defect[i])
            witness = {"word": str(table.word(int(sel[i]))), "split": k}
    return worst, witness


# ---------------------------------------------------------------------------
# Verification suites
#
# Each suite returns a report entry {lemma_id, status, hard,
# fitted_constants, witnesses}.  Hard suites decide pass/fail by a pinned
# tolerance; soft suites only annotate fitted constants and stability.


def _entry(lemma_id, hard, ok, constants, witnesses):
    status = ("pass" if ok else "fail") if hard else "info"
    return {"lemma_id": lemma_id, "status": status, "hard": hard,
            "fitted_constants": {k: (None if v is None or not np.isfinite(v)
                                     else float(v))
                                 for k, v in constants.items()},
            "witnesses": witnesses}


def suite_cartan_jordan_involution(preset, table, rng, instances):
    """mu(g^-1) = i(mu(g)) and lam(g^-1) = i(lam(g)) on random elements."""
    d = preset.dim
    worst = 0.0
    for _ in range(instances):
        g = _random_sl(rng, d)
        ginv = la.inv(g)
        worst = max(worst, float(np.abs(
            lc.cartan_projection(ginv)
            - lc.opposition_involution(lc.cartan_projection(g))).max()))
        worst = max(worst, float(np.abs(
            lc.jordan_projection(ginv)
            - lc.opposition_involution(lc.jordan_projection(g))).max()))
    return _entry("projection-involution", True, worst <= TOL_IDENTITY,
                  {"max_residual": worst, "tolerance": TOL_IDENTITY},
                  {"instances": instances})


def suite_cocycle_additivity(preset, table, rng, instances):
    """Iwasawa cocycle relation plus Busemann additivity and equivariance."""
    d = preset.dim
    worst = 0.0
    for _ in range(instances):
        g1, g2 = _random_sl(rng, d), _random_sl(rng, d)
        xi = _random_flag(rng, d)
        res = (lc.iwasawa_sigma(g1 @ g2 / la.det(g1 @ g2) ** (1 / d), xi)
               - lc.iwasawa_sigma(g1, lc.flag_action(g2, xi))
               - lc.iwasawa_sigma(g2, xi))
        worst = max(worst, float(np.abs(res).max()))
        p, q, r = (_random_sl(rng, d) for _ in range(3))
        add = (lc.busemann(xi, p, q) + lc.busemann(xi, q, r)
               - lc.busemann(xi, p, r))
        worst = max(worst, float(np.abs(add).max()))
        equi = (lc.busemann(lc.flag_action(g1, xi), g1 @ p, g1 @ q)
                - lc.busemann(xi, p, q))
        worst = max(worst, float(np.abs(equi).max()))
    return _entry("cocycle-additivity", True, worst <= TOL_IDENTITY,
                  {"max_residual": worst, "tolerance": TOL_IDENTITY},
                  {"instances": instances})


def suite_busemann_fixed_points(preset, table, rng, instances):
    """At the fixed flags of a loxodromic g: beta_{y_g}(p, gp) = lam(g) and
    beta_{y_{g^-1}}(p, gp) = -lam(g^-1)."""
    d = preset.dim
    rows = np.flatnonzero((table.word_len >= 1) & (table.word_len <= 2))
    worst = 0.0
    for row in rng.choice(rows, size=min(instances, len(rows) * 8),
                          replace=True):
        # random rotation conjugates keep the instances loxodromic and vary
        # the fixed flags without degrading the eigenproblem conditioning
        h = _random_rotation(rng, d)
        g = h @ table.mats[int(row)] @ h.T
        p = _random_sl(rng, d)
        plus = lc.attracting_flag(g)
        minus = lc.attracting_flag(la.inv(g))
        lam = lc.jordan_projection(g)
        lam_inv = lc.jordan_projection(la.inv(g))
        worst = max(worst, float(np.abs(
            lc.busemann(plus, p, g @ p) - lam).max()))
        worst = max(worst, float(np.abs(
            lc.busemann(minus, p, g @ p) + lam_inv).max()))
    return _entry("busemann-fixed-points", True, worst <= TOL_IDENTITY,
                  {"max_residual": worst, "tolerance": TOL_IDENTITY},
                  {"instances": instances})


def suite_gromov_two_path(preset, table, rng, instances):
    """Representation formula vs Busemann route for the Gromov product,
    the antipodal normalization and the swap symmetry."""
    d = preset.dim
    worst = 0.0
    std = lc.standard_flag(d)
    opp = lc.opposite_standard_flag(d)
    worst = max(worst, float(np.abs(
        lc.gromov_product(lc.FlagPair(std, opp))).max()))
    done = 0
    while done < instances:
        pair = lc.visual_flags(_random_sl(rng, d))
        if pair.transversality_margin < 1e-3:
            continue
        done += 1
        g1 = lc.gromov_product(pair)
        g2 = lc.gromov_product(pair, via_busemann=True)
        worst = max(worst, float(np.abs(g1 - g2).max()))
        swapped = lc.gromov_product(lc.FlagPair(pair.eta, pair.xi))
        worst = max(worst, float(np.abs(
            swapped - lc.opposition_involution(g1)).max()))
    return _entry("gromov-two-path", True, worst <= TOL_IDENTITY,
                  {"max_residual": worst, "tolerance": TOL_IDENTITY},
                  {"instances": instances})


def suite_strong_positivity(preset, table, rng, instances):
    """-psi(a(q,p)) <= psi(beta_xi(p,q)) <= psi(a(p,q)) for every psi that
    is a nonnegative combination of fundamental weights."""
    d = preset.dim
    forms = [lc.fundamental_weight(k, d) for k in range(1, d)] + [lc.two_rho(d)]
    worst = 0.0
    for _ in range(instances):
        p, q = _random_sl(rng, d), _random_sl(rng, d)
        xi = _random_flag(rng, d)
        beta = lc.busemann(xi, p, q)
        a_pq = lc.cartan_projection(la.inv(p) @ q)
        a_qp = lc.cartan_projection(la.inv(q) @ p)
        for psi in forms:
            worst = max(worst, float(psi(beta) - psi(a_pq)),
                        float(-psi(a_qp) - psi(beta)))
    return _entry("strong-positivity", True, worst <= TOL_POSITIVITY,
                  {"max_violation": worst, "tolerance": TOL_POSITIVITY},
                  {"instances": instances, "forms": len(forms)})


def suite_weight_subadditivity(preset, table, rng, instances):
    """omega_k(mu(gh)) <= omega_k(mu(g)) + omega_k(mu(h)) over table pairs."""
    idx = rng.choice(len(table), size=(instances, 2))
    worst = 0.0
    for i, j in idx:
        gh = table.mats[int(i)] @ table.mats[int(j)]
        mu_gh = lc.batched_cartan(gh[None])[0][0]
        gap = np.cumsum(mu_gh - table.mu[int(i)] - table.mu[int(j)])[:-1]
        worst = max(worst, float(gap.max()))
    return _entry("weight-subadditivity", True, worst <= TOL_POSITIVITY,
                  {"max_violation": worst, "tolerance": TOL_POSITIVITY},
                  {"instances": instances})


def suite_almost_additivity(preset, table, rng, instances):
    """Exhaustive no-cancellation defect at L vs L-2."""
    worst, witness = almost_additivity_defect(table)
    prev, _ = almost_additivity_defect(table.subtable(max(2, table.L - 2)))
    ratio = worst / prev if prev > 0 else None
    return _entry("almost-additivity", False, True,
                  {"defect": worst, "defect_shallower": prev,
                   "stability_ratio": ratio}, witness)


def suite_word_length_bound(preset, table, rng, instances):
    """||mu|| against word length: bounded ratio above, positive slope below."""
    wl = table.word_len[1:].astype(float)
    norms = la.norm(table.mu[1:], axis=1)
    upper = float((norms / wl).max())
    coef = np.polyfit(wl, norms, 1)
    return _entry("word-length-bound", False, True,
                  {"upper_ratio": upper, "lower_slope": float(coef[0])},
                  {"rows": len(wl)})


def _strided_table(table, min_len, max_rows):
    sel = np.flatnonzero(table.word_len >= min_len)
    step = max(1, len(sel) // max_rows)
    keep = sel[::step]
    return orbit.OrbitTable(
        table.preset, table.L, table.letters[keep], table.word_len[keep],
        table.mats[keep], table.mu[keep], table.lam[keep], table.frames[keep],
        table.regular_margins[keep], table.lox_margins[keep])


def _nsp_form(d):
    """A dual-cone form that is not a nonnegative weight combination."""
    psi = lc.fundamental_weight(1, d)
    if d > 2:
        psi = psi.plus(lc.fundamental_weight(d - 1, d).scaled(-0.2))
    return psi


def suite_busemann_bounds(preset, table, rng, instances):
    """Two-sided Busemann defect constant for a non-strongly-positive
    dual-cone form, with stability across table depth."""
    psi = _nsp_form(preset.dim)
    _, flags = mx.sample_limit_flags(preset, 12, seed=int(rng.integers(2**31)))
    deep = _strided_table(table, 1, 150)
    shallow = _strided_table(table.subtable(max(2, table.L - 2)), 1, 150)
    up_d, lo_d = mx.busemann_bounds_check(deep, psi, flags)
    up_s, lo_s = mx.busemann_bounds_check(shallow, psi, flags)
    c_deep, c_shallow = max(up_d, lo_d), max(up_s, lo_s)
    ratio = c_deep / c_shallow if c_shallow > 0 else None
    return _entry("busemann-defect-bound", False, True,
                  {"constant": c_deep, "constant_shallower": c_shallow,
                   "stability_ratio": ratio},
                  {"gammas": len(deep), "flags": len(flags)})


def suite_shadow_defect(preset, table, rng, instances):
    """Busemann-vs-Cartan defect ratio kappa over shadow members: fitted on
    half the flag sample, then every member must obey it at 2x slack."""
    r = 2.0
    seed = int(rng.integers(2**31))
    _, flags = mx.sample_limit_flags(preset, 60, seed=seed)
    frames = np.stack([f.frame for f in flags])
    rows = np.flatnonzero((table.word_len >= 2)
                          & (table.word_len <= table.L - 1))
    targets = rows[:: max(1, len(rows) // 6)][:6]
    kappa_half, kappa_full, members = 0.0, 0.0, 0
    worst_witness = {}
    for row in targets:
        g = table.mats[int(row)]
        mask = ms.batched_shadow_mask(frames, g, r)
        if not mask.any():
            continue
        mu = lc.batched_cartan(g[None])[0][0]
        defects = la.norm(ms.batched_busemann(frames[mask], g) - mu,
                          axis=1) / r
        members += int(mask.sum())
        half = defects[: max(1, len(defects) // 2)]
        kappa_half = max(kappa_half, float(half.max()))
        if defects.max() > kappa_full:
            kappa_full = float(defects.max())
            worst_witness = {"gamma": str(table.word(int(row)))}
    ok = members > 0 and kappa_full <= 2.0 * max(kappa_half, 1e-12)
    return _entry("shadow-defect-ratio", True, ok,
                  {"kappa": kappa_full, "kappa_half_sample": kappa_half,
                   "radius": r}, {"members": members, **worst_witness})


def suite_word_shadow_transfer(preset, table, rng, instances):
    """Boundary words in a word shadow O_R(e, gamma) map to flags passing
    within c R of gamma(o); reports the fitted composite c."""
    alphabet = preset.alphabet
    origin = Word(alphabet, ())
    d = preset.dim
    rows = np.flatnonzero(table.word_len == min(3, table.L))[:3]
    worst, checked = 0.0, 0
    for row in rows:
        g_word = table.word(int(row))
        g_mat = table.mats[int(row)]
        for radius in (1, 2):
            for _ in range(4):
                keep = len(g_word) - int(rng.integers(0, radius + 1))
                letters = list(g_word.letters[:keep])
                while len(letters) < 24:
                    options = [l for l in range(2 * preset.rank)
                               if not letters or l != letters[-1] ^ 1]
                    letters.append(int(rng.choice(options)))
                x = BoundaryWord(Word(alphabet, tuple(letters)))
                if not word_shadow_membership(x, origin, g_word, radius):
                    continue
                xi = mx.limit_flag(preset, x)
                res = mx.shadow_membership(
                    xi, mx.ShadowSpec(np.eye(d), g_mat, 1e6))
                worst = max(worst, res.distance / radius)
                checked += 1
    return _entry("word-shadow-transfer", False, True,
                  {"composite_c": worst}, {"checked": checked})


def suite_weak_constants(preset, table, rng, instances):
    """Weak symmetry/ultrametricity defects, with sample-doubling drift."""
    psi = tangent_form(table)
    seed = int(rng.integers(2**31))
    _, flags = mx.sample_limit_flags(preset, 60, seed=seed)
    big = mx.MetricSample.from_flags(flags, psi)
    small = mx.MetricSample.from_flags(flags[:30], psi)
    cs_b, cu_b = mx.weak_constants(big)
    cs_s, cu_s = mx.weak_constants(small)
    return _entry("weak-constants", False, True,
                  {"c_sym": cs_b, "c_ultra": cu_b,
                   "c_sym_half_sample": cs_s, "c_ultra_half_sample": cu_s},
                  {"points": len(big)})


def suite_triangle_constant(preset, table, rng, instances):
    psi = tangent_form(table)
    _, flags = mx.sample_limit_flags(preset, 40,
                                     seed=int(rng.integers(2**31)))
    sample = mx.MetricSample.from_flags(flags, psi)
    n = mx.triangle_constant(sample)
    return _entry("triangle-constant", False, True,
                  {"n": n, "n0": n ** 3}, {"points": len(sample)})


def suite_power_metric(preset, table, rng, instances):
    """Chain power metric at half the admissible exponent: distortion <= 2."""
    psi = tangent_form(table)
    _, flags = mx.sample_limit_flags(preset, 40,
                                     seed=int(rng.integers(2**31)))
    sample = mx.MetricSample.from_flags(flags, psi)
    c = max(mx.weak_constants(sample))
    eps = np.log(np.sqrt(2.0)) / (2.0 * c) if c > 0 else 1.0
    pm = mx.power_metric(sample, eps)
    return _entry("power-metric-distortion", True, pm.distortion <= 2.0,
                  {"eps": eps, "admissible_eps": pm.admissible_eps,
                   "distortion": pm.distortion, "bound": 2.0},
                  {"points": len(sample)})


def suite_covering(preset, table, rng, instances):
    """Greedy disjointification certificate on random virtual-ball families."""
    psi = tangent_form(table)
    _, flags = mx.sample_limit_flags(preset, 40,
                                     seed=int(rng.integers(2**31)))
    sample = mx.MetricSample.from_flags(flags, psi)
    off = sample.pair_values[sample.pair_values > 0]
    scale = float(np.median(off))
    families = max(1, instances // 20)
    dilation = 0.0
    for _ in range(families):
        centers = rng.choice(len(flags), size=12, replace=False)
        radii = rng.uniform(0.3, 2.0, size=12) * scale
        balls = [(flags[int(i)], float(r)) for i, r in zip(centers, radii)]
        result = mx.vitali_cover(balls, sample)  # raises on failure
        dilation = result.dilation
    return _entry("covering-certificate", True, True,
                  {"dilation": dilation, "families": families},
                  {"balls_per_family": 12})


def suite_gromov_comparison(preset, table, rng, instances):
    """Affine envelope between word and flag Gromov products, with
    boundary-depth-doubling drift."""
    psi = tangent_form(table)
    words, _ = mx.sample_limit_flags(preset, 40,
                                     seed=int(rng.integers(2**31)))
    pairs = list(zip(words[:20], words[20:40]))
    c1_a, c2_a = mx.gromov_comparison_fit(table, psi, pairs, depth=16)
    c1_b, c2_b = mx.gromov_comparison_fit(table, psi, pairs, depth=32)
    return _entry("gromov-comparison", False, True,
                  {"c1": c1_b, "c2": c2_b,
                   "c1_half_depth": c1_a, "c2_half_depth": c2_a},
                  {"pairs": len(pairs)})


def suite_conformality(preset, table, rng, instances):
    """Conformal-transformation residual shrinks with table depth for every
    generator (10% slack)."""
    psi = tangent_form(table)
    nu_deep = ms.build_ps(table, psi)
    nu_shallow = ms.build_ps(table.subtable(max(2, table.L - 2)), psi)
    ok = True
    residuals = {}
    for letter in range(2 * preset.rank):
        w = Word(preset.alphabet, (letter,))
        r_deep = ms.conformality_residual(nu_deep, w)
        r_shallow = ms.conformality_residual(nu_shallow, w)
        residuals[f"residual_{w}"] = r_deep
        residuals[f"residual_{w}_shallower"] = r_shallow
        ok = ok and r_deep <= 1.1 * r_shallow
    return _entry("conformality", True, ok, residuals,
                  {"L": table.L, "L_shallower": max(2, table.L - 2)})


def suite_shadow_mass_band(preset, table, rng, instances):
    """nu(O_r(o, gamma o)) e^{psi(mu(gamma))} stays in a bounded band."""
    psi = tangent_form(table)
    nu = ms.build_ps(table, psi)
    rows = np.flatnonzero((table.word_len >= 1)
                          & (table.word_len <= table.L - 3))
    picks = rows[:: max(1, len(rows) // 8)][:8]
    ratios = [ms.shadow_mass_ratio(nu, table.mats[int(i)], 2.0)
              for i in picks]
    positive = [x for x in ratios if x > 0]
    band = (max(positive) / min(positive)) if len(positive) == len(ratios) \
        and positive else np.inf
    return _entry("shadow-mass-band", True, band < 1e3,
                  {"band": band, "bound": 1e3,
                   "max_ratio": max(ratios, default=0.0),
                   "min_ratio": min(ratios, default=0.0)},
                  {"gammas": len(picks), "radius": 2.0})


def suite_hat_invariance(preset, table, rng, instances):
    """Atomwise transport of the horospherical lift preserves mass."""
    psi = tangent_form(table)
    nu = ms.build_ps(table, psi)
    spec = ms.HatMeasureSpec(nu, psi)
    worst = max(ms.hat_mass_defect(spec, Word(preset.alphabet, (letter,)))
                for letter in range(2 * preset.rank))
    return _entry("hat-invariance", True, worst <= TOL_IDENTITY,
                  {"max_defect": worst, "tolerance": TOL_IDENTITY},
                  {"atoms": len(nu)})


def suite_poincare_dichotomy(preset, table, rng, instances):
    """Shell subtotals decay at 1.5x the tangent form, not at the tangent."""
    psi = tangent_form(table)
    ref = max(2, table.L - 4)
    _, shells_tan, _ = orbit.poincare_partial(table, psi, 1.0)
    _, shells_sup, _ = orbit.poincare_partial(table, psi, 1.5)
    decay = shells_sup[-1] < 0.9 * shells_sup[ref] and all(
        shells_sup[i + 1] < shells_sup[i]
        for i in range(ref, table.L))
    nondecay = shells_tan[-1] >= shells_tan[ref]
    return _entry("poincare-dichotomy", True, decay and nondecay,
                  {"tail_ratio_tangent": shells_tan[-1] / shells_tan[ref],
                   "tail_ratio_supercritical": shells_sup[-1] / shells_sup[ref]},
                  {"reference_shell": ref})


def suite_regularity(preset, table, rng, instances):
    """Positive wall margin and exact i-invariance of the direction cloud."""
    cone = orbit.limit_cone_estimate(table)
    margin = orbit.regularity_margin(table)
    inv = table.inverse_row
    flip = np.abs(table.mu[inv]
                  - lc.opposition_involution(table.mu)).max()
    ok = cone.wall_margin > 0 and margin > 0 and flip <= TOL_IDENTITY
    return _entry("regularity-limit-cone", True, ok,
                  {"wall_margin": cone.wall_margin,
                   "deep_margin": margin,
                   "involution_residual": float(flip)},
                  {"directions": len(cone.directions)})


SUITES = [
    ("projection-involution", suite_cartan_jordan_involution),
    ("cocycle-additivity", suite_cocycle_additivity),
    ("busemann-fixed-points", suite_busemann_fixed_points),
    ("gromov-two-path", suite_gromov_two_path),
    ("strong-positivity", suite_strong_positivity),
    ("weight-subadditivity", suite_weight_subadditivity),
    ("almost-additivity", suite_almost_additivity),
    ("word-length-bound", suite_word_length_bound),
    ("busemann-defect-bound", suite_busemann_bounds),
    ("shadow-defect-ratio", suite_shadow_defect),
    ("word-shadow-transfer", suite_word_shadow_transfer),
    ("weak-constants", suite_weak_constants),
    ("triangle-constant", suite_triangle_constant),
    ("power-metric-distortion", suite_power_metric),
    ("covering-certificate", suite_covering),
    ("gromov-comparison", suite_gromov_comparison),
    ("conformality", suite_conformality),
    ("shadow-mass-band", suite_shadow_mass_band),
    ("hat-invariance", suite_hat_invariance),
    ("poincare-dichotomy", suite_poincare_dichotomy),
    ("regularity-limit-cone", suite_regularity),
]

IDENTITY_SUITES = ("projection-involution", "cocycle-additivity",
                   "busemann-fixed-points", "gromov-two-path")


def _select_suites(spec: str) -> list:
    names = [s.strip() for part in spec.split(",") for s in [part] if s.strip()]
    if "all" in names:
        return SUITES
    wanted = set()
    for name in names:
        if name == "identities":
            wanted.update(IDENTITY_SUITES)
        else:
            wanted.add(name)
    known = {lemma_id for lemma_id, _ in SUITES}
    unknown = wanted - known
    if unknown:
        raise lc.InputError(f"unknown suite(s): {sorted(unknown)}")
    return [(lemma_id, fn) for lemma_id, fn in SUITES if lemma_id in wanted]


# ---------------------------------------------------------------------------
# Commands


def cmd_enumerate(cfg):
    preset = load_preset(cfg["preset"])
    table = orbit.enumerate_ball(preset, cfg["max_len"], cap=cfg["cap"])
    table.to_csv(cfg["out"])
    return EXIT_OK


def cmd_limit_cone(cfg):
    preset = load_preset(cfg["preset"])
    table = orbit.enumerate_ball(preset, cfg["max_len"], cap=cfg["cap"])
    cone = orbit.limit_cone_estimate(table, cfg["min_len"])
    payload = {
        **_stamp(cfg), "preset": preset.name, "L": table.L,
        "wall_margin": cone.wall_margin,
        "deep_margin": orbit.regularity_margin(table),
        "n_directions": len(cone.directions),
        "hull_rays": [[float(x) for x in ray] for ray in cone.hull],
    }
    _write_json(cfg["out"], payload)
    return EXIT_OK


def cmd_growth(cfg):
    preset = load_preset(cfg["preset"])
    table = orbit.enumerate_ball(preset, cfg["max_len"], cap=cfg["cap"])
    cone = orbit.limit_cone_estimate(table)
    mean = cone.directions.mean(axis=0)
    mean /= la.norm(mean)
    scan = [mean] + list(cone.hull)
    for a, b in zip(cone.hull, cone.hull[1:]):
        mid = (a + b) / 2.0
        if la.norm(mid) > 1e-9:
            scan.append(mid / la.norm(mid))
    entries = []
    for u in scan:
        try:
            est = orbit.growth_indicator_estimate(table, u, cfg["theta"])
        except orbit.InsufficientDataError:
            est = -np.inf
        if isinstance(est, float):
            entries.append({"direction": [float(x) for x in u],
                            "slope": None, "stderr": None, "upper": None})
        else:
            entries.append({"direction": [float(x) for x in u],
                            "slope": est.slope, "stderr": est.stderr,
                            "upper": est.upper})
    payload = {**_stamp(cfg), "preset": preset.name, "L": table.L,
               "theta": cfg["theta"], "directions": entries}
    _write_json(cfg["out"], payload)
    return EXIT_OK


def cmd_exponent(cfg):
    preset = load_preset(cfg["preset"])
    table = orbit.enumerate_ball(preset, cfg["max_len"], cap=cfg["cap"])
    if cfg["psi"] == "tangent-scan":
        d = preset.dim
        w = lc.fundamental_weight(1, d)
        for k in range(2, d):
            w = w.plus(lc.fundamental_weight(k, d))
        coeffs = w.coefficients
    else:
        coeffs = parse_psi(cfg["psi"], table).coefficients
    est, diagnostics = orbit.critical_exponent(table, coeffs)
    payload = {
        **_stamp(cfg), "preset": preset.name, "L": table.L,
        "w": [float(x) for x in coeffs],
        "slope": est.slope, "stderr": est.stderr, "upper": est.upper,
        "partial_sums": {f"{s:.12g}": v for s, v in diagnostics.items()},
    }
    _write_json(cfg["out"], payload)
    return EXIT_OK


def cmd_ps_build(cfg):
    preset = load_preset(cfg["preset"])
    table = orbit.enumerate_ball(preset, cfg["max_len"], cap=cfg["cap"])
    psi = parse_psi(cfg["psi"], table)
    floor = cfg["shell_floor"] if cfg["shell_floor"] > 0 else None
    nu = ms.build_ps(table, psi, shell_floor=floor)
    payload = {**_stamp(cfg), "measure": nu.to_json()}
    _write_json(cfg["out"], payload)
    return EXIT_OK


def cmd_verify(cfg):
    preset = load_preset(cfg["preset"])
    table = orbit.enumerate_ball(preset, cfg["max_len"], cap=cfg["cap"])
    selected = _select_suites(cfg["suite"])
    order = {lemma_id: i for i, (lemma_id, _) in enumerate(SUITES)}
    entries = []
    for lemma_id, fn in selected:
        rng = np.random.default_rng([cfg["seed"], order[lemma_id]])
        entries.append(fn(preset, table, rng, cfg["instances"]))
    payload = {**_stamp(cfg), "preset": preset.name, "L": table.L,
               "suites": entries}
    _write_json(cfg["out"], payload)
    failed = [e["lemma_id"] for e in entries if e["status"] == "fail"]
    if failed:
        print(f"failed suites: {', '.join(failed)}", file=sys.stderr)
        return EXIT_SUITE
    return EXIT_OK


def cmd_metric(cfg):
    preset = load_preset(cfg["preset"])
    table = orbit.enumerate_ball(preset, cfg["max_len"], cap=cfg["cap"])
    psi = parse_psi(cfg["psi"], table)
    _, flags = mx.sample_limit_flags(preset, cfg["samples"],
                                     depth=cfg["depth"], seed=cfg["seed"])
    sample = mx.MetricSample.from_flags(flags, psi)
    c_sym, c_ultra = mx.weak_constants(sample)
    n = mx.triangle_constant(sample)
    c = max(c_sym, c_ultra)
    eps = np.log(np.sqrt(2.0)) / (2.0 * c) if c > 0 else 1.0
    pm = mx.power_metric(sample, eps)
    payload = {
        **_stamp(cfg), "preset": preset.name, "L": table.L,
        "points": len(sample), "psi": [float(x) for x in psi.coefficients],
        "c_sym": c_sym, "c_ultra": c_ultra, "triangle_n": n,
        "eps": eps, "admissible_eps": pm.admissible_eps,
        "distortion": pm.distortion,
    }
    _write_json(cfg["out"], payload)
    return EXIT_OK


def cmd_shadow(cfg):
    preset = load_preset(cfg["preset"])
    table = orbit.enumerate_ball(preset, cfg["max_len"], cap=cfg["cap"])
    _, flags = mx.sample_limit_flags(preset, cfg["samples"],
                                     depth=cfg["depth"], seed=cfg["seed"])
    frames = np.stack([f.frame for f in flags])
    rows = np.flatnonzero(table.word_len >= max(1, table.L // 2))
    picks = rows[:: max(1, len(rows) // 8)][:8]
    kappa, members, witness = 0.0, 0, None
    for row in picks:
        g = table.mats[int(row)]
        mask = ms.batched_shadow_mask(frames, g, cfg["radius"])
        if not mask.any():
            continue
        mu = lc.batched_cartan(g[None])[0][0]
        defects = la.norm(ms.batched_busemann(frames[mask], g) - mu,
                          axis=1) / cfg["radius"]
        members += int(mask.sum())
        if defects.max() > kappa:
            kappa = float(defects.max())
            witness = str(table.word(int(row)))
    report = mx.constant_report("shadow-defect-ratio", kappa,
                                {"gamma": witness, "radius": cfg["radius"]},
                                members)
    payload = {**_stamp(cfg), "preset": preset.name, "L": table.L, **report}
    _write_json(cfg["out"], payload)
    return EXIT_OK


def cmd_essential(cfg):
    preset = load_preset(cfg["preset"])
    table = orbit.enumerate_ball(preset, cfg["max_len"], cap=cfg["cap"])
    psi = parse_psi(cfg["psi"], table)
    nu = ms.build_ps(table, psi)
    gamma0 = Word.parse(preset.alphabet, cfg["gamma0"])
    outcome = ms.essential_value_search(nu, table, gamma0, cfg["eps"])
    payload = {
        **_stamp(cfg), "preset": preset.name, "L": table.L,
        "found": outcome.found, "tried": outcome.tried,
        "best_deviation": (None if not np.isfinite(outcome.best_deviation)
                           else outcome.best_deviation),
        "certificate": None, "reverified": None,
    }
    if outcome.found:
        payload["certificate"] = outcome.certificate.to_json()
        payload["reverified"] = ms.verify_certificate(
            nu, outcome.certificate, table)
    _write_json(cfg["out"], payload)
    if not outcome.found or not payload["reverified"]:
        return EXIT_SUITE
    return EXIT_OK


def cmd_myrberg(cfg):
    preset = load_preset(cfg["preset"])
    table = orbit.enumerate_ball(preset, cfg["max_len"], cap=cfg["cap"])
    xi0 = mx.limit_flag(preset, "abAB")
    words, flags = mx.sample_limit_flags(preset, 2 * cfg["targets"],
                                         depth=cfg["depth"], seed=cfg["seed"])
    targets = [lc.FlagPair(flags[2 * i], flags[2 * i + 1])
               for i in range(cfg["targets"])]
    score = ms.myrberg_score(xi0, table, targets, cfg["tol"])
    payload = {**_stamp(cfg), "preset": preset.name, "L": table.L,
               "tol": cfg["tol"], "targets": len(targets), "score": score}
    _write_json(cfg["out"], payload)
    return EXIT_OK


def _disk_coordinates(vectors: np.ndarray) -> np.ndarray:
    """Projective first-line cloud flattened to the unit disk: unit vectors
    are folded to the hemisphere around (1,...,1) and projected onto an
    orthonormal basis of its orthocomplement."""
    d = vectors.shape[1]
    ref = np.ones(d) / np.sqrt(d)
    signs = np.sign(vectors @ ref)
    signs[signs == 0] = 1.0
    folded = vectors * signs[:, None]
    basis = la.null_space(ref[None, :])  # (d, d-1), deterministic
    coords = folded @ basis[:, :2]
    if coords.shape[1] < 2:
        coords = np.column_stack([coords, np.zeros(len(coords))])
    return coords


def cmd_limitset(cfg):
    preset = load_preset(cfg["preset"])
    table = orbit.enumerate_ball(preset, cfg["max_len"], cap=cfg["cap"])
    sel = np.flatnonzero(table.word_len >= cfg["min_len"])
    points = _disk_coordinates(table.frames[sel][:, :, 0])
    out = Path(cfg["out"])
    with out.open("w") as fh:
        fh.write("word,x,y\n")
        for i, row in enumerate(sel):
            fh.write(f"{table.word(int(row))},"
                     f"{points[i, 0]:.17g},{points[i, 1]:.17g}\n")
    cone = orbit.limit_cone_estimate(table, max(1, table.L // 2))
    directions = cone.directions
    if len(directions) > 20000:
        directions = directions[:: len(directions) // 20000 + 1]
    basis = la.null_space(np.ones((1, preset.dim)))[:, :2]
    cloud = directions @ basis
    rays = cone.hull @ basis
    if cloud.shape[1] < 2:
        cloud = np.column_stack([cloud, np.zeros(len(cloud))])
        rays = np.column_stack([rays, np.zeros(len(rays))])
    cone_path = out.with_name(out.stem + "_cone" + out.suffix)
    with cone_path.open("w") as fh:
        fh.write("kind,x,y\n")
        for x, y in cloud:
            fh.write(f"direction,{x:.17g},{y:.17g}\n")
        for x, y in rays:
            fh.write(f"ray,{x:.17g},{y:.17g}\n")
    return EXIT_OK


COMMANDS = {
    "enumerate": cmd_enumerate,
    "limit-cone": cmd_limit_cone,
    "growth": cmd_growth,
    "exponent": cmd_exponent,
    "ps-build": cmd_ps_build,
    "verify": cmd_verify,
    "metric": cmd_metric,
    "shadow": cmd_shadow,
    "essential": cmd_essential,
    "myrberg": cmd_myrberg,
    "limitset": cmd_limitset,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key-value config file")
    common.add_argument("--preset",
                        help="'default', 'rank-one' or a preset JSON file")
    common.add_argument("--max-len", dest="max_len", type=int,
                        help="word-ball radius L")
    common.add_argument("--psi",
                        help="comma-separated coefficients or 'tangent-scan'")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--out", help="output file")
    common.add_argument("--suite",
                        help="comma-separated suite selection (verify)")
    common.add_argument("--cap", type=int, help="enumeration size cap")
    common.add_argument("--min-len", dest="min_len", type=int,
                        help="minimum word length for cloud/plot data")
    common.add_argument("--radius", type=float, help="shadow radius")
    common.add_argument("--eps", type=float,
                        help="essential-value tolerance")
    common.add_argument("--gamma0", help="essential-value base word")
    common.add_argument("--samples", type=int,
                        help="number of sampled limit flags")
    common.add_argument("--depth", type=int,
                        help="boundary-word truncation depth")
    common.add_argument("--shell-floor", dest="shell_floor", type=int,
                        help="measure shell floor (0 = auto)")
    common.add_argument("--instances", type=int,
                        help="random instances per verification suite")
    common.add_argument("--theta", type=float, help="growth cone angle")
    common.add_argument("--tol", type=float, help="match tolerance")
    common.add_argument("--targets", type=int,
                        help="number of target pairs")
    parser = argparse.ArgumentParser(
        prog="anosovps",
        description="Orbit tables, limit cones, conformal measures and "
                    "verification suites for Schottky subgroups of SL(d,R).")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if cfg["out"] is None:
            cfg["out"] = DEFAULT_OUT[cfg["command"]]
        return COMMANDS[cfg["command"]](cfg)
    except MissingInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except orbit.ResourceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (orbit.PresetIntegrityError, mx.CoverageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SUITE
    except (lc.InputError, WordError) as exc:
        # invalid parameter values exit 2, matching argparse usage errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
