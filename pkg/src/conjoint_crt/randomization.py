"""Design randomization and the resamplers used by each CRT variant.

The randomization scheme mirrors how profiles were generated in the
experiment: every profile factor has a marginal distribution over its
levels, and restriction rules reshape that marginal conditionally on the
value of another factor (e.g. reason = persecution limits country of
origin).  Factors are drawn in schema order with each restricted factor's
marginal renormalized over the allowed set, so rules must condition on
factors declared earlier.

All resamplers are pure functions of (dataset, scheme, master_seed, b):
resample b reproduces bit-identically no matter how many workers run or in
which order, which the parallel CRT engine relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import (
    PROFILE,
    ConjointDataset,
    CoarseningSpec,
    Schema,
    ValidationError,
    coarsened_factor_spec,
)

RESAMPLE_KINDS = ("main", "coarsened", "order", "carryover", "fatigue")


@dataclass(frozen=True)
class Restriction:
    """If if_factor's level is in if_levels, then_factor must lie in allowed_levels."""

    if_factor: str
    if_levels: tuple[str, ...]
    then_factor: str
    allowed_levels: tuple[str, ...]


@dataclass(frozen=True)
class RandomizationScheme:
    """Known P(profiles) used by the experiment.

    marginals maps factor name -> probability vector over its levels.
    Factors without an entry are uniform.
    """

    marginals: dict[str, tuple[float, ...]]
    restrictions: tuple[Restriction, ...] = ()

    def validate(self, schema: Schema) -> None:
        names = [f.name for f in schema.profile_factors]
        for name, probs in self.marginals.items():
            if name not in names:
                raise ValidationError(f"marginal for unknown factor {name!r}")
            f = schema[name]
            if len(probs) != f.n_levels:
                raise ValidationError(f"marginal length mismatch for {name!r}")
            if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
                raise ValidationError(f"marginal for {name!r} does not sum to 1")
        for rule in self.restrictions:
            for fac in (rule.if_factor, rule.then_factor):
                if fac not in names:
                    raise ValidationError(f"restriction references unknown factor {fac!r}")
            if names.index(rule.if_factor) >= names.index(rule.then_factor):
                raise ValidationError(
                    f"restriction on {rule.then_factor!r} must condition on an "
                    "earlier-declared factor")
            f_if = schema[rule.if_factor]
            f_then = schema[rule.then_factor]
            for lv in rule.if_levels:
                f_if.code_of(lv)
            allowed = [f_then.code_of(lv) for lv in rule.allowed_levels]
            if not allowed:
                raise ValidationError("restriction with empty allowed set")

    def marginal(self, schema: Schema, name: str) -> np.ndarray:
        f = schema[name]
        if name in self.marginals:
            return np.asarray(self.marginals[name], dtype=float)
        return np.full(f.n_levels, 1.0 / f.n_levels)

    def rules_for(self, name: str) -> list[Restriction]:
        return [r for r in self.restrictions if r.then_factor == name]


@dataclass(frozen=True)
class ResamplePlan:
    """How many resamples to draw and for which CRT variant."""

    kind: str = "main"
    B: int = 400
    master_seed: int = 0

    def __post_init__(self):
        if self.kind not in RESAMPLE_KINDS:
            raise ValidationError(f"unknown resample kind {self.kind!r}")
        if self.B < 1:
            raise ValidationError("B must be >= 1")


def rng_for(master_seed: int, tag: str, b: int) -> np.random.Generator:
    """Deterministic per-resample stream, independent of execution order."""
    tag_key = int.from_bytes(tag.encode()[:8].ljust(8, b"\0"), "little")
    seq = np.random.SeedSequence(entropy=int(master_seed) & (2**64 - 1),
                                 spawn_key=(tag_key, int(b) & (2**63 - 1)))
    return np.random.default_rng(seq)


def _allowed_matrix(scheme: RandomizationScheme, schema: Schema, name: str,
                    profiles: np.ndarray) -> np.ndarray:
    """(n_rows, K) boolean matrix of allowed levels for `name` per row.

    Conditioning values are read from `profiles`, which must already hold
    the (re)drawn values of factors declared before `name`.
    """
    f = schema[name]
    n = profiles.shape[0]
    ok = np.ones((n, f.n_levels), dtype=bool)
    names = [fa.name for fa in schema.profile_factors]
    for rule in scheme.rules_for(name):
        if_col = names.index(rule.if_factor)
        if_codes = [schema[rule.if_factor].code_of(lv) for lv in rule.if_levels]
        hit = np.isin(profiles[:, if_col], if_codes)
        allowed = np.zeros(f.n_levels, dtype=bool)
        for lv in rule.allowed_levels:
            allowed[f.code_of(lv)] = True
        ok[hit] &= allowed
    return ok


def _draw_factor(rng: np.random.Generator, scheme: RandomizationScheme,
                 schema: Schema, name: str, profiles: np.ndarray) -> np.ndarray:
    """Draw one factor for every row from its renormalized conditional."""
    probs = scheme.marginal(schema, name)
    ok = _allowed_matrix(scheme, schema, name, profiles)
    w = ok * probs
    tot = w.sum(axis=1, keepdims=True)
    if (tot == 0).any():
        raise ValidationError(f"no allowed level for factor {name!r} in some row")
    cum = np.cumsum(w / tot, axis=1)
    u = rng.random(profiles.shape[0])
    return (u[:, None] > cum).sum(axis=1)


def draw_profiles(rng: np.random.Generator, scheme: RandomizationScheme,
                  schema: Schema, n_rows: int) -> np.ndarray:
    """Draw full profiles (one side) for n_rows rows in schema order."""
    p = len(schema.profile_factors)
    out = np.zeros((n_rows, p), dtype=np.int64)
    for j, f in enumerate(schema.profile_factors):
        out[:, j] = _draw_factor(rng, scheme, schema, f.name, out)
    return out


def conditional_probs(scheme: RandomizationScheme, schema: Schema, name: str,
                      profiles: np.ndarray) -> np.ndarray:
    """(n_rows, K) renormalized conditional P(factor | earlier factors)."""
    probs = scheme.marginal(schema, name)
    ok = _allowed_matrix(scheme, schema, name, profiles)
    w = ok * probs
    tot = w.sum(axis=1, keepdims=True)
    if (tot == 0).any():
        raise ValidationError(f"no allowed level for factor {name!r} in some row")
    return w / tot


# ---------------------------------------------------------------------------
# Exact conditional law of the target factors given everything else
# ---------------------------------------------------------------------------

def target_tuple_weights(scheme: RandomizationScheme, schema: Schema,
                         targets: tuple[str, ...], profiles: np.ndarray
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Per-row probabilities of every target-level combination given the
    fixed factors.

    Returns (weights, combos): weights is (n_rows, T) and row-normalized;
    combos is (T, q) with the level codes of each combination in target
    order.  The weight of a combination multiplies the chain conditionals
    of the targets with the likelihood of any fixed factor whose
    restriction conditions on a target, so restrictions pointing either
    way are honored.
    """
    names = [f.name for f in schema.profile_factors]
    tcols = [names.index(t) for t in targets]
    sizes = [schema[t].n_levels for t in targets]
    grids = np.meshgrid(*[np.arange(k) for k in sizes], indexing="ij")
    combos = np.stack([g.ravel() for g in grids], axis=-1)

    affected_fixed = [
        f.name for f in schema.profile_factors
        if f.name not in targets
        and any(r.if_factor in targets for r in scheme.rules_for(f.name))
    ]
    n = profiles.shape[0]
    weights = np.empty((n, len(combos)))
    for c_idx, combo in enumerate(combos):
        prof = np.array(profiles)
        for col, code in zip(tcols, combo):
            prof[:, col] = code
        w = np.ones(n)
        for t, code in zip(targets, combo):
            w *= conditional_probs(scheme, schema, t, prof)[:, code]
        for g in affected_fixed:
            obs = profiles[:, names.index(g)]
            pg = conditional_probs(scheme, schema, g, prof)
            w *= pg[np.arange(n), obs]
        weights[:, c_idx] = w
    tot = weights.sum(axis=1, keepdims=True)
    if (tot == 0).any():
        raise ValidationError("some row admits no target combination under the scheme")
    return weights / tot, combos


def _categorical_rows(rng: np.random.Generator, weights: np.ndarray) -> np.ndarray:
    """Draw one index per row from row-wise categorical weights."""
    cum = np.cumsum(weights, axis=1)
    u = rng.random(weights.shape[0])
    return np.minimum((u[:, None] > cum).sum(axis=1), weights.shape[1] - 1)


# ---------------------------------------------------------------------------
# CRT resamplers
# ---------------------------------------------------------------------------

def sample_x_given_z(ds: ConjointDataset, scheme: RandomizationScheme,
                     b: int, seed: int) -> ConjointDataset:
    """Redraw every target-factor column of both profiles from P(X | Z).

    Z, covariates and responses are held fixed; the draw is exact under the
    scheme's chain law whatever direction the restrictions point.
    """
    if not ds.target_factors:
        raise ValidationError("dataset has no target factors to resample")
    rng = rng_for(seed, "main", b)
    names = [f.name for f in ds.schema.profile_factors]
    tcols = [names.index(t) for t in ds.target_factors]
    new_sides = []
    for side in (ds.profiles_left, ds.profiles_right):
        prof = np.array(side)
        weights, combos = target_tuple_weights(
            scheme, ds.schema, ds.target_factors, prof)
        draw = _categorical_rows(rng, weights)
        for q, col in enumerate(tcols):
            prof[:, col] = combos[draw, q]
        new_sides.append(prof)
    return ds.with_profiles(*new_sides)


def coarsened_pushforward(scheme: RandomizationScheme, schema: Schema,
                          spec: CoarseningSpec, profiles: np.ndarray
                          ) -> tuple[np.ndarray, list[int]]:
    """Per-row pushforward of P(X | Z) onto the tested group's coarsened
    levels, renormalized within the group.

    `schema` and `profiles` refer to the original (pre-coarsening) data;
    only the fixed factors' observed values matter.
    """
    new_factor = coarsened_factor_spec(spec, schema)
    group_codes = [k for k, lv in enumerate(new_factor.levels)
                   if spec.group_of(lv) == spec.tested_group]
    if not group_codes:
        raise ValidationError(f"tested group {spec.tested_group!r} has no levels")
    weights, combos = target_tuple_weights(scheme, schema, spec.factors, profiles)
    specs = [schema[f] for f in spec.factors]
    push = np.zeros((profiles.shape[0], len(group_codes)))
    for c_idx, combo in enumerate(combos):
        label = spec.coarse_label(tuple(specs[i].levels[c]
                                        for i, c in enumerate(combo)))
        code = new_factor.code_of(label)
        if code in group_codes:
            push[:, group_codes.index(code)] += weights[:, c_idx]
    tot = push.sum(axis=1, keepdims=True)
    out_of_group = tot[:, 0] == 0  # rows that can never hold a group level
    push[out_of_group] = 1.0 / len(group_codes)
    push[~out_of_group] /= tot[~out_of_group]
    return push, group_codes


def sample_coarsened(ds: ConjointDataset, scheme: RandomizationScheme,
                     spec: CoarseningSpec, b: int, seed: int,
                     original: ConjointDataset | None = None) -> ConjointDataset:
    """Redraw coarsened entries within the tested group only.

    `ds` must already be coarsened (single grouped target factor); entries
    whose group differs from tested_group keep their value in every
    resample.  `original` (the pre-coarsening dataset) supplies the Z
    values for restricted conditionals; it defaults to ds, which is correct
    whenever no restriction involves the coarsened factor's conditioning
    factors being coarsened away.
    """
    rng = rng_for(seed, "coarsened", b)
    base = original if original is not None else ds
    if len(ds.target_factors) != 1:
        raise ValidationError("coarsened resampling expects one grouped target factor")
    tcol = ds.factor_column(ds.target_factors[0])
    new_factor = ds.schema[ds.target_factors[0]]
    in_group = np.array([spec.group_of(lv) == spec.tested_group
                         for lv in new_factor.levels])
    if not in_group.any():
        raise ValidationError(f"tested group {spec.tested_group!r} has no levels")

    new_sides = []
    for side_ds, side_base in ((ds.profiles_left, base.profiles_left),
                               (ds.profiles_right, base.profiles_right)):
        prof = np.array(side_ds)
        push, group_codes = coarsened_pushforward(
            scheme, base.schema, spec, np.array(side_base))
        mask = in_group[prof[:, tcol]]
        if mask.any():
            draw = _categorical_rows(rng, push[mask])
            prof[mask, tcol] = np.asarray(group_codes)[draw]
        new_sides.append(prof)
    return ds.with_profiles(*new_sides)


def sample_order_swap(ds: ConjointDataset, b: int, seed: int
                      ) -> tuple[np.ndarray, ConjointDataset]:
    """Swap left/right profiles on a fair-coin row subset E, flipping Y there."""
    rng = rng_for(seed, "order", b)
    e_mask = rng.random(ds.n_rows) < 0.5
    return e_mask, apply_order_swap(ds, e_mask)


def apply_order_swap(ds: ConjointDataset, e_mask: np.ndarray) -> ConjointDataset:
    """The deterministic swap s_E: exchange profile sides and flip Y on rows E."""
    e_mask = np.asarray(e_mask, dtype=bool)
    left = np.array(ds.profiles_left)
    right = np.array(ds.profiles_right)
    left[e_mask], right[e_mask] = ds.profiles_right[e_mask], ds.profiles_left[e_mask]
    y = np.array(ds.y)
    y[e_mask] = 1 - y[e_mask]
    return ds.with_profiles(left, right).with_y(y)


def sample_carryover(ds: ConjointDataset, scheme: RandomizationScheme,
                     b: int, seed: int) -> ConjointDataset:
    """Redraw all factors of odd-numbered tasks from the full design law.

    Even-numbered tasks (and their responses) are untouched.  With odd J
    the final task is dropped from the lag pairing, so it stays fixed too.
    """
    j = ds.tasks_per_respondent
    if j < 2:
        raise ValidationError("carryover test requires J >= 2")
    rng = rng_for(seed, "carryover", b)
    usable = ds.task_order <= j - (j % 2)
    odd = ((ds.task_order % 2) == 1) & usable
    n_odd = int(odd.sum())
    new_sides = []
    for side in (ds.profiles_left, ds.profiles_right):
        prof = np.array(side)
        prof[odd] = draw_profiles(rng, scheme, ds.schema, n_odd)
        new_sides.append(prof)
    return ds.with_profiles(*new_sides)


def sample_fatigue_permutation(ds: ConjointDataset, b: int, seed: int
                               ) -> ConjointDataset:
    """Permute each respondent's task order uniformly; everything else fixed."""
    rng = rng_for(seed, "fatigue", b)
    f = np.array(ds.task_order)
    ids = ds.respondent_ids
    order = np.argsort(ids, kind="stable")
    j = ds.tasks_per_respondent
    for s in range(0, ds.n_rows, j):
        rows = order[s:s + j]
        f[rows] = rng.permutation(j) + 1
    return ds.with_task_order(f)
