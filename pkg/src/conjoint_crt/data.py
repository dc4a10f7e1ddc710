"""Dataset model for forced-choice conjoint experiments.

A dataset holds one row per (respondent, task) pair.  Each row carries the
level indices of every randomized profile factor for the left and the right
profile, the respondent covariates (constant within a respondent), the task
order index and the binary response (1 = left profile chosen).

Factor levels are mapped to dense 0-based integer codes in schema order at
load time; all downstream computation works on codes and labels reappear
only at I/O boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd


class ValidationError(ValueError):
    """Raised when input data violates the dataset contract."""


PROFILE = "profile"
RESPONDENT = "respondent"


@dataclass(frozen=True)
class FactorSpec:
    """One randomized factor or respondent covariate.

    levels is the ordered list of labels; its order fixes the integer
    coding.  Numeric respondent covariates carry no level list.
    """

    name: str
    levels: tuple[str, ...] = ()
    kind: str = PROFILE
    numeric: bool = False

    def __post_init__(self):
        if self.kind not in (PROFILE, RESPONDENT):
            raise ValidationError(f"unknown factor kind {self.kind!r}")
        if self.numeric and self.kind != RESPONDENT:
            raise ValidationError(
                f"factor {self.name!r}: numeric flag only allowed on respondent covariates"
            )
        if not self.numeric:
            if len(self.levels) < 2 and self.kind == PROFILE:
                raise ValidationError(f"factor {self.name!r} needs at least 2 levels")
            if len(set(self.levels)) != len(self.levels):
                raise ValidationError(f"factor {self.name!r} has duplicate level labels")

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def code_of(self, label) -> int:
        try:
            return self.levels.index(str(label))
        except ValueError:
            raise ValidationError(
                f"unknown level {label!r} for factor {self.name!r}"
            ) from None


@dataclass(frozen=True)
class Schema:
    """Ordered collection of factor specs; profile factors first is not required."""

    factors: tuple[FactorSpec, ...]

    def __post_init__(self):
        names = [f.name for f in self.factors]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate factor names in schema")

    @property
    def profile_factors(self) -> tuple[FactorSpec, ...]:
        return tuple(f for f in self.factors if f.kind == PROFILE)

    @property
    def covariates(self) -> tuple[FactorSpec, ...]:
        return tuple(f for f in self.factors if f.kind == RESPONDENT)

    def __getitem__(self, name: str) -> FactorSpec:
        for f in self.factors:
            if f.name == name:
                return f
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(f.name == name for f in self.factors)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ConjointDataset:
    """In-memory forced-choice conjoint dataset.

    profiles_left / profiles_right are (nJ, p) integer matrices of level
    codes over all profile factors in schema order.  covariates is an
    (nJ, r) float matrix (numeric covariates standardized, categorical ones
    stored as codes).  The split into factors of interest X and remaining
    factors Z is given by target_factors and realized through the x_left /
    z_left (etc.) views.
    """

    schema: Schema
    profiles_left: np.ndarray
    profiles_right: np.ndarray
    covariates: np.ndarray
    y: np.ndarray
    respondent_ids: np.ndarray
    task_order: np.ndarray
    target_factors: tuple[str, ...] = ()
    n_dropped_respondents: int = 0

    def __post_init__(self):
        for name in ("profiles_left", "profiles_right", "covariates", "y",
                     "respondent_ids", "task_order"):
            object.__setattr__(self, name, _freeze(np.asarray(getattr(self, name))))
        self.validate()

    # -- basic shape ---------------------------------------------------

    @property
    def n_rows(self) -> int:
        return self.y.shape[0]

    @property
    def n_respondents(self) -> int:
        return len(np.unique(self.respondent_ids))

    @property
    def tasks_per_respondent(self) -> int:
        _, counts = np.unique(self.respondent_ids, return_counts=True)
        return int(counts[0])

    @property
    def factor_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.schema.profile_factors)

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.schema.covariates)

    def factor_column(self, name: str) -> int:
        return self.factor_names.index(name)

    # -- X / Z views ---------------------------------------------------

    def _target_cols(self) -> np.ndarray:
        idx = [self.factor_column(t) for t in self.target_factors]
        return np.asarray(idx, dtype=int)

    @property
    def x_left(self) -> np.ndarray:
        return self.profiles_left[:, self._target_cols()]

    @property
    def x_right(self) -> np.ndarray:
        return self.profiles_right[:, self._target_cols()]

    @property
    def z_left(self) -> np.ndarray:
        cols = [i for i in range(len(self.factor_names)) if i not in self._target_cols()]
        return self.profiles_left[:, cols]

    @property
    def z_right(self) -> np.ndarray:
        cols = [i for i in range(len(self.factor_names)) if i not in self._target_cols()]
        return self.profiles_right[:, cols]

    # -- validation ----------------------------------------------------

    def validate(self):
        nj = self.n_rows
        p = len(self.schema.profile_factors)
        if self.profiles_left.shape != (nj, p) or self.profiles_right.shape != (nj, p):
            raise ValidationError("profile matrix shape mismatch")
        if self.covariates.shape[0] != nj:
            raise ValidationError("covariate matrix shape mismatch")
        if not np.isin(self.y, (0, 1)).all():
            raise ValidationError("non-binary response")
        for j, f in enumerate(self.schema.profile_factors):
            for side in (self.profiles_left, self.profiles_right):
                col = side[:, j]
                if nj and (col.min() < 0 or col.max() >= f.n_levels):
                    raise ValidationError(f"level code out of range for factor {f.name!r}")
        for t in self.target_factors:
            if t not in [f.name for f in self.schema.profile_factors]:
                raise ValidationError(f"target factor {t!r} not a profile factor")
        # respondent blocks: equal J, covariates constant, task order 1..J
        _, counts = np.unique(self.respondent_ids, return_counts=True)
        if counts.min() != counts.max():
            raise ValidationError("ragged task counts across respondents")
        j_count = int(counts[0])
        order = np.argsort(self.respondent_ids, kind="stable")
        n_resp = nj // j_count
        if self.covariates.shape[1]:
            blocks = self.covariates[order].reshape(n_resp, j_count, -1)
            if not (blocks == blocks[:, :1, :]).all():
                raise ValidationError("covariate varies within respondent")
        f_blocks = np.sort(self.task_order[order].reshape(n_resp, j_count), axis=1)
        if not (f_blocks == np.arange(1, j_count + 1)).all():
            raise ValidationError("task order is not a permutation of 1..J")

    # -- functional updates (immutable style) ---------------------------

    def with_profiles(self, left: np.ndarray, right: np.ndarray) -> "ConjointDataset":
        return replace(self, profiles_left=left, profiles_right=right)

    def with_y(self, y: np.ndarray) -> "ConjointDataset":
        return replace(self, y=y)

    def with_task_order(self, f: np.ndarray) -> "ConjointDataset":
        return replace(self, task_order=f)


@dataclass(frozen=True)
class CoarseningSpec:
    """Level-grouping maps for the generalized null.

    c_map sends tuples of target-factor level labels to coarsened level
    labels; h_map sends coarsened labels to group identifiers.  Labels
    missing from h_map map to themselves (singleton groups).  tested_group
    names the group whose member levels are compared.
    """

    factors: tuple[str, ...]
    c_map: Mapping[tuple[str, ...], str]
    h_map: Mapping[str, str]
    tested_group: str

    def coarse_label(self, labels: tuple[str, ...]) -> str:
        key = tuple(str(v) for v in labels)
        if key in self.c_map:
            return self.c_map[key]
        if len(key) == 1 and key[0] in {k[0] for k in self.c_map}:
            return self.c_map[(key[0],)]
        raise ValidationError(f"level tuple {key!r} absent from coarsening map")

    def group_of(self, coarse_label: str) -> str:
        return self.h_map.get(coarse_label, coarse_label)

    @staticmethod
    def identity(schema: Schema, factors: Sequence[str], tested_group: str | None = None,
                 h_map: Mapping[str, str] | None = None) -> "CoarseningSpec":
        """Identity c over the product of the given factors' levels."""
        factors = tuple(factors)
        levels = [schema[f].levels for f in factors]
        c_map = {}
        grids = np.meshgrid(*[np.arange(len(l)) for l in levels], indexing="ij")
        for combo in zip(*[g.ravel() for g in grids]):
            key = tuple(levels[i][c] for i, c in enumerate(combo))
            c_map[key] = "|".join(key)
        return CoarseningSpec(factors, c_map, dict(h_map or {}),
                              tested_group or "")


def coarsened_factor_spec(spec: CoarseningSpec, schema: Schema) -> FactorSpec:
    """The single grouped factor that replaces the coarsened target factors."""
    seen: list[str] = []
    for label in spec.c_map.values():
        if label not in seen:
            seen.append(label)
    name = "+".join(spec.factors)
    return FactorSpec(name=name, levels=tuple(seen), kind=PROFILE)


def apply_coarsening(ds: ConjointDataset, spec: CoarseningSpec) -> ConjointDataset:
    """Replace the target factors by their coarsened version (both profiles).

    Returns a new dataset whose single target factor carries the grouped
    levels; Y, Z, covariates, respondent ids and task order are untouched.
    """
    if not spec.factors:
        raise ValidationError("coarsening spec names no factors")
    for f in spec.factors:
        if f not in ds.schema or ds.schema[f].kind != PROFILE:
            raise ValidationError(f"cannot coarsen {f!r}: not a profile factor")
    new_factor = coarsened_factor_spec(spec, ds.schema)
    target_cols = [ds.factor_column(f) for f in spec.factors]

    def recode(profiles: np.ndarray) -> np.ndarray:
        specs = [ds.schema[f] for f in spec.factors]
        if len(target_cols) == 1:
            f0 = specs[0]
            lut = np.array([new_factor.code_of(spec.coarse_label((lv,)))
                            for lv in f0.levels], dtype=np.int64)
            return lut[profiles[:, target_cols[0]]]
        out = np.empty(ds.n_rows, dtype=np.int64)
        for i in range(ds.n_rows):
            labels = tuple(specs[j].levels[profiles[i, c]]
                           for j, c in enumerate(target_cols))
            out[i] = new_factor.code_of(spec.coarse_label(labels))
        return out

    keep = [i for i in range(len(ds.factor_names)) if i not in target_cols]
    new_specs = []
    inserted = False
    for i, f in enumerate(ds.schema.factors):
        if f.kind == PROFILE and f.name in spec.factors:
            if not inserted:
                new_specs.append(new_factor)
                inserted = True
            continue
        new_specs.append(f)
    new_schema = Schema(tuple(new_specs))

    def rebuild(profiles: np.ndarray) -> np.ndarray:
        coarse = recode(profiles)
        cols = []
        pos = 0
        for f in new_schema.profile_factors:
            if f.name == new_factor.name:
                cols.append(coarse)
            else:
                cols.append(profiles[:, keep[pos]])
                pos += 1
        return np.column_stack(cols)

    return ConjointDataset(
        schema=new_schema,
        profiles_left=rebuild(np.asarray(ds.profiles_left)),
        profiles_right=rebuild(np.asarray(ds.profiles_right)),
        covariates=ds.covariates,
        y=ds.y,
        respondent_ids=ds.respondent_ids,
        task_order=ds.task_order,
        target_factors=(new_factor.name,),
        n_dropped_respondents=ds.n_dropped_respondents,
    )


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def load_dataset(csv_path, schema: Schema, targets: Sequence[str] = (),
                 allow_ragged: bool = False) -> ConjointDataset:
    """Read a conjoint CSV into a validated dataset.

    Expects columns respondent_id, task, Y, one `<factor>_L` and
    `<factor>_R` column per profile factor and one column per respondent
    covariate.  Tasks must be contiguous per respondent.  With
    allow_ragged, respondents with fewer tasks than the maximum are
    dropped; otherwise ragged task counts are an error.  Respondents with
    missing covariate values are dropped and counted.
    """
    df = pd.read_csv(csv_path)
    required = ["respondent_id", "task", "Y"]
    for f in schema.profile_factors:
        required += [f"{f.name}_L", f"{f.name}_R"]
    required += [f.name for f in schema.covariates]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise ValidationError(f"missing column(s): {', '.join(missing)}")

    y_check = pd.to_numeric(df["Y"], errors="coerce")
    if y_check.isna().any() or not y_check.isin([0, 1]).all():
        raise ValidationError("non-binary response")

    dropped = 0
    cov_cols = [f.name for f in schema.covariates]
    if cov_cols:
        bad = df[cov_cols].isna().any(axis=1)
        if bad.any():
            bad_ids = set(df.loc[bad, "respondent_id"])
            dropped += len(bad_ids)
            df = df[~df["respondent_id"].isin(bad_ids)].reset_index(drop=True)

    counts = df.groupby("respondent_id", sort=False)["task"].count()
    j_max = int(counts.max())
    if counts.nunique() > 1:
        if not allow_ragged:
            raise ValidationError("ragged task counts across respondents")
        keep = counts[counts == j_max].index
        dropped += int((counts != j_max).sum())
        df = df[df["respondent_id"].isin(keep)].reset_index(drop=True)

    nj = len(df)
    p = len(schema.profile_factors)
    left = np.empty((nj, p), dtype=np.int64)
    right = np.empty((nj, p), dtype=np.int64)
    for j, f in enumerate(schema.profile_factors):
        for side, out in (("L", left), ("R", right)):
            col = df[f"{f.name}_{side}"]
            codes = pd.Categorical(col.astype(str), categories=f.levels).codes
            if (codes < 0).any():
                bad = col[codes < 0].iloc[0]
                raise ValidationError(f"unknown level {bad!r} for factor {f.name!r}")
            out[:, j] = codes

    r = len(schema.covariates)
    cov = np.zeros((nj, r), dtype=np.float64)
    for m, f in enumerate(schema.covariates):
        col = df[f.name]
        if f.numeric:
            vals = pd.to_numeric(col, errors="coerce")
            if vals.isna().any():
                raise ValidationError(f"non-numeric value in covariate {f.name!r}")
            v = vals.to_numpy(dtype=float)
            sd = v.std()
            cov[:, m] = (v - v.mean()) / sd if sd > 0 else 0.0
        else:
            codes = pd.Categorical(col.astype(str), categories=f.levels).codes
            if (codes < 0).any():
                bad = col[codes < 0].iloc[0]
                raise ValidationError(f"unknown level {bad!r} for covariate {f.name!r}")
            cov[:, m] = codes

    # check covariate constancy on the raw (pre-standardization) values
    for rid, gidx in df.groupby("respondent_id", sort=False).groups.items():
        block = df.loc[gidx, cov_cols]
        if len(block) and not (block.nunique() <= 1).all():
            raise ValidationError(
                f"covariate varies within respondent {rid!r}")

    return ConjointDataset(
        schema=schema,
        profiles_left=left,
        profiles_right=right,
        covariates=cov,
        y=pd.to_numeric(df["Y"]).to_numpy(dtype=np.int8),
        respondent_ids=df["respondent_id"].to_numpy(),
        task_order=df["task"].to_numpy(dtype=np.int64),
        target_factors=tuple(targets),
        n_dropped_respondents=dropped,
    )


def save_dataset(ds: ConjointDataset, csv_path) -> None:
    """Write the dataset back to CSV with level labels restored."""
    data = {
        "respondent_id": ds.respondent_ids,
        "task": ds.task_order,
        "Y": ds.y.astype(int),
    }
    for j, f in enumerate(ds.schema.profile_factors):
        labels = np.asarray(f.levels, dtype=object)
        data[f"{f.name}_L"] = labels[ds.profiles_left[:, j]]
        data[f"{f.name}_R"] = labels[ds.profiles_right[:, j]]
    for m, f in enumerate(ds.schema.covariates):
        if f.numeric:
            data[f.name] = ds.covariates[:, m]
        else:
            labels = np.asarray(f.levels, dtype=object)
            data[f.name] = labels[ds.covariates[:, m].astype(int)]
    pd.DataFrame(data).to_csv(csv_path, index=False)
