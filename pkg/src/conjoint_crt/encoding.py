"""Design-matrix construction.

Every profile factor contributes a full one-hot block per side (no baseline
level is dropped; the penalized fits handle the overparameterization, which
keeps results independent of baseline choice).  Interaction features are
never materialized here: the hierarchical lasso forms them blockwise from
the main-effect columns, guided by the block structure recorded on the
matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ConjointDataset, ValidationError
from .randomization import apply_order_swap

LEFT, RIGHT = "L", "R"


@dataclass(frozen=True)
class Column:
    """One design column: which block it belongs to and what it encodes."""

    block: tuple
    factor: str | None = None
    level: int | None = None
    side: str | None = None
    label: str = ""


@dataclass
class DesignMatrix:
    """Dense design matrix plus the block metadata the solver and the test
    statistics navigate by."""

    matrix: np.ndarray
    columns: tuple[Column, ...]
    respondent_ids: np.ndarray
    task_ids: np.ndarray
    augmented: str | None = None

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def block_keys(self) -> list[tuple]:
        seen: list[tuple] = []
        for c in self.columns:
            if c.block not in seen:
                seen.append(c.block)
        return seen

    def block_slice(self, key: tuple) -> slice:
        idx = [i for i, c in enumerate(self.columns) if c.block == key]
        if not idx:
            raise KeyError(f"no block {key!r}")
        if idx != list(range(idx[0], idx[-1] + 1)):
            raise AssertionError("block columns not contiguous")
        return slice(idx[0], idx[-1] + 1)

    def column_index(self, factor: str, level: int, side: str | None) -> int:
        for i, c in enumerate(self.columns):
            if c.factor == factor and c.level == level and c.side == side:
                return i
        raise KeyError((factor, level, side))

    def block_ids(self) -> np.ndarray:
        """Integer block id per column, for the interaction mask."""
        keys = self.block_keys
        lookup = {k: i for i, k in enumerate(keys)}
        return np.array([lookup[c.block] for c in self.columns], dtype=np.int64)

    def interaction_mask(self) -> np.ndarray:
        """Allowed interaction pairs: any two columns from different blocks."""
        ids = self.block_ids()
        return ids[:, None] != ids[None, :]


def _one_hot(codes: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((codes.shape[0], k))
    out[np.arange(codes.shape[0]), codes] = 1.0
    return out


def _profile_blocks(ds: ConjointDataset) -> tuple[list[np.ndarray], list[Column]]:
    mats, cols = [], []
    for side, profs in ((LEFT, ds.profiles_left), (RIGHT, ds.profiles_right)):
        for j, f in enumerate(ds.schema.profile_factors):
            mats.append(_one_hot(profs[:, j], f.n_levels))
            cols += [Column(block=("factor", f.name, side), factor=f.name,
                            level=k, side=side, label=f"{f.name}={f.levels[k]}:{side}")
                     for k in range(f.n_levels)]
    return mats, cols


def _extra_main_blocks(ds: ConjointDataset, extra_mains) -> tuple[list[np.ndarray], list[Column]]:
    mats, cols = [], []
    for fa, fb in extra_mains:
        ka, kb = ds.schema[fa].n_levels, ds.schema[fb].n_levels
        ja, jb = ds.factor_column(fa), ds.factor_column(fb)
        name = f"{fa}*{fb}"
        for side, profs in ((LEFT, ds.profiles_left), (RIGHT, ds.profiles_right)):
            codes = profs[:, ja] * kb + profs[:, jb]
            mats.append(_one_hot(codes, ka * kb))
            cols += [Column(block=("xmain", name, side), factor=name,
                            level=k, side=side, label=f"{name}[{k}]:{side}")
                     for k in range(ka * kb)]
    return mats, cols


def _covariate_blocks(ds: ConjointDataset) -> tuple[list[np.ndarray], list[Column]]:
    mats, cols = [], []
    for m, f in enumerate(ds.schema.covariates):
        if f.numeric:
            mats.append(ds.covariates[:, [m]])
            cols.append(Column(block=("cov", f.name), factor=f.name, level=0,
                               side=None, label=f.name))
        else:
            codes = ds.covariates[:, m].astype(np.int64)
            mats.append(_one_hot(codes, f.n_levels))
            cols += [Column(block=("cov", f.name), factor=f.name, level=w,
                            side=None, label=f"{f.name}={f.levels[w]}")
                     for w in range(f.n_levels)]
    return mats, cols


def build_design(ds: ConjointDataset, include_v: bool = True,
                 include_f: bool = False, extra_mains=()) -> DesignMatrix:
    """One-hot blocks for every factor-side, optional covariates, optional
    numeric task-order column, optional appended product blocks."""
    mats, cols = _profile_blocks(ds)
    em, ec = _extra_main_blocks(ds, extra_mains)
    mats += em
    cols += ec
    if include_v and ds.covariates.shape[1]:
        vm, vc = _covariate_blocks(ds)
        mats += vm
        cols += vc
    if include_f:
        mats.append(ds.task_order[:, None].astype(float))
        cols.append(Column(block=("taskorder",), factor="__task_order__",
                           level=0, side=None, label="task_order"))
    return DesignMatrix(
        matrix=np.hstack(mats) if mats else np.zeros((ds.n_rows, 0)),
        columns=tuple(cols),
        respondent_ids=np.array(ds.respondent_ids),
        task_ids=np.array(ds.task_order),
        augmented=None,
    )


def build_symmetry_augmented(ds: ConjointDataset, include_v: bool = True,
                             include_f: bool = False, extra_mains=()
                             ) -> tuple[DesignMatrix, np.ndarray]:
    """Append the all-rows profile swap with response 1 - Y.

    Any row-invariant statistic of the result is invariant to relabeling
    left and right profiles, and penalized fits on it satisfy the
    antisymmetry constraints between left and right coefficients.
    """
    base = build_design(ds, include_v=include_v, include_f=include_f,
                        extra_mains=extra_mains)
    swapped_ds = apply_order_swap(ds, np.ones(ds.n_rows, dtype=bool))
    twin = build_design(swapped_ds, include_v=include_v, include_f=include_f,
                        extra_mains=extra_mains)
    matrix = np.vstack([base.matrix, twin.matrix])
    y_aug = np.concatenate([ds.y, 1 - ds.y]).astype(float)
    return DesignMatrix(
        matrix=matrix,
        columns=base.columns,
        respondent_ids=np.concatenate([base.respondent_ids, base.respondent_ids]),
        task_ids=np.concatenate([base.task_ids, base.task_ids]),
        augmented="symmetry",
    ), y_aug


def _lag_pairs(ds: ConjointDataset) -> tuple[np.ndarray, np.ndarray]:
    """Row indices of (previous task, current task) pairs: (1,2), (3,4), ...

    A trailing odd task is dropped.
    """
    j = ds.tasks_per_respondent
    if j < 2:
        raise ValidationError("carryover design requires J >= 2")
    order = np.lexsort((ds.task_order, ds.respondent_ids))
    j_even = j - (j % 2)
    prev_rows, cur_rows = [], []
    for s in range(0, ds.n_rows, j):
        rows = order[s:s + j]
        for t in range(0, j_even, 2):
            prev_rows.append(rows[t])
            cur_rows.append(rows[t + 1])
    return np.array(prev_rows), np.array(cur_rows)


def build_carryover_augmented(ds: ConjointDataset) -> tuple[DesignMatrix, np.ndarray]:
    """Lag design pairing each even task with its preceding odd task.

    The base rows encode [lag-left, lag-right, current-left, current-right]
    blocks with the even task's response.  Three extra copies are appended:
    both-sides swapped with 1 - Y, current-sides swapped with 1 - Y, and
    lag-sides swapped with Y.  Together they force the lag profile's own
    main effects and interactions to zero and make the lag-by-current
    interactions side-symmetric, so only genuine carryover structure can
    register.
    """
    prev_rows, cur_rows = _lag_pairs(ds)
    factors = ds.schema.profile_factors

    def onehots(rows: np.ndarray, side_mat: np.ndarray) -> list[np.ndarray]:
        return [_one_hot(side_mat[rows][:, j], f.n_levels)
                for j, f in enumerate(factors)]

    lag_l = onehots(prev_rows, ds.profiles_left)
    lag_r = onehots(prev_rows, ds.profiles_right)
    cur_l = onehots(cur_rows, ds.profiles_left)
    cur_r = onehots(cur_rows, ds.profiles_right)

    def assemble(a, b, c, d) -> np.ndarray:
        return np.hstack(a + b + c + d)

    base = assemble(lag_l, lag_r, cur_l, cur_r)
    copy1 = assemble(lag_r, lag_l, cur_r, cur_l)
    copy2 = assemble(lag_l, lag_r, cur_r, cur_l)
    copy3 = assemble(lag_r, lag_l, cur_l, cur_r)
    matrix = np.vstack([base, copy1, copy2, copy3])

    y_star = ds.y[cur_rows].astype(float)
    y_aug = np.concatenate([y_star, 1 - y_star, 1 - y_star, y_star])

    cols: list[Column] = []
    for role in ("lag", "cur"):
        for side in (LEFT, RIGHT):
            for f in factors:
                cols += [Column(block=(role, f.name, side), factor=f.name,
                                level=k, side=side,
                                label=f"{role}:{f.name}={f.levels[k]}:{side}")
                         for k in range(f.n_levels)]
    resp = ds.respondent_ids[cur_rows]
    tasks = ds.task_order[cur_rows]
    return DesignMatrix(
        matrix=matrix,
        columns=tuple(cols),
        respondent_ids=np.concatenate([resp] * 4),
        task_ids=np.concatenate([tasks] * 4),
        augmented="carryover",
    ), y_aug
