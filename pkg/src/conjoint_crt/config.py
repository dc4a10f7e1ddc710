"""Declarative experiment configuration.

One TOML file describes the schema and the randomization scheme:

    [factor.origin]
    levels = ["Germany", "France", "Mexico", "India"]
    probs = [0.25, 0.25, 0.25, 0.25]      # optional, default uniform

    [factor.reason]
    levels = ["family", "job", "persecution"]

    [covariate.age]
    numeric = true

    [[restriction]]
    if_factor = "reason"
    if_levels = ["persecution"]
    then_factor = "origin"
    allowed_levels = ["India"]

A coarsening file groups target-factor levels (unlisted levels map to
themselves) and assigns group identifiers:

    factors = ["origin"]
    [map]
    Germany = "Europe"
    France = "Europe"
    [groups]
    Mexico = "mexico-europe"
    Europe = "mexico-europe"
"""

from __future__ import annotations

import sys
from itertools import product

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import PROFILE, RESPONDENT, CoarseningSpec, FactorSpec, Schema, ValidationError
from .randomization import RandomizationScheme, Restriction


def _read_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def load_config(path) -> tuple[Schema, RandomizationScheme]:
    """Parse schema and randomization scheme from one TOML file."""
    raw = _read_toml(path)
    factors: list[FactorSpec] = []
    for name, body in raw.get("factor", {}).items():
        levels = tuple(str(v) for v in body.get("levels", ()))
        if not levels:
            raise ValidationError(f"factor {name!r} declares no levels")
        factors.append(FactorSpec(name=name, levels=levels, kind=PROFILE))
    for name, body in raw.get("covariate", {}).items():
        numeric = bool(body.get("numeric", False))
        levels = tuple(str(v) for v in body.get("levels", ()))
        factors.append(FactorSpec(name=name, levels=levels, kind=RESPONDENT,
                                  numeric=numeric))
    schema = Schema(tuple(factors))

    marginals = {}
    for name, body in raw.get("factor", {}).items():
        if "probs" in body:
            marginals[name] = tuple(float(p) for p in body["probs"])
    restrictions = []
    for body in raw.get("restriction", []):
        try:
            restrictions.append(Restriction(
                if_factor=str(body["if_factor"]),
                if_levels=tuple(str(v) for v in body["if_levels"]),
                then_factor=str(body["then_factor"]),
                allowed_levels=tuple(str(v) for v in body["allowed_levels"]),
            ))
        except KeyError as exc:
            raise ValidationError(f"restriction missing key {exc}") from None
    scheme = RandomizationScheme(marginals=marginals,
                                 restrictions=tuple(restrictions))
    scheme.validate(schema)
    return schema, scheme


def load_coarsening(path, schema: Schema, tested_group: str) -> CoarseningSpec:
    """Parse a coarsening file against the schema.

    Map keys (and multi-factor keys joined with "|") name original levels;
    unlisted level combinations coarsen to themselves.
    """
    raw = _read_toml(path)
    factor_names = tuple(str(f) for f in raw.get("factors", ()))
    if not factor_names:
        raise ValidationError("coarsening file names no factors")
    for f in factor_names:
        if f not in schema or schema[f].kind != PROFILE:
            raise ValidationError(f"coarsening references unknown profile factor {f!r}")
    explicit = {}
    for key, value in raw.get("map", {}).items():
        parts = tuple(key.split("|"))
        if len(parts) != len(factor_names):
            raise ValidationError(
                f"coarsening key {key!r} does not match factor count")
        explicit[parts] = str(value)
    c_map = {}
    level_lists = [schema[f].levels for f in factor_names]
    for combo in product(*level_lists):
        c_map[combo] = explicit.get(combo, "|".join(combo))
    for key in explicit:
        if key not in c_map:
            raise ValidationError(f"coarsening key {key!r} uses unknown levels")
    h_map = {str(k): str(v) for k, v in raw.get("groups", {}).items()}
    spec = CoarseningSpec(factors=factor_names, c_map=c_map, h_map=h_map,
                          tested_group=tested_group)
    group_levels = [lv for lv in set(c_map.values())
                    if spec.group_of(lv) == tested_group]
    if not group_levels:
        raise ValidationError(f"tested group {tested_group!r} matches no coarsened level")
    return spec
