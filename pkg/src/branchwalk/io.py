"""Model descriptions, projection maps and byte-stable JSON/CSV output.

Model files are JSON objects of one of three shapes::

    {"tag": "irreducible-N", "params": {"p": 0.6667, "N": 200}}

    {"space": {"kind": "explicit", "sites": [1, 2]},
     "atoms": {"1": [[1.0, {"1": 1, "2": 1}]],
               "2": [[0.5, {}], [0.5, {"1": 1}]]}}

    {"space": {"kind": "nonneg-integers", "size": 200},
     "rule": {"atoms": [[0.3333, {}], [0.5556, {"+1": 2}], [0.1111, {"-1": 1}]],
              "clamp": true}}

Atoms are ``[weight, {site: count}]``; weights are renormalized on load when
their sum is within 1e-9 of 1. Rule atoms use integer offsets relative to the
parent site; ``clamp`` maps negative sites of a nonnegative line to 0. Every
shape accepts an optional ``"policy"`` (``ghost-survive`` or ``ghost-die``).
Projection maps are ``{"map": {site: label}}`` or ``[[site, label], ...]``.
"""
from __future__ import annotations

import csv
import dataclasses
import io as _io
import json
import math
import os
from pathlib import Path

import numpy as np

from branchwalk import registry
from branchwalk.model import (
    BRWModel,
    ModelError,
    OffspringDistribution,
    SiteSpace,
    from_rule,
)

OUTPUT_DIR_ENV = "BRANCHWALK_OUTPUT_DIR"
LOAD_WEIGHT_TOL = 1e-9

__all__ = [
    "model_from_spec", "load_model", "load_projection", "to_jsonable", "dumps_json",
    "write_json", "csv_text", "write_csv", "write_text", "output_path", "OUTPUT_DIR_ENV",
]


# --------------------------------------------------------------------------
# Models
# --------------------------------------------------------------------------

def load_model(path_or_tag: str, **params) -> BRWModel:
    """Model from a JSON file path or a registered tag (``params`` override)."""
    if path_or_tag in registry.BUILDERS:
        return registry.build(path_or_tag, **params)
    p = Path(path_or_tag)
    if not p.exists():
        raise ModelError(f"{path_or_tag!r} is neither a registered tag nor a file")
    try:
        spec = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{p}: invalid JSON ({exc})") from None
    if params:
        spec = dict(spec)
        spec["params"] = {**spec.get("params", {}), **params}
    return model_from_spec(spec)


def model_from_spec(spec) -> BRWModel:
    """Validated model from a dict, JSON text or registered tag."""
    if isinstance(spec, str):
        if spec in registry.BUILDERS:
            return registry.build(spec)
        try:
            spec = json.loads(spec)
        except json.JSONDecodeError as exc:
            raise ModelError(f"invalid model description: {exc}") from None
    if not isinstance(spec, dict):
        raise ModelError("model description must be a JSON object")
    policy = spec.get("policy")
    if "tag" in spec:
        model = registry.build(spec["tag"], **spec.get("params", {}))
    elif "rule" in spec:
        model = _rule_model(spec)
    elif "atoms" in spec:
        model = _explicit_model(spec)
    else:
        raise ModelError("model description needs 'tag', 'atoms' or 'rule'")
    return model.with_policy(policy) if policy else model


def _space(spec) -> SiteSpace:
    sp = spec.get("space", {"kind": "explicit"})
    if isinstance(sp, str):
        sp = {"kind": sp}
    kind = sp.get("kind", "explicit")
    if kind == "explicit":
        sites = sp.get("sites", spec.get("sites"))
        if sites is None:
            sites = [_parse_site(k) for k in spec.get("atoms", {})]
        return SiteSpace.explicit(tuple(sites))
    size = sp.get("size")
    if not isinstance(size, int) or size < 0:
        raise ModelError(f"space {kind!r} needs a nonnegative integer 'size'")
    if kind == "nonneg-integers":
        return SiteSpace.nonneg_integers(size)
    if kind == "integers":
        return SiteSpace.integers(size)
    raise ModelError(f"unsupported space kind {kind!r} in model files; trees load by tag")


def _parse_site(key):
    if isinstance(key, str):
        try:
            return int(key)
        except ValueError:
            return key
    return key


def _site_lookup(space: SiteSpace):
    table = {str(s): s for s in space.window}

    def look(key):
        if not isinstance(key, str):
            key = str(key)
        if key not in table:
            raise ModelError(f"dangling site reference {key!r}")
        return table[key]
    return look


def _distribution(atoms, resolve, where) -> OffspringDistribution:
    if not isinstance(atoms, list) or not atoms:
        raise ModelError(f"{where}: atom list must be a nonempty list")
    pairs = []
    for a in atoms:
        if not (isinstance(a, (list, tuple)) and len(a) == 2 and isinstance(a[1], dict)):
            raise ModelError(f"{where}: atoms are [weight, {{site: count}}]")
        w, place = a
        counts = {}
        for k, c in place.items():
            if not isinstance(c, int) or c < 0:
                raise ModelError(f"{where}: counts must be nonnegative integers")
            t = resolve(k)
            counts[t] = counts.get(t, 0) + c
        pairs.append((float(w), counts))
    total = sum(w for w, _ in pairs)
    if not math.isfinite(total) or abs(total - 1.0) > LOAD_WEIGHT_TOL:
        raise ModelError(f"{where}: weights sum to {total!r}, not 1")
    return OffspringDistribution.from_pairs(pairs, normalize=True)


def _explicit_model(spec) -> BRWModel:
    space = _space(spec)
    look = _site_lookup(space)
    atoms = spec["atoms"]
    laws = {}
    for key, lst in atoms.items():
        s = look(key)
        laws[s] = _distribution(lst, look, f"site {key}")
    missing = [s for s in space.window if s not in laws]
    if missing:
        raise ModelError(f"no law for sites {missing!r}")
    return BRWModel(space, laws, tag=spec.get("name"))


def _rule_model(spec) -> BRWModel:
    space = _space(spec)
    if space.kind == "explicit":
        raise ModelError("rules need an integer-line space")
    rule_spec = spec["rule"]
    atoms = rule_spec.get("atoms") if isinstance(rule_spec, dict) else rule_spec
    clamp = bool(rule_spec.get("clamp", False)) if isinstance(rule_spec, dict) else False
    offsets = []
    for a in atoms or []:
        if not (isinstance(a, (list, tuple)) and len(a) == 2 and isinstance(a[1], dict)):
            raise ModelError("rule atoms are [weight, {offset: count}]")
        try:
            offsets.append((a[0], {int(k): c for k, c in a[1].items()}))
        except ValueError:
            raise ModelError("rule offsets must be integers such as '+1' or '-1'") from None
    if not offsets:
        raise ModelError("rule atom list must be nonempty")
    nonneg = space.kind == "nonneg-integers"

    def rule(n):
        def resolve(o):
            t = n + o
            if nonneg and t < 0:
                if not clamp:
                    raise ModelError(f"offset {o:+d} leaves the space at site {n}")
                t = 0
            return t
        return _distribution([[w, dict(pl)] for w, pl in offsets], resolve, f"rule at {n}")

    return from_rule(space, rule, tag=spec.get("name"))


# --------------------------------------------------------------------------
# Projection maps
# --------------------------------------------------------------------------

def load_projection(spec, src: BRWModel | None = None):
    """:class:`ProjectionMap` from ``{"map": {...}}``, a pair list, or a path."""
    from branchwalk.project import ProjectionMap

    if isinstance(spec, (str, Path)):
        try:
            spec = json.loads(Path(spec).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ModelError(f"cannot read projection map {spec}: {exc}") from None
    if isinstance(spec, dict):
        spec = spec.get("map", spec)
        pairs = list(spec.items())
    else:
        pairs = [tuple(p) for p in spec]
    look = _site_lookup(src.space) if src is not None else _parse_site
    return ProjectionMap({look(k): _parse_site(v) for k, v in pairs})


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------

def to_jsonable(obj):
    """Plain JSON types; non-finite floats become strings ("nan", "inf")."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {_key(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        seq = sorted(obj, key=repr) if isinstance(obj, (set, frozenset)) else obj
        return [to_jsonable(v) for v in seq]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if obj is None or isinstance(obj, str):
        return obj
    return repr(obj)


def _key(k):
    return k if isinstance(k, str) else repr(k) if isinstance(k, tuple) else str(k)


def dumps_json(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def csv_text(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def output_path(path) -> Path:
    """Relative paths resolve against ``$BRANCHWALK_OUTPUT_DIR`` when set."""
    p = Path(path)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    return p.absolute()


def write_text(text: str, path) -> Path:
    p = output_path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {p}: {exc.strerror or exc}") from None
    return p


def write_json(obj, path) -> Path:
    return write_text(dumps_json(obj), path)


def write_csv(header, rows, path) -> Path:
    return write_text(csv_text(header, rows), path)
