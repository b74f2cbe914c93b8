import json

import numpy as np
import pytest

from branchwalk import io, registry
from branchwalk.model import ModelError


def test_load_tag_and_params():
    m = io.model_from_spec({"tag": "irreducible-N", "params": {"N": 30}})
    assert m.n == 31
    assert io.load_model("binary-bp", p=0.6).law(0).mean_total() == pytest.approx(1.2)


def test_explicit_model_roundtrip(tmp_path):
    spec = {"space": {"kind": "explicit", "sites": [1, 2]},
            "atoms": {"1": [[1.0, {"1": 1, "2": 1}]],
                      "2": [[0.5, {}], [0.5, {"1": 1}]]},
            "policy": "ghost-die"}
    p = tmp_path / "m.json"
    p.write_text(json.dumps(spec))
    m = io.load_model(str(p))
    assert m.sites == (1, 2) and m.policy == "ghost-die"
    assert m.law(1).mean_total() == 2 and m.law(2).mean_total() == pytest.approx(0.5)


def test_rule_model_matches_registry():
    p, eps = 2 / 3, 1 / 9
    spec = {"space": {"kind": "nonneg-integers", "size": 40},
            "rule": {"atoms": [[1 - p, {}], [p - eps, {"+1": 2}], [eps, {"-1": 1}]],
                     "clamp": True}}
    m = io.model_from_spec(spec)
    ref = registry.irreducible_n(p, eps, 40)
    from branchwalk.model import first_moment
    assert np.allclose(first_moment(m).matrix.toarray(), first_moment(ref).matrix.toarray())


@pytest.mark.parametrize("spec", [
    {"atoms": {"1": []}},
    {"space": {"kind": "explicit", "sites": [1]}, "atoms": {"1": [[1.0, {"9": 1}]]}},
    {"atoms": {"1": [[0.5, {}]]}},
    {"space": {"kind": "explicit", "sites": [1, 2]}, "atoms": {"1": [[1.0, {}]]}},
    {"space": {"kind": "nonneg-integers", "size": 5}, "rule": {"atoms": [[1.0, {"-1": 1}]]}},
    {"nothing": 1},
    "{not json",
])
def test_bad_models_raise(spec):
    with pytest.raises(ModelError):
        io.model_from_spec(spec)


def test_unknown_path_raises():
    with pytest.raises(ModelError):
        io.load_model("/no/such/file.json")


def test_csv_and_json_are_byte_stable():
    rows = [(0.1, "strong-local", 1 / 3, True), (0.2, "pure-global", 1.0, False)]
    text = io.csv_text(["lambda", "regime", "q_bar", "local"], rows)
    assert text == ("lambda,regime,q_bar,local\n0.1,strong-local,0.3333333333333333,true\n"
                    "0.2,pure-global,1.0,false\n")
    obj = {"b": np.float64(0.5), "a": [np.int64(1), float("inf")], (1, 2): None}
    assert io.dumps_json(obj) == io.dumps_json(dict(reversed(list(obj.items()))))
    assert json.loads(io.dumps_json(obj)) == {"a": [1, "inf"], "b": 0.5, "(1, 2)": None}


def test_output_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv(io.OUTPUT_DIR_ENV, str(tmp_path))
    p = io.write_csv(["x"], [(1,)], "sub/out.csv")
    assert p == tmp_path / "sub" / "out.csv" and p.read_text() == "x\n1\n"
    abs_path = tmp_path / "abs.json"
    assert io.write_json({"k": 1}, abs_path) == abs_path


def test_load_projection(tmp_path):
    src = registry.counterexample1()
    g = io.load_projection({"map": {str(s): "*" for s in src.sites}}, src)
    assert all(g(s) == "*" for s in src.sites)
    p = tmp_path / "g.json"
    p.write_text(json.dumps([[str(s), 0] for s in src.sites]))
    assert io.load_projection(str(p), src)(src.sites[0]) == 0
    with pytest.raises(ModelError):
        io.load_projection({"map": {"nope": 1}}, src)
