import json

import pytest

from branchwalk import cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_verify_example_passes(capsys):
    code, out, err = run(capsys, "verify-example", "counterexample1")
    assert code == 0 and json.loads(out)["passed"] and "ALL PASS" in err


def test_bad_tag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["verify-example", "nope"])
    assert exc.value.code == 2


def test_unknown_model_exit_one(capsys):
    code, _, err = run(capsys, "analyze", "--model", "nope")
    assert code == 1 and err.startswith("error:")


def test_extinction_csv(capsys):
    code, out, _ = run(capsys, "extinction", "--model", "binary-bp", "--format", "csv")
    assert code == 0
    lines = out.splitlines()
    assert len(lines) >= 2


def test_phase_csv_header_and_output_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("BRANCHWALK_OUTPUT_DIR", str(tmp_path))
    code, _, err = run(capsys, "phase", "--radius", "60", "--lambda-grid", "0.15,0.3",
                       "--format", "csv", "--output", "phase.csv")
    assert code == 0 and "wrote" in err
    text = (tmp_path / "phase.csv").read_text()
    assert text.splitlines()[0] == "lambda,regime,q_bar,q_local"
    assert text.splitlines()[1].startswith("0.15,global-extinction,")


def test_simulate_is_deterministic(capsys):
    argv = ["simulate", "--model", "binary-bp", "--replicates", "200", "--horizon", "30",
            "--seed", "4"]
    _, a, _ = run(capsys, *argv)
    _, b, _ = run(capsys, *argv, "--threads", "3")
    assert a == b and json.loads(a)["replicates"] == 200


def test_project_detects_bp(capsys):
    code, out, _ = run(capsys, "project", "--model", "reducible-N", "--window", "40")
    res = json.loads(out)
    assert code == 0 and res["bp_like"]
    assert res["fixed_points"] == pytest.approx([3 / 7, 1])


def test_project_target_needs_map(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["project", "--model", "binary-bp", "--target", "binary-bp"])
    assert exc.value.code == 2
