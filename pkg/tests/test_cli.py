import csv
import json

import numpy as np
import pytest

from perforated.analysis import GapSample, fit_decay
from perforated.cli import CHECKS, EXIT_ERROR, EXIT_OK, main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def last_json(text):
    return json.loads(text.strip().splitlines()[-1])


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# provenance: ")
    return list(csv.reader(lines[1:]))


def test_construct_equator_poles(tmp_path, capsys):
    code, out, _ = run(capsys, "construct", "--out", tmp_path, "equator-poles", "--k", 16, "--c", 0.5)
    assert code == EXIT_OK
    info = last_json(out)
    assert info["holes"] == 18
    data = json.loads(open(info["path"]).read())
    assert data["provenance"]["hash"] == info["hash"]


def test_construct_vitali_is_deterministic(tmp_path, capsys):
    paths = []
    for name in ("a.json", "b.json"):
        code, out, _ = run(capsys, "construct", "vitali", "--group", "icosa", "--f0", 50, "--seed", 7,
                           "--output", tmp_path / name)
        assert code == EXIT_OK
        paths.append(last_json(out)["path"])
    a, b = (json.loads(open(p).read())["domain"] for p in paths)
    assert a == b


def test_construct_vitali_requires_seed(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["construct", "vitali", "--group", "icosa", "--f0", "50"])
    assert info.value.code == 2


def test_construct_invalid_family(capsys):
    with pytest.raises(SystemExit) as info:
        main(["construct", "no-such-family"])
    assert info.value.code == 2


def test_solve_sphere_neumann(tmp_path, capsys):
    code, out, _ = run(capsys, "solve", "--out", tmp_path, "--blueprint", "sphere", "--bc", "neumann",
                       "--count", 5, "--h", 0.15, "--extrapolate")
    assert code == EXIT_OK
    np.testing.assert_allclose(last_json(out)["eigenvalues"], [0, 2, 2, 2, 6], atol=5e-3)


def test_solve_disk_steklov_from_mesh(tmp_path, capsys):
    code, out, _ = run(capsys, "mesh", "disk", "--out", tmp_path, "--h", 0.1)
    assert code == EXIT_OK
    mesh_path = last_json(out)["path"]
    assert last_json(out)["euler_characteristic"] == 1
    code, out, _ = run(capsys, "solve", "--out", tmp_path, "--mesh", mesh_path, "--bc", "steklov", "--count", 5,
                       "--extrapolate")
    assert code == EXIT_OK
    np.testing.assert_allclose(last_json(out)["eigenvalues"], [0, 1, 1, 2, 2], atol=5e-3)


def test_solve_missing_mesh(tmp_path, capsys):
    code, _, err = run(capsys, "solve", "--out", tmp_path, "--mesh", tmp_path / "nope.off")
    assert code == EXIT_ERROR
    assert "not found" in err


def test_verify_unknown_check_lists_ids(tmp_path, capsys):
    code, _, err = run(capsys, "verify", "--out", tmp_path, "--check", "bogus")
    assert code == EXIT_ERROR
    for name in CHECKS:
        assert name in err


def test_verify_leqpol(tmp_path, capsys):
    code, _, _ = run(capsys, "verify", "--out", tmp_path, "--check", "leqpol")
    assert code == EXIT_OK
    rows = read_csv(tmp_path / "verify-leqpol.csv")
    assert rows[0] == ["id", "lhs", "rhs", "margin", "verdict", "hash"]
    assert len(rows) == 1 + 3 * 5


def test_verify_neumann_stability_rows(tmp_path, capsys):
    code, _, _ = run(capsys, "verify", "--out", tmp_path, "--check", "neumann-stability")
    assert code == EXIT_OK
    rows = read_csv(tmp_path / "verify-neumann-stability.csv")
    assert len(rows) == 1 + 4


def test_sweep_and_report(tmp_path, capsys):
    code, out, _ = run(capsys, "sweep", "stek-diameter", "--out", tmp_path, "--values", "2,4,8", "--h", 0.2)
    assert code == EXIT_OK
    sweep_dir = tmp_path / "sweep-stek-diameter"
    assert len((sweep_dir / "samples.jsonl").read_text().splitlines()) == 3
    code, out, _ = run(capsys, "report", str(sweep_dir), "--out", tmp_path, "--model", "power")
    rates = json.loads((tmp_path / "report" / "stek-diameter" / "rates.json").read_text())
    samples = []
    for line in (sweep_dir / "samples.jsonl").read_text().splitlines():
        data = json.loads(line)
        data.pop("provenance")
        samples.append(GapSample.from_json(data))
    direct = fit_decay(samples, "power", min_samples=3).to_json()
    assert rates["fits"]["power"] == direct
    rows = read_csv(tmp_path / "report" / "stek-diameter" / "gap-fit.csv")
    assert rows[0] == ["x", "gap", "margin", "source", "fit_power"]
    assert len(rows) == 4


def test_report_empty_dir(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    code, _, err = run(capsys, "report", tmp_path / "empty", "--out", tmp_path)
    assert code == EXIT_ERROR
    assert "no samples" in err


def test_optimize_writes_optimizer_sample(tmp_path, capsys):
    import math

    cfg = {"family": "stek-boundary", "fixed": {"k": 4}, "variables": ["radius"],
           "bounds": [[math.log(1e-3), math.log(0.3)]], "h_schedule": [0.25], "restarts": 0, "max_evals": 6}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    code, out, _ = run(capsys, "optimize", tmp_path / "cfg.json", "--out", tmp_path, "--seed", 3)
    assert code == EXIT_OK
    line = (tmp_path / "optimize-stek-boundary" / "samples.jsonl").read_text().splitlines()[0]
    assert json.loads(line)["source"] == "optimizer"
    assert (tmp_path / "optimize-stek-boundary" / "trace.jsonl").exists()
