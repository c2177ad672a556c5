import json

import pytest

from cmckit import acceptance, cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_delaunay_cylinder(capsys):
    code, out, _ = run(capsys, "delaunay", "--h", "1", "--tau", "0.267949192431")
    assert code == 0
    assert "period: CYLINDER" in out
    assert "rho: 0.549306144334" in out


def test_delaunay_unduloid(capsys, tmp_path):
    csv = tmp_path / "p.csv"
    code, out, _ = run(capsys, "delaunay", "--h", "1", "--tau", "0.2", "--out", str(csv))
    assert code == 0
    fields = dict(line.split(": ") for line in out.strip().splitlines())
    assert float(fields["rho_max"]) == pytest.approx(0.8285073, abs=1e-7)
    assert float(fields["period"]) == pytest.approx(3.403486926907301, rel=1e-10)
    assert csv.read_text().splitlines()[0].startswith("t,z,rho,sigma")


def test_delaunay_invalid_parameters(capsys):
    code, _, err = run(capsys, "delaunay", "--h", "0.4", "--tau", "0.1")
    assert code == 1 and err.startswith("error:")


def test_outputs_deterministic(capsys, tmp_path):
    paths = []
    for k in range(2):
        p = tmp_path / f"s{k}.json"
        run(capsys, "delaunay", "--h", "1", "--tau", "0.2", "--save-sliced", str(p), "--slices", "20",
            "--points", "64")
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_flux_and_area(capsys, tmp_path):
    surf = tmp_path / "rot.json"
    run(capsys, "delaunay", "--h", "1", "--tau", "0.2", "--periods", "2", "--save-surface", str(surf))
    code, out, _ = run(capsys, "flux", "--surface", str(surf), "--height", "0.7")
    assert code == 0
    res = json.loads(out)
    assert res["value"] == pytest.approx(2 * 3.141592653589793 * 0.2, abs=1e-9)
    code, out, _ = run(capsys, "area", "--surface", str(surf), "--from", "0", "--to", "1")
    assert code == 0 and float(out) > 0


def test_flux_sliced_needs_h0(capsys, tmp_path):
    surf = tmp_path / "sl.json"
    run(capsys, "delaunay", "--h", "1", "--tau", "0.2", "--save-sliced", str(surf), "--slices", "20",
        "--points", "64")
    code, _, err = run(capsys, "flux", "--surface", str(surf), "--height", "0")
    assert code == 1 and "--h0" in err


def test_alexandrov_subcommand(capsys, tmp_path):
    surf = tmp_path / "sl.json"
    trace = tmp_path / "t.csv"
    run(capsys, "delaunay", "--h", "1", "--tau", "0.2", "--save-sliced", str(surf), "--slices", "40",
        "--points", "256")
    code, out, _ = run(capsys, "alexandrov", "--surface", str(surf), "--out", str(trace))
    assert code == 0
    assert "usc: pass" in out and "symmetry plane: s = " in out
    assert trace.read_text().splitlines()[0] == "z,alpha,provenance"


def test_solve_and_nonconvergence(capsys, tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"bounds": {"r": [-0.5, 0.5], "z": [0, 1]}, "grid": [8, 8],
                                "bc": {"type": "constant", "value": 1.0}}))
    out_csv = tmp_path / "u.csv"
    code, out, _ = run(capsys, "solve", "--domain", str(good), "--h0", "0.5", "--out", str(out_csv))
    assert code == 0 and "residual:" in out
    assert out_csv.read_text().startswith("r,z,u\n")
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"bounds": {"r": [-3, 3], "z": [0, 6]}, "grid": [16, 16],
                               "bc": {"type": "constant", "value": 0.0}}))
    code, _, err = run(capsys, "solve", "--domain", str(bad), "--h0", "2", "--max-iter", "20")
    assert code == 2 and "last residual" in err


def test_solve_input_errors(capsys, tmp_path):
    code, _, err = run(capsys, "solve", "--domain", str(tmp_path / "missing.json"), "--h0", "1")
    assert code == 1
    broken = tmp_path / "broken.json"
    broken.write_text("{\n  \"bounds\": ")
    code, _, err = run(capsys, "solve", "--domain", str(broken), "--h0", "1")
    assert code == 1 and "line" in err


def test_grad_bound(capsys):
    code, out, _ = run(capsys, "grad-bound", "--rp", "0", "--zp", "0", "--radius", "1", "--h0cmc", "1",
                       "--height", "0.1")
    assert code == 0 and float(out) == pytest.approx(410.468, abs=1e-3)
    code, _, _ = run(capsys, "grad-bound", "--rp", "0", "--zp", "0", "--radius", "0", "--h0cmc", "1",
                     "--height", "0.1")
    assert code == 1


def test_check_exit_code(capsys, monkeypatch):
    fake = [acceptance.Criterion(1, "a", True, "ok", 0.0), acceptance.Criterion(2, "b", False, "no", 0.0)]

    def run_all(echo=print):
        for c in fake:
            echo(c.line())
        return fake

    monkeypatch.setattr(acceptance, "run_all", run_all)
    code, out, _ = run(capsys, "check")
    assert code == 1 and "1/2 criteria passed" in out


def test_help_shows_defaults(capsys):
    with pytest.raises(SystemExit):
        cli.main(["delaunay", "--help"])
    out = capsys.readouterr().out
    assert "default: 200" in out and "default: 512" in out


def test_bad_thread_env(capsys, monkeypatch):
    monkeypatch.setenv("CMC_THREADS", "-1")
    code, _, err = run(capsys, "grad-bound", "--rp", "0", "--zp", "0", "--radius", "1", "--h0cmc", "1",
                       "--height", "0")
    assert code == 1 and "CMC_THREADS" in err
