import json

import pytest
from pysail.chemio import emit_xyz
from pysail.cli import build_parser, main
from .conftest import molecule


@pytest.fixture
def h2_file(tmp_path):
    path = tmp_path / "h2.xyz"
    path.write_text(emit_xyz(molecule("h2")))
    return path


def test_parser_defaults():
    args = build_parser().parse_args(["bench", "--config", "bench.json", "--out", "out", "--assert"])
    assert args.assert_
    args = build_parser().parse_args(["sail", "--labels", "labels", "--out", "model.json"])
    assert args.checkpoint is None
    assert args.ansatz == "delta_density"


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_scf(h2_file, tmp_path):
    out = tmp_path / "trajectory.json"
    assert main(["scf", "--molecule", str(h2_file), "--guess", "core", "--out", str(out)]) == 0

    data = json.loads(out.read_text())
    assert data["converged"]
    assert data["energy"][-1] == pytest.approx(-1.11671432, abs=1e-7)


def test_corpus(tmp_path):
    assert main(["corpus", "--out", str(tmp_path), "--copies", "2"]) == 0
    files = sorted(path.name for path in tmp_path.glob("*.xyz"))
    assert len(files) == 34
    assert files[:2] == ["c2h4-000.xyz", "c2h4-001.xyz"]


def test_metrics(h2_file, capsys):
    assert main(["metrics", "--guess", "core", "--molecule", str(h2_file)]) == 0
    row = json.loads(capsys.readouterr().out)
    assert row["molecule"] == "h2"
    assert row["measurement_fock_builds"] == 1


def test_fetch_basis(mocker, tmp_path):
    fetch = mocker.patch("pysail.cli.fetch_basis", mocker.AsyncMock(return_value="H 0\n****\n"))
    out = tmp_path / "basis.gbs"

    assert main(["fetch-basis", "--elements", "H,O", "--out", str(out)]) == 0
    assert out.read_text() == "H 0\n****\n"
    fetch.assert_awaited_once_with("sto-3g", ["H", "O"])


def test_fetch_basis_unavailable(mocker, capsys):
    mocker.patch("pysail.cli.fetch_basis", mocker.AsyncMock(return_value=None))
    assert main(["fetch-basis", "--name", "none", "--elements", "H"]) == 1
    assert "not available" in capsys.readouterr().err


def test_failure_is_logged(tmp_path, caplog):
    missing = tmp_path / "missing.xyz"
    with pytest.raises(FileNotFoundError):
        main(["scf", "--molecule", str(missing)])
    assert "pysail scf failed" in caplog.text
