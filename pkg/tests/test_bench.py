import json

import pytest
from pysail.bench import (
    THREADS_VARIABLE,
    BenchConfig,
    bench_rows,
    bench_run,
    check_acceptance,
    check_comparison,
    default_workers,
    load_guesses,
)
from pysail.chemio import read_basis_file
from pysail.dataset import (
    generate_corpus,
    label_dataset,
    label_metadata,
    load_base_molecules,
    save_labels,
    split_by_heavy_atoms,
)
from pysail.exceptions import LabelMismatchException
from pysail.metrics import evaluate_guess, records_frame
from pysail.model import GuessModel, save_checkpoint
from pysail.models import ScfOptions
from pysail.train import TrainConfig, pretrain, sail_finetune


@pytest.fixture(scope="module")
def frame(samples, table):
    guesses = {"sad": "sad", "gwh": "gwh", "delta_fock": GuessModel("delta_fock")}
    return records_frame(
        [evaluate_guess(guess, sample, table, name=name) for sample in samples for name, guess in guesses.items()]
    )


@pytest.fixture
def metadata():
    return label_metadata(ScfOptions(), read_basis_file())


def test_workers_from_environment(monkeypatch):
    monkeypatch.setenv(THREADS_VARIABLE, "3")
    assert default_workers() == 3
    monkeypatch.setenv(THREADS_VARIABLE, "0")
    assert default_workers() == 1
    monkeypatch.delenv(THREADS_VARIABLE)
    assert 1 <= default_workers() <= 4


def test_environment_overrides_config(monkeypatch):
    monkeypatch.setenv(THREADS_VARIABLE, "2")
    assert BenchConfig.deserialize({"labels": "labels", "workers": 8}).workers == 2
    monkeypatch.delenv(THREADS_VARIABLE)
    assert BenchConfig.deserialize({"labels": "labels", "workers": 8}).workers == 8


@pytest.mark.parametrize(
    "overrides",
    [
        {"guesses": ["huckel"]},
        {"split": "holdout"},
        {"workers": 0},
        {"checkpoints": {"a": "a.json"}, "pretrained": "a"},
        {"checkpoints": {"a": "a.json"}, "pretrained": "a", "finetuned": "b"},
        {"checkpoints": {"a": "a.json"}, "horizons": {"a": 4}},
        {"checkpoints": {"a": "a.json", "b": "b.json"}, "horizons": {"a": 0, "b": 10}},
    ],
    ids=["guess", "split", "workers", "lone-stage", "unknown-stage", "one-horizon", "zero-steps"],
)
def test_invalid_config(overrides: dict):
    with pytest.raises(ValueError):
        BenchConfig("labels", **overrides)


def test_config_round_trip():
    config = BenchConfig("labels", {"mine": "model.json"}, ["sad"], "val", 2, 1.0, 0.9)
    assert BenchConfig.deserialize(json.loads(json.dumps(config.serialize()))) == config


def test_acceptance_holds(frame):
    assert check_acceptance(frame) == []


def test_broken_ledger_detected(frame):
    broken = frame.copy()
    broken.loc[0, "fock_builds"] += 1
    failures = check_acceptance(broken)
    assert len(failures) == 1
    assert "ledger" in failures[0]


def test_reference_ric_detected(frame):
    broken = frame.copy()
    row = broken.index[broken["guess"] == "sad"][0]
    broken.loc[row, "ric"] = 1.5
    broken.loc[row, "eric"] = 1.5
    assert any("reference guess" in failure for failure in check_acceptance(broken))


def test_mean_eric_threshold(frame):
    assert check_acceptance(frame, max_mean_eric=100.0) == []
    failures = check_acceptance(frame, max_mean_eric=0.0)
    assert failures == [failures[0]]
    assert failures[0].startswith("delta_fock")


async def test_bench_rows(samples, table):
    records = await bench_rows(samples, {"sad": "sad", "core": "core"}, table, ScfOptions(), 2)
    assert len(records) == 4
    assert sorted({record.guess for record in records}) == ["core", "sad"]


def test_checkpoint_mismatch(tmp_path, metadata):
    path = tmp_path / "model.json"
    save_checkpoint(GuessModel(), path, {"basis": metadata["basis"], "alpha": 0.5})
    config = BenchConfig("labels", {"mine": str(path)}, ["sad"])
    with pytest.raises(LabelMismatchException):
        load_guesses(config, metadata)


def test_bench_run(samples, tmp_path, metadata):
    labels = tmp_path / "labels"
    save_labels(samples, labels, metadata)
    checkpoint = tmp_path / "identity.json"
    save_checkpoint(GuessModel(), checkpoint, {"basis": metadata["basis"], "alpha": 1.0})
    config = BenchConfig(str(labels), {"identity": str(checkpoint)}, ["sad", "core"], "all", 2)

    frame, failures = bench_run(config, tmp_path / "out")

    assert failures == []
    assert len(frame) == 6
    assert (tmp_path / "out" / "rows.csv").is_file()
    assert (tmp_path / "out" / "aggregate.csv").is_file()
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["molecules"] == 2
    assert summary["mean_ric"]["identity"] == pytest.approx(1.0)
    assert summary["mean_eric"]["sad"] == pytest.approx(1.0)


def comparison(pretrain_eric, sail_eric, pretrain_surrogate, sail_surrogate, horizons=None):
    result = {
        "eric": {"pretrain": pretrain_eric, "sail": sail_eric},
        "surrogate": {"pretrain": pretrain_surrogate, "sail": sail_surrogate},
    }
    if horizons:
        result["horizon_eric"] = horizons
    return result


def test_comparison_holds():
    assert check_comparison(comparison(0.9, 0.8, 0.01, 0.02, {"4": 0.81, "10": 0.8})) == []
    assert check_comparison({}) == []


@pytest.mark.parametrize(
    "values, expected",
    [
        ((0.8, 0.9, 0.01, 0.02), "above pretrained"),
        ((1.1, 1.0, 0.01, 0.02), "not below the reference"),
        ((0.9, 0.8, 0.02, 0.01), "surrogate loss"),
    ],
    ids=["eric-direction", "reference", "surrogate-direction"],
)
def test_stage_comparison_failures(values: tuple, expected: str):
    failures = check_comparison(comparison(*values))
    assert len(failures) == 1
    assert expected in failures[0]


def test_horizon_comparison_failures():
    failures = check_comparison({"horizon_eric": {"4": 0.9, "10": 0.8}}, horizon_tolerance=0.05)
    assert failures == ["T=4: mean ERIC 0.9000 is more than 0.05 from T=10 (0.8000)"]
    failures = check_comparison({"horizon_eric": {"2": 1.02, "4": 1.0}})
    assert [failure.split(":")[0] for failure in failures] == ["T=2", "T=4"]


def test_bench_run_compares_checkpoints(samples, tmp_path, metadata):
    labels = tmp_path / "labels"
    save_labels(samples, labels, metadata)
    checkpoints = {}
    for name in ("first", "second"):
        checkpoints[name] = str(tmp_path / f"{name}.json")
        save_checkpoint(GuessModel(), checkpoints[name], {"basis": metadata["basis"], "alpha": 1.0})
    config = BenchConfig(
        str(labels),
        checkpoints,
        ["sad"],
        "all",
        2,
        pretrained="first",
        finetuned="second",
        horizons={"first": 4, "second": 10},
    )

    _, failures = bench_run(config, tmp_path / "out")

    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["comparison"]["eric"] == pytest.approx({"pretrain": 1.0, "sail": 1.0})
    surrogate = summary["comparison"]["surrogate"]
    assert surrogate["pretrain"] == surrogate["sail"] > 0
    assert summary["comparison"]["horizon_eric"] == pytest.approx({"4": 1.0, "10": 1.0})
    assert summary["fallbacks"] == {"first": 0, "sad": 0, "second": 0}
    assert failures == [
        "finetuned mean ERIC 1.0000 is not below the reference",
        "T=4: mean ERIC 1.0000 is not below the reference",
        "T=10: mean ERIC 1.0000 is not below the reference",
    ]


@pytest.mark.slow
def test_training_protocol_on_corpus(tmp_path, table, metadata):
    corpus = generate_corpus(load_base_molecules(), 3, 0.05, 0)
    labeled, _ = label_dataset(corpus, ScfOptions(), table)
    save_labels(labeled, tmp_path / "labels", metadata)
    splits = split_by_heavy_atoms(labeled)

    models = {}
    models["pretrain"], _ = pretrain(splits["train"], GuessModel(), TrainConfig(epochs=30), table)
    for steps in (4, 10):
        config = TrainConfig("sail", steps=steps, epochs=10)
        models[f"sail_t{steps}"], _ = sail_finetune(splits["train"], models["pretrain"], config, table)
    checkpoints = {}
    for name, model in models.items():
        checkpoints[name] = str(tmp_path / f"{name}.json")
        save_checkpoint(model, checkpoints[name], {"basis": metadata["basis"], "alpha": 1.0})
    config = BenchConfig(
        str(tmp_path / "labels"),
        checkpoints,
        ["sad"],
        "test",
        pretrained="pretrain",
        finetuned="sail_t10",
        horizons={"sail_t4": 4, "sail_t10": 10},
    )

    _, failures = bench_run(config, tmp_path / "out")

    assert failures == []
