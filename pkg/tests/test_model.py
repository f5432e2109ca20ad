import json

import numpy as np
import pytest
import torch
from pysail.chemio import rotate, rotation_matrix
from pysail.exceptions import CheckpointException
from pysail.model import FeatureSpec, GuessModel, load_checkpoint, pair_features, save_checkpoint
from pysail.models import Molecule


def test_feature_size(h2o):
    features = pair_features(h2o, FeatureSpec())
    assert FeatureSpec().size == 41
    assert features.shape == (3, 3, 41)


def test_features_symmetric_and_invariant(h2o):
    spec = FeatureSpec()
    features = pair_features(h2o, spec)
    rotated = pair_features(rotate(h2o, rotation_matrix([0, 1, 1], 2.0)), spec)

    torch.testing.assert_close(features, features.transpose(0, 1))
    torch.testing.assert_close(rotated, features)


def test_features_vanish_beyond_cutoff():
    far = Molecule((1, 1), [[0, 0, 0], [0, 0, 12.0]])
    features = pair_features(far, FeatureSpec(r_cut=10.0))
    rbf = slice(12, 28)
    assert float(features[0, 1, rbf].abs().max()) == 0.0
    assert float(features[0, 1, 29:].abs().max()) == 0.0


def test_identity_model(h2o):
    gains, shifts = GuessModel()(h2o)
    torch.testing.assert_close(gains, torch.ones((3, 3), dtype=torch.float64))
    torch.testing.assert_close(shifts, torch.zeros((3, 3), dtype=torch.float64))


def test_random_model_ranges(h2o):
    gains, shifts = GuessModel(identity=False, seed=4)(h2o)
    torch.testing.assert_close(gains, gains.T)
    assert bool(((gains > 0.5) & (gains < 1.5)).all())
    assert bool((shifts.abs() < 0.1).all())


def test_seed_determinism(h2o):
    first = GuessModel(identity=False, seed=7)(h2o)
    second = GuessModel(identity=False, seed=7)(h2o)
    torch.testing.assert_close(first, second)


def test_block_scalars(h2o, h2o_ctx):
    gains, shifts = GuessModel(identity=False, seed=1).block_scalars(h2o, h2o_ctx.ao_atom)
    assert gains.shape == shifts.shape == (7, 7)
    pair_gains, _ = GuessModel(identity=False, seed=1)(h2o)
    assert float(gains[0, 6]) == float(pair_gains[0, 2])


def test_unknown_ansatz():
    with pytest.raises(ValueError):
        GuessModel("delta_orbitals")


def test_checkpoint_round_trip(h2o, tmp_path):
    model = GuessModel("delta_fock", identity=False, seed=5)
    path = tmp_path / "model.json"
    save_checkpoint(model, path, {"stage": "sail", "steps": 10})
    loaded, metadata = load_checkpoint(path)

    assert loaded.ansatz == "delta_fock"
    assert metadata == {"stage": "sail", "steps": 10}
    torch.testing.assert_close(loaded(h2o), model(h2o), atol=0, rtol=0)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointException):
        load_checkpoint(tmp_path / "missing.json")

    data = GuessModel().serialize()
    data["version"] = 99
    with pytest.raises(CheckpointException):
        GuessModel.deserialize(data)

    data = GuessModel().serialize()
    del data["parameters"]["network.0.weight"]
    path = tmp_path / "broken.json"
    path.write_text(json.dumps(data))
    with pytest.raises(CheckpointException):
        load_checkpoint(path)


def test_serialized_values_are_plain_lists():
    data = GuessModel(identity=False).serialize()
    entry = data["parameters"]["network.4.weight"]
    assert entry["shape"] == [2, 64]
    assert len(entry["values"]) == 128
    assert np.all(np.isfinite(entry["values"]))
