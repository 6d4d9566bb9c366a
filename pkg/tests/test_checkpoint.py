import numpy as np
import pytest

from app.core.errors import CheckpointError
from app.db.checkpoint import MAGIC, dumps_checkpoint, load_checkpoint, save_checkpoint
from app.models.weights import init_weights
from app.schemas.all_schemas import ModelConfig


def test_round_trip_is_bit_exact(tmp_path, tiny_config):
    weights = init_weights(tiny_config, seed=3)
    weights.tcn.out_b.data[:] = [0.1, 1 / 3, -2e-300, 7.0, np.pi]
    path = save_checkpoint(tmp_path / "ckpt.txt", weights, tiny_config, epoch=12)

    loaded = load_checkpoint(path, expected=tiny_config)
    assert loaded.epoch == 12
    assert loaded.config == tiny_config
    original = weights.named_parameters()
    for name, tensor in loaded.weights.named_parameters().items():
        np.testing.assert_array_equal(tensor.data, original[name].data)


def test_save_leaves_no_temp_files(tmp_path, tiny_config, tiny_weights):
    save_checkpoint(tmp_path / "ckpt.txt", tiny_weights, tiny_config)
    save_checkpoint(tmp_path / "ckpt.txt", tiny_weights, tiny_config, epoch=1)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["ckpt.txt"]
    assert load_checkpoint(tmp_path / "ckpt.txt").epoch == 1


def test_text_layout(tiny_config, tiny_weights):
    lines = dumps_checkpoint(tiny_weights, tiny_config).splitlines()
    assert lines[0] == MAGIC
    assert lines[1] == "version: 1"
    count = int(lines[4].split(":")[1])
    assert count == len(tiny_weights.named_parameters())
    assert len(lines) == 5 + 2 * count


def _write(path, text):
    path.write_text(text)
    return path


def test_bad_version(tmp_path, tiny_config, tiny_weights):
    text = dumps_checkpoint(tiny_weights, tiny_config).replace("version: 1", "version: 2", 1)
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(_write(tmp_path / "c.txt", text))


def test_bad_magic(tmp_path, tiny_config, tiny_weights):
    text = "not-a-checkpoint\n" + dumps_checkpoint(tiny_weights, tiny_config).split("\n", 1)[1]
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(_write(tmp_path / "c.txt", text))


def test_truncated_file(tmp_path, tiny_config, tiny_weights):
    lines = dumps_checkpoint(tiny_weights, tiny_config).splitlines()
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(_write(tmp_path / "c.txt", "\n".join(lines[:-3]) + "\n"))


def test_corrupted_payload(tmp_path, tiny_config, tiny_weights):
    lines = dumps_checkpoint(tiny_weights, tiny_config).splitlines()
    name = lines[-1].split(" ", 1)[0]
    lines[-1] = f"{name} 1.0 oops"
    with pytest.raises(CheckpointError, match=name):
        load_checkpoint(_write(tmp_path / "c.txt", "\n".join(lines) + "\n"))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="cannot read"):
        load_checkpoint(tmp_path / "absent.txt")


def test_shape_mismatch_names_the_parameter(tmp_path, tiny_config, tiny_weights):
    path = save_checkpoint(tmp_path / "c.txt", tiny_weights, tiny_config)
    wider = ModelConfig(**{**tiny_config.model_dump(), "embed_dim": 16})
    with pytest.raises(CheckpointError, match="embed_dim=16"):
        load_checkpoint(path, expected=wider)


def test_behavioural_flags_do_not_affect_shapes(tmp_path, tiny_config, tiny_weights):
    path = save_checkpoint(tmp_path / "c.txt", tiny_weights, tiny_config)
    other = ModelConfig(**{**tiny_config.model_dump(), "xi": 0.9, "interaction": False})
    assert load_checkpoint(path, expected=other).config.xi == tiny_config.xi
