from pathlib import Path

import pytest

from caconv.config import RunConfig, load_config, parse_config
from caconv.errors import ConfigError


def test_defaults_are_desk_model():
    cfg = parse_config("")
    ex = cfg.extractor()
    assert (ex.output_size, ex.output_channels) == (16, 32)
    assert cfg.threshold == 0.5 and cfg.kind == "bilstm"
    sched = cfg.schedule()
    assert (sched.batch_size, sched.max_epochs, sched.plateau_decay) == (32, 100, 0.1)


def test_full_file(tmp_path):
    text = """
    # comment line
    model.blocks = 2x8, 2x16, 3x32, 3x64, 3x64
    model.pools = 1,1,1,0,0
    model.input_size = 64   # trailing comment
    model.hidden = 16
    model.kind = lstm
    model.class_order = b, a
    train.lr = 0.0001
    train.seed = 7
    train.val_fraction = 0.2
    data.manifest = d/m.csv
    out.checkpoint = /abs/model.ckpt
    threshold = 0.4
    """
    (tmp_path / "run.cfg").write_text(text)
    cfg = load_config(tmp_path / "run.cfg")
    assert cfg.extractor().output_size == 8
    assert cfg.class_order == ("b", "a") and cfg.kind == "lstm"
    assert cfg.manifest == tmp_path / "d/m.csv"
    assert cfg.checkpoint == Path("/abs/model.ckpt")
    assert (cfg.lr, cfg.seed, cfg.val_fraction, cfg.threshold) == (1e-4, 7, 0.2, 0.4)
    mc = cfg.model_config(2, ["b", "a"])
    assert mc.hidden == 16 and mc.class_names == ("b", "a")


def test_round_trip():
    cfg = parse_config("model.class_order = x,y\ntrain.lr = 0.01\n")
    again = parse_config(cfg.to_text())
    assert again == cfg


@pytest.mark.parametrize("text,fragment", [
    ("model.hidden = many\n", "bad value"),
    ("model.pools = 1, 2\n", "bad value"),
    ("train.lr = 1\ntrain.lr = 2\n", "duplicate"),
    ("unknown = 3\n", "unknown key"),
    ("just words\n", "expected"),
    ("train.val_fraction = 1.0\n", "val_fraction"),
    ("threshold = 1.5\n", "threshold"),
    ("model.blocks = 2x8\nmodel.pools = 1\nmodel.input_size = 63\n", "divisible"),
    ("train.plateau_decay = 2\n", "decay"),
])
def test_rejects(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")


def test_dataclass_default_paths():
    assert RunConfig().manifest is None
