import numpy as np
import pytest

from msccnet import checkpoint
from msccnet import config as C
from msccnet import network as net
from msccnet.exceptions import ConfigError, DataIOError


def test_defaults_round_trip():
    cfg = C.RunConfig()
    assert C.loads(cfg.dumps()) == cfg
    flat = cfg.flat()
    assert flat["schema_version"] == C.SCHEMA_VERSION
    assert flat["base_lr"] == 0.009 and flat["dilate_radius"] == 5 and flat["erode_radius"] == 3


def test_typed_parsing():
    cfg = C.loads("total_iters = 50\nwidths = 8,8,16\nhflip = false  # no flips\nbase_lr = 0.01\n")
    assert cfg.train.total_iters == 50
    assert cfg.network.widths == (8, 8, 16)
    assert cfg.train.hflip is False
    assert cfg.train.base_lr == 0.01


@pytest.mark.parametrize(
    "text",
    ["nonsense = 1", "total_iters = many", "schema_version = 99", "[section]\nM = 4", "M = 4\nM = 8", "M = 3"],
)
def test_rejections(text):
    with pytest.raises(ConfigError):
        C.loads(text)


def test_env_var_supplies_default_path(tmp_path, monkeypatch):
    path = tmp_path / "run.cfg"
    path.write_text("total_iters = 7\n")
    monkeypatch.setenv(C.CONFIG_ENV, str(path))
    assert C.resolve_config().train.total_iters == 7
    assert C.resolve_config(overrides={"total_iters": "9"}).train.total_iters == 9


def test_missing_config_file(tmp_path):
    with pytest.raises(DataIOError):
        C.load(tmp_path / "nope.cfg")


def test_checkpoint_round_trip(tmp_path):
    cfg = C.RunConfig().updated({"total_iters": "3"})
    params = net.init_params(cfg.network, 4)
    checkpoint.save_checkpoint(tmp_path / "m.ckpt", params, cfg, {"note": "x"})
    loaded, cfg2, extra = checkpoint.load_checkpoint(tmp_path / "m.ckpt")
    assert cfg2 == cfg and extra == {"note": "x"}
    assert set(loaded) == set(params)
    assert all(np.array_equal(loaded[k].data, params[k].data) for k in params)


def test_checkpoint_magic_and_truncation(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"PK\x03\x04not ours")
    with pytest.raises(DataIOError, match="magic"):
        checkpoint.load_checkpoint(tmp_path / "x.ckpt")
    cfg = C.RunConfig()
    checkpoint.save_checkpoint(tmp_path / "m.ckpt", net.init_params(cfg.network, 0), cfg)
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(raw[:-16])
    with pytest.raises(DataIOError, match="truncated"):
        checkpoint.load_checkpoint(tmp_path / "t.ckpt")
