import pytest

from labelmend.config import PipelineConfig, dump_config, load_config
from labelmend.errors import ConfigError, MissingGroundTruth
from labelmend.manifest import HANDCRAFTED, read_manifest, read_theta_manifest


def test_defaults():
    cfg = load_config()
    assert cfg == PipelineConfig()
    assert cfg.theta == 0.001 and cfg.bg_thresh == 0.05 and cfg.superpixels == 1000


def test_precedence_file_then_flags(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("theta = 0.01\nepochs = 20\nedge_symmetrize = 'and'\n")
    cfg = load_config(p, {"epochs": 7, "theta": None})
    assert (cfg.theta, cfg.epochs, cfg.edge_symmetrize) == (0.01, 7, "and")


def test_unknown_and_invalid_keys(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("thetaa = 1\n")
    with pytest.raises(ConfigError, match="thetaa"):
        load_config(p)
    p.write_text("[gat]\nepochs = 3\n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(None, {"learning_rate": 0})
    with pytest.raises(ConfigError):
        load_config(None, {"epochs": 1.5})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")


def test_dump_roundtrip(tmp_path):
    cfg = PipelineConfig(theta=0.02, trust_gat_everywhere=True, fg_thresh=0.3)
    p = tmp_path / "c.toml"
    p.write_text(dump_config(cfg))
    assert load_config(p) == cfg


def test_manifest_header_and_positional(tmp_path):
    (tmp_path / "m.tsv").write_text(
        "image_id\timage\tprobs\tfeatures\trelevant\tscores\n"
        "b\tb.ppm\tb.lmt\tHANDCRAFTED\t2,1\tb_s.lmt\n")
    (tmp_path / "p.tsv").write_text("# comment\na\ta.ppm\ta.lmt\tf.lmt\t3\tgt.pgm\t-\tinit.pgm\n")
    row = read_manifest(tmp_path / "m.tsv")[0]
    assert row.features == HANDCRAFTED and row.relevant == (1, 2)
    assert row.image == str(tmp_path / "b.ppm") and row.gt is None
    pos = read_manifest(tmp_path / "p.tsv")[0]
    assert pos.scores is None and pos.init == str(tmp_path / "init.pgm")
    assert pos.features == str(tmp_path / "f.lmt")


def test_manifest_errors(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("a\ta.ppm\ta.lmt\tHANDCRAFTED\t1\n")
    with pytest.raises(ConfigError, match="scores or init"):
        read_manifest(p)
    p.write_text("a\ta.ppm\ta.lmt\tHANDCRAFTED\t0\t-\ts.lmt\n")
    with pytest.raises(ConfigError):
        read_manifest(p)
    p.write_text("a\tp.lmt\ti.pgm\n")
    with pytest.raises(MissingGroundTruth):
        read_theta_manifest(p)
    assert read_manifest_empty(tmp_path) == []


def read_manifest_empty(tmp_path):
    p = tmp_path / "empty.tsv"
    p.write_text("")
    return read_manifest(p)
