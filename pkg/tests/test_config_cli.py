import numpy as np
import pytest

from gatspoof import cli
from gatspoof.config import KEYS, ConfigError, PipelineConfig, env_name, load_config
from gatspoof.audio_io import TrialRecord, write_protocol
from gatspoof.encoder import DEFAULT_LAYERS, format_layers
from gatspoof.features import read_cache
from gatspoof.metrics import ScoreSet, read_scores, write_scores
from conftest import TINY_LAYERS

TINY = [
    "--set", f"encoder.layers={format_layers(TINY_LAYERS)}",
    "--set", "encoder.blocks_per_stage=1",
    "--set", "encoder.gat_dim=4",
    "--set", "encoder.att_dim=4",
    "--set", "features.n_bands=12",
    "--set", "features.mask_max_width=3",
    "--set", "audio.target_len=6880",
]


def test_defaults_and_typed_views():
    cfg = PipelineConfig()
    cfg.validate()
    assert cfg.encoder_config().layers == DEFAULT_LAYERS
    assert cfg.train_config().batch_size == 64
    assert cfg.feature_config().n_bands == 60
    assert cfg.dtype == np.float32


def test_config_file_env_precedence(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# comment\n\ntrain.lr = 0.01   # inline\nrun.seed = 3\n")
    cfg = load_config(path, {env_name("run.seed"): "9", "HOME": "/x"})
    assert cfg["train.lr"] == 0.01 and cfg["run.seed"] == 9
    assert env_name("train.batch_size") == "GATSPOOF_TRAIN_BATCH_SIZE"


def test_config_errors(tmp_path):
    bad = tmp_path / "b.cfg"
    bad.write_text("train.lr = 0.1\nnot.a.key = 1\n")
    with pytest.raises(ConfigError, match=":2:"):
        load_config(bad, {})
    with pytest.raises(ConfigError):
        load_config(None, {"GATSPOOF_TRAIN_NOPE": "1"})
    cfg = PipelineConfig()
    with pytest.raises(ConfigError):
        cfg.set("train.system", "cnn")
    cfg.set("run.workers", "0")
    with pytest.raises(ConfigError):
        cfg.validate()


def test_to_text_roundtrip():
    cfg = PipelineConfig()
    cfg.set("train.epochs", "7")
    again = PipelineConfig()
    again.update_text(cfg.to_text())
    assert again.to_text() == cfg.to_text()


def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit):
        cli.main(["train", "--help"])
    out = capsys.readouterr().out
    for key, (default, _, _) in KEYS.items():
        assert key in out
    for flag in ("--config", "--seed", "--workers", "--system"):
        assert flag in out


def test_bad_config_exit_code(tmp_path, capsys):
    assert cli.main(["evaluate", "--scores", "x", "--protocol", "y", "--set", "bogus=1"], environ={}) == 2
    assert "config error" in capsys.readouterr().err


def synth_and_extract(tmp_path, n=3, workers=1):
    audio = tmp_path / "audio"
    assert cli.main(["synth", "--out-dir", str(audio), "--bonafide", str(n), "--spoof", str(n)] + TINY, environ={}) == 0
    cache = tmp_path / "feats.bin"
    rc = cli.main(["extract", "--protocol", str(audio / "protocol.txt"), "--audio-dir", str(audio),
                   "--out", str(cache), "--workers", str(workers)] + TINY, environ={})
    assert rc == 0
    return audio / "protocol.txt", cache


def test_extract_shapes_and_determinism(tmp_path):
    proto, cache = synth_and_extract(tmp_path, 2)
    recs = read_cache(cache)
    assert len(recs) == 4 and all(v.shape == (12, 41) for _, v in recs)
    first = cache.read_bytes()
    cli.main(["extract", "--protocol", str(proto), "--audio-dir", str(proto.parent), "--out", str(cache)] + TINY,
             environ={})
    assert cache.read_bytes() == first


def test_extract_full_length_shape(tmp_path):
    audio = tmp_path / "a"
    cli.main(["synth", "--out-dir", str(audio), "--bonafide", "2", "--spoof", "1"], environ={})
    cli.main(["extract", "--protocol", str(audio / "protocol.txt"), "--audio-dir", str(audio),
              "--out", str(tmp_path / "f.bin")], environ={})
    recs = read_cache(tmp_path / "f.bin")
    assert len(recs) == 3 and all(v.shape == (60, 401) for _, v in recs)


def test_extract_parallel_matches_serial(tmp_path):
    _, serial = synth_and_extract(tmp_path / "s", 3)
    _, parallel = synth_and_extract(tmp_path / "p", 3, workers=2)
    assert serial.read_bytes() == parallel.read_bytes()


def test_extract_empty_and_missing(tmp_path, capsys):
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    assert cli.main(["extract", "--protocol", str(empty), "--audio-dir", str(tmp_path),
                     "--out", str(tmp_path / "e.bin")], environ={}) == 0
    assert read_cache(tmp_path / "e.bin") == []
    proto = tmp_path / "p.txt"
    write_protocol(proto, [TrialRecord("S", "GONE", "-", "bonafide")])
    assert cli.main(["extract", "--protocol", str(proto), "--audio-dir", str(tmp_path),
                     "--out", str(tmp_path / "m.bin")], environ={}) == 1
    assert "GONE" in capsys.readouterr().err


def test_train_score_evaluate(tmp_path):
    proto, cache = synth_and_extract(tmp_path, 3)
    ckpt, log = tmp_path / "m.ckpt", tmp_path / "log.csv"
    common = TINY + ["--set", "train.batch_size=3", "--set", "train.lr=0.001", "--set", "train.dtype=float64"]
    rc = cli.main(["train", "--train-protocol", str(proto), "--train-features", str(cache),
                   "--dev-protocol", str(proto), "--dev-features", str(cache), "--checkpoint", str(ckpt),
                   "--train-log", str(log), "--set", "train.epochs=2", "--system", "gat_s"] + common, environ={})
    assert rc == 0 and ckpt.exists()
    assert len(log.read_text().splitlines()) == 2
    outs = []
    for k, workers in enumerate(("1", "2")):
        out = tmp_path / f"scores{k}.txt"
        assert cli.main(["score", "--checkpoint", str(ckpt), "--protocol", str(proto), "--features", str(cache),
                         "--out", str(out), "--system", "gat_s", "--workers", workers,
                         "--set", "train.eval_batch_size=2"] + common, environ={}) == 0
        outs.append(out.read_text())
    assert len(outs[0].splitlines()) == 6
    np.testing.assert_allclose(list(read_scores(tmp_path / "scores0.txt").values()),
                               list(read_scores(tmp_path / "scores1.txt").values()), atol=1e-12)
    report = tmp_path / "report.txt"
    assert cli.main(["evaluate", "--scores", str(tmp_path / "scores0.txt"), "--protocol", str(proto),
                     "--out", str(report), "--csv", str(tmp_path / "r.csv")], environ={}) == 0
    assert report.read_text().startswith("pooled_eer = ")


def test_evaluate_perfect_scores(tmp_path, capsys):
    recs = [TrialRecord("S", f"U{i}", "-" if i < 3 else "A01", "bonafide" if i < 3 else "spoof") for i in range(6)]
    write_protocol(tmp_path / "p.txt", recs)
    write_scores(tmp_path / "s.txt", [r.utt_id for r in recs], [5, 6, 7, 0, 1, 2])
    assert cli.main(["evaluate", "--scores", str(tmp_path / "s.txt"), "--protocol", str(tmp_path / "p.txt")],
                    environ={}) == 0
    out = capsys.readouterr().out
    assert "pooled_eer = 0.0" in out and "attack.A01.eer = 0.0" in out


def test_evaluate_missing_scores(tmp_path):
    write_protocol(tmp_path / "p.txt", [TrialRecord("S", "U1", "-", "bonafide"), TrialRecord("S", "U2", "A01", "spoof")])
    write_scores(tmp_path / "s.txt", ["U1"], [1.0])
    assert cli.main(["evaluate", "--scores", str(tmp_path / "s.txt"), "--protocol", str(tmp_path / "p.txt")],
                    environ={}) == 1


def test_fuse_fit_apply(tmp_path):
    from test_fusion import complementary_sets
    from gatspoof.metrics import eer

    sets = complementary_sets(np.random.default_rng(0))
    recs = [TrialRecord("S", u, a, "bonafide" if b else "spoof")
            for u, a, b in zip(sets[0].utt_ids, sets[0].attack_ids, sets[0].is_bonafide)]
    write_protocol(tmp_path / "p.txt", recs)
    files = []
    for k, s in enumerate(sets):
        files.append(str(tmp_path / f"sys{k}.txt"))
        write_scores(files[-1], s.utt_ids, s.scores)
    model = tmp_path / "fusion.txt"
    base = ["--scores", *files, "--protocol", str(tmp_path / "p.txt"), "--model", str(model)]
    assert cli.main(["fuse", "fit", *base], environ={}) == 0
    assert model.read_text().splitlines()[1] == "systems sys0 sys1"
    assert cli.main(["fuse", "apply", *base, "--out", str(tmp_path / "fused.txt")], environ={}) == 0
    fused = read_scores(tmp_path / "fused.txt")
    fs = ScoreSet.from_records(recs, fused)
    assert eer(fs) <= min(eer(s) for s in sets)
    assert cli.main(["fuse", "apply", "--scores", files[0], "--protocol", str(tmp_path / "p.txt"),
                     "--model", str(model), "--out", str(tmp_path / "x.txt")], environ={}) == 2
