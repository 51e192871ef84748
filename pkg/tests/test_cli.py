import hashlib
import json

import numpy as np
import pytest

from refgame.cli import main
from refgame.dataset import load_dataset
from refgame.training import ModelConfig, TrainConfig, build_model


SPEC = {
    "n_classes": 4, "n_attributes": 4, "sender_dim": 8, "receiver_dim": 5,
    "views_per_class": 12, "noise": 0.15, "hard_pairs": 1, "seed": 21,
    "val_views": 2, "test_views": 2,
}

TRAIN_CFG = {
    "msg_dim": 4, "max_steps": 3, "lr": 1e-3, "batch_size": 8,
    "max_epochs": 2, "patience": 10, "seed": 0,
    "sender_embed_dim": 8, "sender_hidden_dim": 12, "memory_dim": 8,
    "msg_hidden_dim": 8, "baseline_hidden_dim": 10,
}


def _write(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


def _gen(tmp_path, name="ds", seed=None):
    spec = dict(SPEC)
    if seed is not None:
        spec["seed"] = seed
    spec_path = _write(tmp_path / "spec.json", spec)
    out = tmp_path / name
    assert main(["gen-data", "--spec", spec_path, "--out", str(out)]) == 0
    return out


def test_gen_data_creates_dataset(tmp_path, capsys):
    out = _gen(tmp_path)
    ds = load_dataset(out)
    assert len(ds.classes) == 4
    assert "difficulty" in capsys.readouterr().out


def test_gen_data_same_seed_same_payload(tmp_path):
    a = _gen(tmp_path, "a")
    b = _gen(tmp_path, "b")
    ha = hashlib.sha256((a / "payload.bin").read_bytes()).hexdigest()
    hb = hashlib.sha256((b / "payload.bin").read_bytes()).hexdigest()
    assert ha == hb


def test_gen_data_malformed_spec_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code = main(["gen-data", "--spec", str(bad), "--out", str(tmp_path / "x")])
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_gen_data_unknown_key_exits_2(tmp_path, capsys):
    spec_path = _write(tmp_path / "spec.json", {**SPEC, "n_classe": 4})
    assert main(["gen-data", "--spec", spec_path, "--out", str(tmp_path / "x")]) == 2
    assert "unknown config keys" in capsys.readouterr().err


def test_train_eval_analyze_pipeline(tmp_path):
    ds_dir = _gen(tmp_path)
    cfg_path = _write(tmp_path / "train.json", TRAIN_CFG)
    run = tmp_path / "run"
    assert main(["train", "--config", cfg_path, "--dataset", str(ds_dir),
                 "--out", str(run)]) == 0
    assert (run / "log.csv").exists()
    assert (run / "checkpoint/manifest.json").exists()
    assert (run / "config.json").exists() and (run / "VERSION").exists()

    ev = tmp_path / "eval"
    assert main(["eval", "--checkpoint", str(run / "checkpoint"),
                 "--dataset", str(ds_dir), "--split", "test_in",
                 "--out", str(ev)]) == 0
    metrics = json.loads((ev / "metrics.json").read_text())
    assert metrics["episodes"] == 8 and metrics["k"] == 1

    rep = tmp_path / "report"
    assert main(["analyze", "--episodes", str(ev / "episodes.jsonl"),
                 "--dataset", str(ds_dir), "--out", str(rep)]) == 0
    for name in ("per_class.csv", "length_bins.csv", "pred_entropy_curves.csv",
                 "msg_entropy_curves.csv", "belief_evolution.csv", "summary.json"):
        assert (rep / name).exists(), name


def test_eval_same_checkpoint_twice_identical_logs(tmp_path):
    ds_dir = _gen(tmp_path)
    cfg_path = _write(tmp_path / "train.json", {**TRAIN_CFG, "max_epochs": 1})
    run = tmp_path / "run"
    main(["train", "--config", cfg_path, "--dataset", str(ds_dir), "--out", str(run)])
    outs = []
    for name in ("e1", "e2"):
        out = tmp_path / name
        assert main(["eval", "--checkpoint", str(run / "checkpoint"),
                     "--dataset", str(ds_dir), "--split", "val",
                     "--threads", "3" if name == "e2" else "1",
                     "--out", str(out)]) == 0
        outs.append((out / "episodes.jsonl").read_bytes())
    assert outs[0] == outs[1]


def test_train_message_dim_override_reaches_checkpoint(tmp_path):
    ds_dir = _gen(tmp_path)
    cfg_path = _write(tmp_path / "train.json", {**TRAIN_CFG, "max_epochs": 1})
    run = tmp_path / "run"
    assert main(["train", "--config", cfg_path, "--dataset", str(ds_dir),
                 "--out", str(run), "--message-dim", "6"]) == 0
    manifest = json.loads((run / "checkpoint/manifest.json").read_text())
    assert manifest["metadata"]["train_config"]["msg_dim"] == 6


def test_train_ablation_keeps_sender_at_init(tmp_path):
    ds_dir = _gen(tmp_path)
    cfg_path = _write(tmp_path / "train.json", TRAIN_CFG)
    run = tmp_path / "run"
    assert main(["train", "--config", cfg_path, "--dataset", str(ds_dir),
                 "--out", str(run), "--ablation", "only-receiver-update"]) == 0
    # rebuild the deterministic initialization and compare checksums
    ds = load_dataset(ds_dir)
    cfg = TrainConfig(**{k: v for k, v in TRAIN_CFG.items()
                         if k in TrainConfig.__dataclass_fields__})
    cfg.ablation = "only-receiver-update"
    mc = ModelConfig(**{k: v for k, v in TRAIN_CFG.items()
                        if k in ModelConfig.__dataclass_fields__})
    sender, _, _ = build_model(cfg, mc, ds, np.random.default_rng([cfg.seed, 0]))
    from refgame.checkpoint import load_checkpoint
    tensors, _, _ = load_checkpoint(run / "checkpoint")
    for t in sender.params:
        assert np.array_equal(tensors["sender"][t.name]["values"], t.values), t.name


def test_train_log_byte_identical_across_runs_and_threads(tmp_path):
    ds_dir = _gen(tmp_path)
    cfg_path = _write(tmp_path / "train.json", TRAIN_CFG)
    logs = []
    for name, threads in (("r1", "1"), ("r2", "4")):
        run = tmp_path / name
        assert main(["train", "--config", cfg_path, "--dataset", str(ds_dir),
                     "--out", str(run), "--threads", threads]) == 0
        logs.append((run / "log.csv").read_bytes())
    assert logs[0] == logs[1]


def test_eval_dimension_mismatch_fails_with_both_sides(tmp_path, capsys):
    ds_dir = _gen(tmp_path)
    cfg_path = _write(tmp_path / "train.json", {**TRAIN_CFG, "max_epochs": 1})
    run = tmp_path / "run"
    main(["train", "--config", cfg_path, "--dataset", str(ds_dir), "--out", str(run)])
    other = _gen(tmp_path, "wide")
    manifest = json.loads((other / "manifest.json").read_text())
    # widen the other dataset's features by regenerating with a new spec
    spec = dict(SPEC, sender_dim=9)
    spec_path = _write(tmp_path / "spec9.json", spec)
    wide = tmp_path / "ds9"
    main(["gen-data", "--spec", spec_path, "--out", str(wide)])
    code = main(["eval", "--checkpoint", str(run / "checkpoint"),
                 "--dataset", str(wide), "--split", "val", "--out",
                 str(tmp_path / "ev")])
    assert code == 2
    err = capsys.readouterr().err
    assert "8" in err and "9" in err
    del manifest


def test_sweep_rejects_duplicate_dims(tmp_path, capsys):
    ds_dir = _gen(tmp_path)
    cfg_path = _write(tmp_path / "train.json", TRAIN_CFG)
    code = main(["sweep", "--config", cfg_path, "--dataset", str(ds_dir),
                 "--dims", "2", "2", "--out", str(tmp_path / "sw")])
    assert code == 2
    assert "duplicate" in capsys.readouterr().err


def test_sweep_produces_table(tmp_path):
    ds_dir = _gen(tmp_path)
    cfg_path = _write(tmp_path / "train.json", {**TRAIN_CFG, "max_epochs": 1})
    sw = tmp_path / "sw"
    assert main(["sweep", "--config", cfg_path, "--dataset", str(ds_dir),
                 "--dims", "2", "4", "--seed", "1", "--out", str(sw)]) == 0
    lines = (sw / "sweep.csv").read_text().strip().splitlines()
    assert lines[0].startswith("dim,split")
    assert len(lines) == 3  # header + test_in rows for dims 2 and 4
    assert lines[1].startswith("2,test_in") and lines[2].startswith("4,test_in")


def test_import_data_roundtrip(tmp_path):
    ds_dir = _gen(tmp_path)
    emb = tmp_path / "emb.txt"
    emb.write_text("furry 1 0 0\nswims 0 1 0\nstripes 0 0 1\n")
    desc = tmp_path / "desc.txt"
    desc.write_text("pair_00\tfurry stripes\npair_01\tfurry\n"
                    "solo_02\tswims\nsolo_03\tstripes swims\n")
    out = tmp_path / "imported"
    assert main(["import-data", "--dataset", str(ds_dir), "--descriptions",
                 str(desc), "--embeddings", str(emb), "--out", str(out)]) == 0
    ds = load_dataset(out)
    assert ds.receiver_views[0].shape == (3,)
    assert np.allclose(ds.receiver_views[0], [0.5, 0.0, 0.5])


def test_analyze_stability_inputs(tmp_path):
    ds_dir = _gen(tmp_path)
    cfg_path = _write(tmp_path / "train.json", {**TRAIN_CFG, "max_epochs": 1})
    run = tmp_path / "run"
    main(["train", "--config", cfg_path, "--dataset", str(ds_dir), "--out", str(run)])
    ev = tmp_path / "ev"
    main(["eval", "--checkpoint", str(run / "checkpoint"), "--dataset", str(ds_dir),
          "--split", "val", "--out", str(ev)])
    m1 = _write(tmp_path / "m1.json", {"acc_at_1": 0.9, "loss": 0.5})
    m2 = _write(tmp_path / "m2.json", {"acc_at_1": 1.0, "loss": 0.3})
    rep = tmp_path / "rep"
    assert main(["analyze", "--episodes", str(ev / "episodes.jsonl"),
                 "--out", str(rep), "--stability", m1, m2]) == 0
    stability = (rep / "stability.csv").read_text().splitlines()
    assert stability[0] == "metric,mean,variance"
    row = dict(line.split(",", 1) for line in stability[1:])
    assert float(row["acc_at_1"].split(",")[0]) == pytest.approx(0.95)
