import json

import pytest
import torch
import yaml

from napse.audio import load_wav
from napse.cli import main
from napse.model import load_checkpoint


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = {"simulate": {"count": 3, "sample_rate": 12000, "num_speakers": 2,
                        "duration": 3.0,
                        "spec": {"snr_range": [0.0, 10.0], "p_interferer": 0.5,
                                 "p_reverb": 0.5}}}
    (base / "sim.yaml").write_text(yaml.safe_dump(cfg))
    rc = main(["simulate", "--config", str(base / "sim.yaml"),
               "--seed", "3", "--out", str(base / "data")])
    assert rc == 0
    return base


@pytest.fixture(scope="module")
def trained(workspace):
    cfg = {"model": {"toy": True, "sample_rate": 12000},
           "train": {"manifest": str(workspace / "data" / "manifest.jsonl"),
                     "phases": [{"phase": "stage1", "steps": 2, "batch_size": 1},
                                {"phase": "stage2_frozen1", "steps": 1,
                                 "batch_size": 1}]}}
    (workspace / "train.yaml").write_text(yaml.safe_dump(cfg))
    rc = main(["train", "--config", str(workspace / "train.yaml"),
               "--seed", "0", "--out", str(workspace / "run"), "--plot"])
    assert rc == 0
    return workspace / "run"


def test_simulate_writes_manifest_and_audio(workspace):
    manifest = workspace / "data" / "manifest.jsonl"
    lines = manifest.read_text().splitlines()
    assert len(lines) == 3
    record = json.loads(lines[0])
    assert (workspace / "data" / record["mixture"]).exists() or \
        (workspace / "data" / "audio").joinpath(record["mixture"].split("/")[-1]).exists()


def test_train_emits_checkpoints_ledgers_and_logs(trained):
    assert (trained / "checkpoint.pt").exists()
    assert (trained / "checkpoint_stage1.pt").exists()
    assert (trained / "loss_stage1.png").stat().st_size > 0
    records = [json.loads(line) for line in
               (trained / "metrics.log").read_text().splitlines()]
    assert [r["phase"] for r in records] == ["stage1", "stage1", "stage2_frozen1"]
    ledger = json.loads((trained / "ledger_stage1.json").read_text())
    assert ledger["records"][0]["step"] == 1
    model, meta = load_checkpoint(trained / "checkpoint.pt")
    assert meta["phase"] == "stage2"


def test_enhance_writes_both_stages(workspace, trained, tmp_path):
    mix = next((workspace / "data" / "audio").glob("*_mixture.wav"))
    enr = next((workspace / "data" / "audio").glob("*_enrollment.wav"))
    rc = main(["enhance", "--mixture", str(mix), "--enroll", str(enr),
               "--checkpoint", str(trained / "checkpoint.pt"),
               "--out", str(tmp_path)])
    assert rc == 0
    enhanced = load_wav(tmp_path / "enhanced.wav", target_rate=12000)
    original = load_wav(mix, target_rate=12000)
    assert enhanced.num_samples == original.num_samples
    assert (tmp_path / "stage1.wav").exists()


def test_evaluate_identity_table_layout(workspace, tmp_path):
    cfg = {"evaluate": {"manifest": str(workspace / "data" / "manifest.jsonl"),
                        "metrics": ["sig", "bak"]}}
    path = tmp_path / "eval.yaml"
    path.write_text(yaml.safe_dump(cfg))
    rc = main(["evaluate", "--config", str(path), "--out", str(tmp_path / "ev")])
    assert rc == 0
    table = (tmp_path / "ev" / "table.txt").read_text().splitlines()
    assert table[0].split() == ["system", "si_snr_db", "sig_surrogate", "bak_surrogate"]
    assert table[2].startswith("Noisy")
    assert table[3].startswith("Identity")
    csv = (tmp_path / "ev" / "table.csv").read_text().splitlines()
    assert csv[0] == "system,si_snr_db,sig_surrogate,bak_surrogate"
    logged = [json.loads(line) for line in
              (tmp_path / "ev" / "metrics.log").read_text().splitlines()]
    assert len(logged) == 6  # 2 systems x 3 examples
    noisy = [r for r in logged if r["system"] == "Noisy"]
    ident = [r for r in logged if r["system"] == "Identity"]
    assert all(a["si_snr_db"] == b["si_snr_db"] for a, b in zip(noisy, ident))


def test_evaluate_with_checkpoint_and_plot(workspace, trained, tmp_path):
    cfg = {"evaluate": {"manifest": str(workspace / "data" / "manifest.jsonl")}}
    path = tmp_path / "eval.yaml"
    path.write_text(yaml.safe_dump(cfg))
    rc = main(["evaluate", "--config", str(path),
               "--checkpoint", str(trained / "checkpoint.pt"),
               "--out", str(tmp_path / "ev"), "--plot"])
    assert rc == 0
    assert (tmp_path / "ev" / "table.png").stat().st_size > 0
    table = (tmp_path / "ev" / "table.txt").read_text()
    assert "Enhanced" in table


def test_ablate_single_variant(workspace, tmp_path):
    cfg = {"model": {"toy": True, "sample_rate": 12000},
           "ablate": {"manifest": str(workspace / "data" / "manifest.jsonl"),
                      "base": {"steps": 1, "batch_size": 1},
                      "variants": ["base"]}}
    path = tmp_path / "abl.yaml"
    path.write_text(yaml.safe_dump(cfg))
    rc = main(["ablate", "--config", str(path), "--out", str(tmp_path / "abl")])
    assert rc == 0
    doc = json.loads((tmp_path / "abl" / "ablation.json").read_text())
    assert [r["name"] for r in doc["rows"]] == ["base"]
    text = (tmp_path / "abl" / "ablation.txt").read_text()
    assert text.splitlines()[2].startswith("Noisy")


def test_bench_rtf_report(workspace, tmp_path):
    cfg = {"model": {"toy": True, "sample_rate": 12000},
           "bench": {"duration": 0.25, "repetitions": 2}}
    path = tmp_path / "bench.yaml"
    path.write_text(yaml.safe_dump(cfg))
    rc = main(["bench-rtf", "--config", str(path), "--out", str(tmp_path / "b")])
    assert rc == 0
    report = json.loads((tmp_path / "b" / "rtf.json").read_text())
    assert report["threads"] == 1
    assert report["rtf_median"] > 0
    assert report["repetitions"] == 2


def test_train_requires_manifest(tmp_path):
    path = tmp_path / "train.yaml"
    path.write_text(yaml.safe_dump({"train": {}}))
    with pytest.raises(ValueError, match="manifest"):
        main(["train", "--config", str(path), "--out", str(tmp_path / "run")])


def test_unknown_speaker_provider(workspace, tmp_path):
    cfg = {"speaker": {"provider": "oracle"},
           "evaluate": {"manifest": str(workspace / "data" / "manifest.jsonl")}}
    path = tmp_path / "eval.yaml"
    path.write_text(yaml.safe_dump(cfg))
    with pytest.raises(ValueError, match="unknown speaker provider"):
        main(["evaluate", "--config", str(path), "--out", str(tmp_path / "ev")])
