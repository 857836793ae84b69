import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from augkit.cli import run
from augkit.corpus import AudioSignal, load_manifest, wav_write
from augkit.models import read_predictions, write_predictions

from synth import make_corpus

STUB = f"exec:{sys.executable} -m augkit.stub"


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return make_corpus(tmp_path_factory.mktemp("corpus"), n=10, duration_s=1.0)


def tree_bytes(d: Path) -> dict:
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_exit_codes(corpus, tmp_path, capsys):
    assert run([]) == 1
    assert run(["nonsense"]) == 1
    assert run(["aug", "text", "--method", "sd"]) == 1
    assert run(["aug", "text", "--manifest", str(corpus), "--method", "bogus", "--out-dir", str(tmp_path)]) == 1
    assert run(["aug", "text", "--manifest", str(tmp_path / "missing.jsonl"), "--method", "sd",
                "--out-dir", str(tmp_path / "o")]) == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"sample_id": "x", "label": "maybe", "audio_path": "x.wav"}\n')
    assert run(["aug", "audio", "--manifest", str(bad), "--method", "noise", "--out-dir", str(tmp_path / "o")]) == 2
    assert "data error" in capsys.readouterr().err
    assert run(["--help"]) == 0


def test_invalid_params_is_usage_error(corpus, tmp_path):
    assert run(["aug", "audio", "--manifest", str(corpus), "--method", "loudness",
                "--param", "factor_range=[0,2]", "--out-dir", str(tmp_path)]) == 1
    assert run(["aug", "audio", "--manifest", str(corpus), "--method", "loudness",
                "--param", "noequals", "--out-dir", str(tmp_path)]) == 1
    assert run(["aug", "audio", "--manifest", str(corpus), "--method", "noise",
                "--param", "sigma=0.1", "--out-dir", str(tmp_path)]) == 1


def test_run_manifest_records_seeds_and_params(corpus, tmp_path):
    out = tmp_path / "o"
    assert run(["--seed", "11", "aug", "audio", "--manifest", str(corpus), "--method", "noise",
                "--param", "sigma_scale=0.01", "--out-dir", str(out)]) == 0
    doc = json.loads((out / "run_manifest.json").read_text())
    assert doc["root_seed"] == 11 and doc["command"] == ["aug", "audio"]
    assert doc["params"] == {"sigma_scale": 0.01}
    assert set(doc["sample_seeds"]) == {f"s{i:03d}.noise" for i in range(10)}
    assert {"augkit", "numpy", "scipy", "python"} <= set(doc["versions"])
    m = load_manifest(out / "manifest.jsonl")
    assert m["s003.noise"].provenance[-1]["seed"] == doc["sample_seeds"]["s003.noise"]


def test_seed_after_subcommand_and_config_precedence(corpus, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# defaults\nseed = 5\nparam.sigma_scale = 0.02\n")
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert run(["aug", "audio", "--config", str(cfg), "--manifest", str(corpus), "--method", "noise",
                "--out-dir", str(a)]) == 0
    doc = json.loads((a / "run_manifest.json").read_text())
    assert doc["root_seed"] == 5 and doc["params"] == {"sigma_scale": 0.02}
    assert run(["--config", str(cfg), "aug", "audio", "--manifest", str(corpus), "--method", "noise",
                "--seed", "6", "--param", "sigma_scale=0.03", "--out-dir", str(b)]) == 0
    doc = json.loads((b / "run_manifest.json").read_text())
    assert doc["root_seed"] == 6 and doc["params"] == {"sigma_scale": 0.03}
    assert run(["aug", "audio", "--manifest", str(corpus), "--method", "noise", "--seed", "5",
                "--param", "sigma_scale=0.02", "--out-dir", str(c)]) == 0
    # same artifacts; only the recorded invocation differs
    ta, tc = tree_bytes(a), tree_bytes(c)
    assert ta.pop("run_manifest.json") != tc.pop("run_manifest.json") and ta == tc
    cfg.write_text("no_such_key = 1\n")
    assert run(["--config", str(cfg), "cv", "--manifest", str(corpus), "--out-dir", str(tmp_path)]) == 1


def test_byte_identical_reruns(corpus, tmp_path):
    for method in ("noise", "pitch", "vtlp", "random"):
        dirs = []
        for i, workers in enumerate(("1", "3")):
            d = tmp_path / f"{method}{i}"
            assert run(["--seed", "7", "--workers", workers, "aug", "audio", "--manifest", str(corpus),
                        "--method", method, "--out-dir", str(d)]) == 0
            dirs.append(tree_bytes(d))
        assert dirs[0] == dirs[1], method
    d1, d2 = tmp_path / "t1", tmp_path / "t2"
    for d in (d1, d2):
        assert run(["--seed", "3", "aug", "text", "--manifest", str(corpus), "--method", "eda",
                    "--out-dir", str(d)]) == 0
    assert tree_bytes(d1) == tree_bytes(d2)


def test_external_through_echo_stub(corpus, tmp_path):
    trees = []
    for i in range(2):
        d = tmp_path / f"e{i}"
        assert run(["aug", "text", "--manifest", str(corpus), "--method", "external", "--endpoint", STUB,
                    "--out-dir", str(d)]) == 0
        trees.append(tree_bytes(d))
    assert trees[0] == trees[1]
    ev = tmp_path / "ev"
    assert run(["eval", "divergence", "--orig", str(corpus), "--aug", str(tmp_path / "e0" / "manifest.jsonl"),
                "--out-dir", str(ev)]) == 0
    row = (ev / "report.csv").read_text().splitlines()[1].split(",")
    assert row[0] == "external" and row[3:6] == ["0.000000"] * 3
    assert run(["aug", "text", "--manifest", str(corpus), "--method", "external",
                "--endpoint", STUB + " --garbage", "--out-dir", str(tmp_path / "g")]) == 2


def test_eval_identity_row(corpus, tmp_path):
    aug = tmp_path / "aug"
    assert run(["aug", "audio", "--manifest", str(corpus), "--method", "none", "--out-dir", str(aug)]) == 0
    assert run(["aug", "text", "--manifest", str(corpus), "--method", "none", "--out-dir", str(tmp_path / "t")]) == 0
    ev = tmp_path / "ev"
    assert run(["eval", "divergence", "--orig", str(corpus), "--aug", str(aug / "manifest.jsonl"),
                "--out-dir", str(ev)]) == 0
    header, row = (ev / "report.csv").read_text().strip().split("\n")
    assert header.startswith("method_name") and row.endswith("0.000000,0.000000")
    lp = tmp_path / "lp"
    assert run(["eval", "label-preservation", "--train", str(corpus),
                "--aug", str(tmp_path / "t" / "manifest.jsonl"), "--model", "forest", "--out-dir", str(lp)]) == 0
    assert len(read_predictions(lp / "predictions.jsonl")) == 10


def test_parse_chat(tmp_path):
    src = tmp_path / "cha"
    src.mkdir()
    (src / "p1.cha").write_text("@Begin\n*INV: what do you see ?\n*PAR: the boy &uh is falling .\n"
                                "%mor: det|the n|boy .\n*PAR: [/] the water [//] sink overflows !\n@End\n")
    out = tmp_path / "out"
    assert run(["parse-chat", str(src), "--label", "AD", "--out-dir", str(out)]) == 0
    t = json.loads((out / "p1.json").read_text())
    assert "uh" not in " ".join(t["sentences"]) and t["label"] == "AD"
    assert (out / "run_manifest.json").exists()
    assert run(["parse-chat", str(tmp_path / "empty_dir_missing"), "--label", "AD", "--out-dir", str(out)]) == 2


def test_chunk_command(tmp_path):
    wav = tmp_path / "rec.wav"
    wav_write(AudioSignal(np.random.default_rng(0).standard_normal(30 * 8000) * 0.1, 8000), wav)
    short = tmp_path / "short.wav"
    wav_write(AudioSignal(np.ones(3 * 16000) * 0.1, 16000), short)
    out = tmp_path / "chunks"
    assert run(["chunk", str(wav), str(short), "--label", "HC", "--out-dir", str(out)]) == 0
    m = load_manifest(out / "manifest.jsonl")
    rec_chunks = [r for r in m if r.group == "rec"]
    assert len(rec_chunks) == 11 and len([r for r in m if r.group == "short"]) == 1
    assert all(r.root_id == r.sample_id for r in m)
    assert run(["chunk", str(wav), "--out-dir", str(out)]) == 1


def test_fuse_command(tmp_path):
    files = []
    votes = [("AD", "HC", "AD"), ("HC", "HC", "AD"), ("AD", "AD", "HC")]
    for k in range(3):
        p = tmp_path / f"p{k}.jsonl"
        write_predictions({f"x{i}": (votes[i][k], 0.6) for i in range(3)}, p)
        files.append(str(p))
    out = tmp_path / "fused" / "f.jsonl"
    assert run(["fuse", *files, "--out", str(out)]) == 0
    fused = read_predictions(out)
    assert {k: v[0] for k, v in fused.items()} == {"x0": "AD", "x1": "HC", "x2": "AD"}
    assert fused["x0"][1] == pytest.approx(2 / 3)


def test_cv_command(corpus, tmp_path):
    out = tmp_path / "cv"
    assert run(["cv", "--manifest", str(corpus), "--domain", "text", "--model", "forest", "--k", "5",
                "--seeds", "2", "--out-dir", str(out)]) == 0
    res = json.loads((out / "cv_result.json").read_text())
    assert 0 <= res["mean_acc"] <= 1
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"domain": "text", "method": "sd", "params": {}}))
    out2 = tmp_path / "cv2"
    assert run(["cv", "--manifest", str(corpus), "--domain", "text", "--model", "forest", "-k", "5",
                "--n-seeds", "1", "--aug", str(spec), "--out-dir", str(out2)]) == 0
    assert len(load_manifest(out2 / "augmented" / "manifest.jsonl")) == 10
    assert run(["cv", "--manifest", str(corpus), "--aug", str(spec), "--aug-manifest", str(corpus),
                "--out-dir", str(tmp_path / "x")]) == 1


def test_module_entry_point_and_stub_subcommand(tmp_path):
    r = subprocess.run([sys.executable, "-m", "augkit", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "parse-chat" in r.stdout
    line = '{"id": "a", "kind": "embed", "method_name": "m", "params": {}, "payload": [1, 2], "seed": 0}\n'
    r = subprocess.run([sys.executable, "-m", "augkit", "protocol-stub"], input=line, capture_output=True, text=True)
    assert json.loads(r.stdout) == {"id": "a", "status": "ok", "payload": [1, 2]}
