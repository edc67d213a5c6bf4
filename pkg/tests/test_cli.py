import hashlib
import os
import subprocess
import sys

import numpy as np
import pytest

from vcr import checkpoint, cli, data
from vcr.model import init_model
from vcr.tensor import Rng

CFG = """[run]
unit = {unit}
hidden = {hidden}
output_dir = {out}

[data]
path = {path}
level = {level}
{extra_data}
[train]
epochs = {epochs}
bptt_len = 16
batch_size = 4
learning_rate = {lr}
{penalty}"""

PENALTY = "\n[penalty]\nm_bar = 0.3\nweight = 0.1\n"


def make_cfg(dir_, *, unit="vcgru", hidden=16, level="char", path="corpus.txt", epochs=1,
             out="out", lr=0.5, extra_data="", penalty=None, name="run.ini"):
    if penalty is None:
        penalty = PENALTY if unit.startswith("vc") else ""
    p = dir_ / name
    p.write_text(CFG.format(unit=unit, hidden=hidden, out=out, path=path, level=level,
                            extra_data=extra_data, epochs=epochs, lr=lr, penalty=penalty))
    return p


@pytest.fixture
def work(tmp_path):
    (tmp_path / "corpus.txt").write_text(data.reference_text(1024))
    return tmp_path


def run(args, capsys):
    code = cli.main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


def test_train_smoke(work, capsys):
    code, out, _ = run(["train", make_cfg(work), "--quiet"], capsys)
    assert code == 0
    files = sorted(os.listdir(work / "out"))
    assert files == ["best.ckpt", "config.ini", "last.ckpt", "metrics.csv", "metrics.png", "vocab.txt"]
    rows = cli.read_metrics(work / "out" / "metrics.csv")
    assert len(rows) == 1 and rows[0]["epoch"] == 1 and rows[0]["lambda"] == 0.1


def test_train_is_byte_reproducible(work, capsys):
    a = make_cfg(work, out="a", epochs=2, name="a.ini")
    b = make_cfg(work, out="b", epochs=2, name="b.ini")
    assert run(["train", a, "--quiet", "--no-plot"], capsys)[0] == 0
    assert run(["train", b, "--quiet", "--no-plot"], capsys)[0] == 0
    for f in ("metrics.csv", "last.ckpt", "best.ckpt", "vocab.txt"):
        assert (work / "a" / f).read_bytes() == (work / "b" / f).read_bytes()


def test_echoed_config_reproduces_run(work, capsys):
    assert run(["train", make_cfg(work), "--quiet", "--no-plot"], capsys)[0] == 0
    first = (work / "out" / "metrics.csv").read_bytes()
    echo = (work / "out" / "config.ini").read_text().replace(str(work / "out"), str(work / "again"))
    (work / "echo.ini").write_text(echo)
    assert run(["train", work / "echo.ini", "--quiet", "--no-plot"], capsys)[0] == 0
    assert (work / "again" / "metrics.csv").read_bytes() == first


def test_seed_env_override(work, capsys, monkeypatch):
    monkeypatch.setenv("VCR_SEED", "5")
    assert run(["train", make_cfg(work), "--quiet", "--no-plot"], capsys)[0] == 0
    assert "seed = 5" in (work / "out" / "config.ini").read_text()
    assert checkpoint.load(work / "out" / "last.ckpt")[1]["seed"] == 5
    assert run(["train", make_cfg(work), "--quiet", "--no-plot", "--seed", "6"], capsys)[0] == 0
    assert "seed = 6" in (work / "out" / "config.ini").read_text()


def test_penalty_with_constant_unit_rejected(work, capsys):
    cfg = make_cfg(work, unit="elman", penalty=PENALTY)
    code, _, err = run(["train", cfg], capsys)
    assert code == 2
    assert f"{cfg}:16:" in err and "variable-computation" in err


def test_numeric_failure_exit_code(work, capsys, monkeypatch):
    def poisoned(*args, **kwargs):
        mdl = init_model(*args, **kwargs)
        mdl.params["O"][0, 0] = np.nan
        return mdl

    monkeypatch.setattr(cli, "init_model", poisoned)
    code, _, err = run(["train", make_cfg(work, unit="elman"), "--quiet"], capsys)
    assert code == 3
    assert "epoch 1, step 1" in err and "timestep 0" in err


def test_eval_matches_logged_train_bpt(work, capsys):
    assert run(["train", make_cfg(work, epochs=2), "--quiet", "--no-plot"], capsys)[0] == 0
    code, out, _ = run(["eval", work / "out" / "last.ckpt", "--split", "train"], capsys)
    assert code == 0
    reported = float(out.split("bits_per_token: ")[1].split()[0])
    logged = cli.read_metrics(work / "out" / "metrics.csv")[-1]["train_bpt"]
    assert abs(reported - logged) < 1e-9
    assert "equivalent_dim:" in out and "mean_m[near_whitespace=1]:" in out


def _tree_digest(root):
    h = hashlib.sha256()
    for dirpath, _, files in sorted(os.walk(root)):
        for f in sorted(files):
            p = os.path.join(dirpath, f)
            h.update(p.encode())
            with open(p, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def test_eval_does_not_touch_files(work, capsys):
    assert run(["train", make_cfg(work), "--quiet", "--no-plot"], capsys)[0] == 0
    before = _tree_digest(work)
    assert run(["eval", work / "out" / "best.ckpt"], capsys)[0] == 0
    assert _tree_digest(work) == before


def test_eval_untrained_binary(work, capsys):
    syms = " ".join("xy"[i] for i in Rng(0).integers(0, 2, 5000))
    (work / "coin.txt").write_text(syms)
    cfg = make_cfg(work, unit="elman", level="generic", path="coin.txt", epochs=0)
    assert run(["train", cfg, "--quiet"], capsys)[0] == 0
    code, out, _ = run(["eval", work / "out" / "last.ckpt", "--split", "test"], capsys)
    assert code == 0
    assert abs(float(out.split("bits_per_token: ")[1].split()[0]) - 1.0) < 0.05


def test_truncated_checkpoint(work, capsys):
    assert run(["train", make_cfg(work), "--quiet", "--no-plot"], capsys)[0] == 0
    blob = (work / "out" / "last.ckpt").read_bytes()
    (work / "out" / "cut.ckpt").write_bytes(blob[:-100])
    code, _, err = run(["eval", work / "out" / "cut.ckpt"], capsys)
    assert code == 4 and "truncated" in err
    assert run(["eval", work / "out" / "nope.ckpt"], capsys)[0] == 4


def test_vocab_mismatch(work, capsys):
    assert run(["train", make_cfg(work), "--quiet", "--no-plot"], capsys)[0] == 0
    (work / "other.txt").write_text("zzzz qqqq " * 30)
    other = make_cfg(work, path="other.txt", name="other.ini")
    code, _, err = run(["eval", work / "out" / "last.ckpt", "--config", other], capsys)
    assert code == 2 and "vocabulary mismatch" in err


def test_trace_rows_and_flags(work, capsys):
    (work / "sym.txt").write_text(" ".join("abcd"[i] for i in Rng(1).integers(0, 4, 1000)))
    cfg = make_cfg(work, unit="vcrnn", level="generic", path="sym.txt",
                   extra_data="splits = 0.8, 0.1, 0.1\n")
    assert run(["train", cfg, "--quiet", "--no-plot"], capsys)[0] == 0
    out_csv = work / "trace.csv"
    assert run(["trace", work / "out" / "last.ckpt", "--split", "valid", "--out", out_csv], capsys)[0] == 0
    lines = out_csv.read_text().splitlines()
    assert len(lines) == 101
    assert lines[0] == "t,token,m,active_dims,ops"
    assert (work / "trace.png").exists()


def test_trace_buffer_flags(work, capsys):
    cfg = make_cfg(work, unit="vcrnn", level="bit", extra_data="buffer_k = 8\n")
    assert run(["train", cfg, "--quiet", "--no-plot"], capsys)[0] == 0
    out_csv = work / "t.csv"
    assert run(["trace", work / "out" / "last.ckpt", "--out", out_csv, "--no-plot"], capsys)[0] == 0
    assert out_csv.read_text().splitlines()[0] == "t,token,m,active_dims,ops,is_buffer"


def test_trace_open_gate_uses_all_dims(work, capsys):
    assert run(["train", make_cfg(work, epochs=0), "--quiet"], capsys)[0] == 0
    mdl, meta = checkpoint.load(work / "out" / "last.ckpt")
    mdl.params["u"][:] = 0.0
    mdl.params["v"][:] = 0.0
    mdl.params["b"][:] = 50.0
    checkpoint.save(work / "out" / "open.ckpt", mdl, **meta)
    out_csv = work / "open.csv"
    assert run(["trace", work / "out" / "open.ckpt", "--out", out_csv, "--no-plot"], capsys)[0] == 0
    rows = out_csv.read_text().splitlines()[1:]
    assert rows and all(r.split(",")[3] == "16" for r in rows)


def test_trace_rejects_constant_unit(work, capsys):
    assert run(["train", make_cfg(work, unit="gru"), "--quiet", "--no-plot"], capsys)[0] == 0
    code, _, err = run(["trace", work / "out" / "last.ckpt", "--out", work / "x.csv"], capsys)
    assert code == 2 and "no scheduler to trace" in err


def test_synth_buffer_bits(tmp_path, capsys):
    src = tmp_path / "ten.bin"
    src.write_bytes(b"0123456789")
    assert run(["synth", "buffer-bits", "--k", 8, "--in", src, "--out", tmp_path / "s"], capsys)[0] == 0
    bits = data.parse_bitstring((tmp_path / "s" / "corpus.bits").read_text())
    assert len(bits) == 160
    ann = data.read_annotations(tmp_path / "s" / "annotations.csv")
    assert ann.flags["is_buffer"].sum() == 80
    assert run(["synth", "buffer-bits", "--k", 0, "--in", src, "--out", tmp_path / "p"], capsys)[0] == 0
    plain = data.parse_bitstring((tmp_path / "p" / "corpus.bits").read_text())
    assert np.array_equal(plain.tokens, data.bytes_to_bits(b"0123456789").tokens)


def test_synth_periodic(tmp_path, capsys):
    args = ["synth", "periodic", "--period", 8, "--length", 800, "--out", tmp_path / "p"]
    assert run(args, capsys)[0] == 0
    ann = data.read_annotations(tmp_path / "p" / "annotations.csv")
    assert np.flatnonzero(ann.flags["is_boundary"]).tolist() == list(range(0, 800, 8))


def test_synth_missing_source(tmp_path, capsys):
    code, _, err = run(["synth", "buffer-bits", "--in", tmp_path / "nope", "--out", tmp_path / "s"], capsys)
    assert code == 4 and "does not exist" in err


def test_synthetic_corpus_trains_from_sidecar(tmp_path, capsys):
    assert run(["synth", "periodic", "--length", 2000, "--out", tmp_path], capsys)[0] == 0
    cfg = make_cfg(tmp_path, unit="vcrnn", level="bit", path="corpus.bits",
                   extra_data="encoding = bitstring\nannotations = annotations.csv\n")
    assert run(["train", cfg, "--quiet", "--no-plot"], capsys)[0] == 0
    code, out, _ = run(["eval", tmp_path / "out" / "last.ckpt", "--split", "valid"], capsys)
    assert code == 0 and "mean_m[is_boundary=1]" in out


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "vcr.cli", "synth", "periodic", "--length", "16",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    bad = subprocess.run([sys.executable, "-m", "vcr.cli", "train", str(tmp_path / "none.ini")],
                         capture_output=True, text=True)
    assert bad.returncode == 2 and "cannot read config" in bad.stderr
