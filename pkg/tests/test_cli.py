import numpy as np
import pytest

from paraflame import dataset as ds
from paraflame.cli import main
from paraflame.evaluation import read_csv
from paraflame.models import load_checkpoint
from paraflame.training import read_history

TINY = """
[dataset]
equation = "MS"
gammas = [0.1, 0.15]
sequences = 2
frames = 12
valid_sequences = 1
n = 32

[model]
layers = 1
width = 4
modes = 8
bands = 2
ratio_hidden = 4

[train]
n = 2
epochs = 2
batch_size = 8

[eval]
steps = 10
burn_in = 5
samples = 10
every = 2
"""


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = root / "tiny.toml"
    cfg.write_text(TINY)
    assert main(["generate", str(cfg), "--out", str(root / "train.pft"), "--seed", "3"]) == 0
    assert main(["generate", str(cfg), "--out", str(root / "valid.pft"), "--split", "valid"]) == 0
    return root, cfg


def _exit_code(argv):
    try:
        return main(argv)
    except SystemExit as exc:  # argparse rejects before dispatch
        return exc.code


def _train(root, cfg, name, *extra):
    out = root / name
    code = main(["train", str(cfg), "--data", str(root / "train.pft"), "--valid",
                 str(root / "valid.pft"), "--out", str(out / "model.ck"), *extra])
    return code, out


# -- generate ------------------------------------------------------------------------

def test_generate_counts_and_determinism(run, tmp_path, capsys):
    root, cfg = run
    data = ds.load(root / "train.pft")
    assert len(data) == 4 and data.frame_count == 48 and data.n == 32
    assert main(["generate", str(cfg), "--out", str(tmp_path / "again.pft"), "--seed", "3",
                 "--workers", "1"]) == 0
    assert (tmp_path / "again.pft").read_bytes() == (root / "train.pft").read_bytes()
    assert "4 records, 48 frames" in capsys.readouterr().out


def test_generate_full_dry_run(capsys):
    assert main(["generate", "--scale", "full", "--dry-run"]) == 0
    out = capsys.readouterr().out
    assert "5 gamma groups" in out and out.count(": 250 records (") == 5
    assert "total: 1250 records" in out


def test_generate_solver_failure_exits_2(tmp_path, monkeypatch, capsys):
    def fail(job):
        raise ds.GenerationError(job[1], job[2], RuntimeError("step size underflow"))

    monkeypatch.setattr(ds, "_run_job", fail)
    cfg = tmp_path / "c.toml"
    cfg.write_text(TINY)
    assert main(["generate", str(cfg), "--out", str(tmp_path / "x.pft"), "--workers", "1"]) == 2
    err = capsys.readouterr().err
    assert "gamma=0.1" in err and "seed=0" in err
    assert not (tmp_path / "x.pft").exists()


@pytest.mark.parametrize("argv", [
    ["generate", "--scale", "huge"],
    ["generate"],
    ["frobnicate"],
    [],
])
def test_usage_errors_exit_64(argv):
    assert _exit_code(argv) == 64


def test_bad_config_exits_64(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[train]\nepoch = 1\n")
    assert main(["generate", str(cfg), "--dry-run"]) == 64


# -- train ---------------------------------------------------------------------------

def test_train_smoke_and_determinism(run):
    root, cfg = run
    code, a = _train(root, cfg, "a", "--seed", "5")
    assert code == 0
    rows = read_history(a / "history.csv")
    assert [r["epoch"] for r in rows] == [0, 1]
    ckpt = load_checkpoint(a / "model.ck")
    assert ckpt.meta["epochs_done"] == 2 and ckpt.model.kind == "pfno"
    code, b = _train(root, cfg, "b", "--seed", "5")
    assert code == 0
    assert (a / "history.csv").read_bytes() == (b / "history.csv").read_bytes()
    assert (a / "model.ck").read_bytes() == (b / "model.ck").read_bytes()


def test_resume_continues_epoch_numbering(run):
    root, cfg = run
    _, first = _train(root, cfg, "r")
    code, _ = _train(root, cfg, "r", "--resume", str(first / "model.ck"), "--epochs", "4")
    assert code == 0
    resumed = read_history(first / "history.csv")
    assert [r["epoch"] for r in resumed] == [0, 1, 2, 3]
    _, straight = _train(root, cfg, "s", "--epochs", "4")
    assert resumed == read_history(straight / "history.csv")
    assert (first / "model.ck").read_bytes() == (straight / "model.ck").read_bytes()


def test_train_grid_mismatch_exits_64(run, tmp_path):
    root, cfg = run
    other = tmp_path / "wide.toml"
    other.write_text(TINY.replace("n = 32", "n = 64"))
    assert main(["generate", str(other), "--out", str(tmp_path / "wide.pft")]) == 0
    assert main(["train", str(cfg), "--data", str(root / "train.pft"), "--valid",
                 str(tmp_path / "wide.pft"), "--out", str(tmp_path / "m.ck")]) == 64


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_3(run, tmp_path, capsys):
    root, cfg = run
    hot = tmp_path / "hot.toml"
    hot.write_text(TINY.replace("batch_size = 8", "batch_size = 8\nlr0 = 1e300\nclip = 0"))
    code = main(["train", str(hot), "--data", str(root / "train.pft"), "--out",
                 str(tmp_path / "m.ck"), "--epochs", "3"])
    assert code == 3
    assert "training diverged at epoch" in capsys.readouterr().err


def test_corrupt_dataset_exits_64(tmp_path):
    bad = tmp_path / "bad.pft"
    bad.write_bytes(b"PFT1\x00\x01")
    assert main(["train", "--data", str(bad), "--out", str(tmp_path / "m.ck")]) == 64


# -- eval ----------------------------------------------------------------------------

def test_eval_solver_against_itself(run, tmp_path):
    _, cfg = run
    out = tmp_path / "ev"
    assert main(["eval", "solver", str(cfg), "--solver-reference", "--metrics", "err,len,corr",
                 "--out", str(out), "--seed", "2"]) == 0
    meta, err = read_csv(out / "err.csv")
    assert meta["model"] == "solver" and meta["seed"] == "2"
    assert err.shape == (11, 2)
    np.testing.assert_array_equal(err[:, 1], 0.0)
    _, corr = read_csv(out / "corr.csv")
    assert corr[0, 0] == 0.0 and corr[0, 1] == pytest.approx(1.0, abs=1e-12)


def test_eval_flat_ic_length_starts_at_one(run, tmp_path):
    _, cfg = run
    out = tmp_path / "ev"
    assert main(["eval", "solver", str(cfg), "--solver-reference", "--metrics", "len",
                 "--out", str(out), "--ic", "flat"]) == 0
    _, length = read_csv(out / "length.csv")
    assert length[0, 0] == 0.0 and length[0, 1] == 1.0
    assert not (out / "err.csv").exists()


def test_eval_checkpoint_against_data(run, tmp_path):
    root, cfg = run
    _, trained = _train(root, cfg, "e")
    out = tmp_path / "ev"
    args = ["eval", str(trained / "model.ck"), str(cfg), "--data", str(root / "valid.pft"),
            "--metrics", "err,len", "--out", str(out), "--gamma", "0.15"]
    assert main(args) == 0
    meta, err = read_csv(out / "err.csv")
    assert meta["model"] == "pfno" and meta["gamma"] == "0.15"
    assert err[0, 1] == 0.0 and np.all(err[1:, 1] > 0)
    first = (out / "err.csv").read_bytes()
    assert main(args) == 0
    assert (out / "err.csv").read_bytes() == first


@pytest.mark.parametrize("extra", [[], ["--metrics", "err,speed"], ["--metrics", ""]])
def test_eval_metric_flag_errors(run, tmp_path, extra):
    _, cfg = run
    argv = ["eval", "solver", str(cfg), "--solver-reference", "--out", str(tmp_path), *extra]
    assert _exit_code(argv) == 64


# -- selftest ------------------------------------------------------------------------

def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    for name in ("gradient/primitives", "gradient/networks", "spectral/fft-round-trip",
                 "spectral/operators", "band-map/enumeration"):
        assert name in out
    assert out.count("max_err=") == 5 and "FAIL" not in out


def test_selftest_detects_wrong_fft_scale(capsys):
    assert main(["selftest", "--inject-fault", "fft-scale"]) == 1
    out = capsys.readouterr().out
    assert "FAIL  spectral/fft-round-trip" in out and "selftest FAILED" in out
    assert main(["selftest"]) == 0  # the fault is removed afterwards
