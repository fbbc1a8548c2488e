import os

import numpy as np
import pytest

from ucad.cli import ablation_csv, main
from ucad.data import DatasetSpec, generate_dataset, save_dataset
from ucad.model import ModelParams, load_checkpoint, save_checkpoint

TINY_TRAIN = ["--steps", "6", "--warmup-steps", "3", "--eval-every", "3", "--hidden", "4"]


def _files(root):
    out = {}
    for dirpath, _, names in os.walk(root):
        for name in names:
            path = os.path.join(dirpath, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--out", str(root), "--labeled", "2", "--unlabeled", "3",
                 "--val", "2", "--size", "16"]) == 0
    return root


def test_gen_data_layout_and_determinism(data_dir, tmp_path, capsys):
    files = _files(data_dir)
    assert sum(k.startswith("labeled/img_") for k in files) == 2
    assert sum(k.startswith("unlabeled/img_") for k in files) == 3
    assert sum(k.startswith("val/lab_") for k in files) == 2
    again = tmp_path / "again"
    assert main(["gen-data", "--out", str(again), "--labeled", "2", "--unlabeled", "3",
                 "--val", "2", "--size", "16"]) == 0
    assert _files(again) == files
    assert "count_unlabeled=3" in capsys.readouterr().out


@pytest.mark.parametrize("flags", [["--labeled", "0"], ["--unlabeled", "0"], ["--classes", "1"]])
def test_gen_data_rejects_bad_counts(tmp_path, flags, capsys):
    assert main(["gen-data", "--out", str(tmp_path / "d")] + flags) == 2
    assert "config error" in capsys.readouterr().err


def test_train_outputs_and_determinism(data_dir, tmp_path):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--data", str(data_dir), "--out", str(out)] + TINY_TRAIN) == 0
        runs.append(_files(out))
    assert runs[0] == runs[1]
    assert set(runs[0]) == {"student.ckpt", "teacher.ckpt", "history.csv", "config.txt"}
    rows = runs[0]["history.csv"].decode().splitlines()
    assert rows[0] == "step,l_seg,l_unc,l_total,beta,val_dsc"
    assert len(rows) == 7
    assert "total_steps=6" in runs[0]["config.txt"].decode()
    load_checkpoint(tmp_path / "a" / "student.ckpt")


def test_train_config_file_and_flag_precedence(data_dir, tmp_path, capsys):
    conf = tmp_path / "run.cfg"
    conf.write_text("# tiny\nlambda=0.7\nsteps=4\nwarmup_steps=2\nhidden=4\n")
    assert main(["print-config", "--config", str(conf), "--lambda", "0.3"]) == 0
    text = capsys.readouterr().out
    assert "lambda=0.3" in text and "total_steps=4" in text


@pytest.mark.parametrize("flags,message", [
    (["--lambda", "-1"], "--lambda must be >= 0"),
    (["--strategy", "mixup"], "--strategy must be one of"),
    (["--temperature", "0"], "--temperature must be > 0"),
    (["--alpha", "2"], "--alpha must be in [0, 1]"),
    (["--steps", "x"], "invalid value"),
])
def test_flag_validation(flags, message, capsys):
    assert main(["print-config"] + flags) == 2
    assert message in capsys.readouterr().err


def test_missing_data_is_data_error(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "r")]
                + TINY_TRAIN) == 3
    assert "data error" in capsys.readouterr().err


def test_eval_perfect_predictor(tmp_path):
    spec = DatasetSpec(height=16, width=16, min_radius=3, max_radius=5, waviness=1.0,
                       noise_std=0.0, class_std=0.0, n_labeled=1, n_unlabeled=1, n_val=3)
    data = tmp_path / "clean"
    save_dataset(data, generate_dataset(spec))
    means = np.array([0.15, 0.5, 0.85])
    params = ModelParams.zeros(3, hidden=1)
    params.w1[0, 0] = 1.0
    params.w2[0, :] = 100 * 2 * means
    params.b2[:] = -100 * means**2
    ckpt = tmp_path / "perfect.ckpt"
    save_checkpoint(ckpt, params)
    out = tmp_path / "ev"
    assert main(["eval", "--data", str(data), "--checkpoint", str(ckpt), "--out", str(out),
                 "--overlays"]) == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[-1] == "mean_fg,1.000000,0.000000,1"
    assert len(os.listdir(out / "overlays")) == 3
    first = _files(out)
    assert main(["eval", "--data", str(data), "--checkpoint", str(ckpt), "--out", str(out),
                 "--overlays"]) == 0
    assert _files(out) == first


def test_eval_missing_checkpoint(data_dir, tmp_path):
    assert main(["eval", "--data", str(data_dir), "--checkpoint", str(tmp_path / "x")]) == 3


def test_ablate_rows_and_determinism(data_dir, tmp_path):
    texts = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["ablate", "--data", str(data_dir), "--out", str(out), "--seeds", "1,2"]
                    + TINY_TRAIN) == 0
        texts.append((out / "ablation.csv").read_text())
    assert texts[0] == texts[1]
    lines = texts[0].splitlines()
    assert lines[0] == "strategy,seed,dsc,asd"
    assert len(lines) == 1 + 4 * 2 + 4
    assert sum(",median," in line for line in lines) == 4


def test_ablate_rejects_bad_seeds(data_dir, tmp_path):
    assert main(["ablate", "--data", str(data_dir), "--out", str(tmp_path), "--seeds", "a"]) == 2


def test_ablation_csv_medians():
    text = ablation_csv([("cad", 1, 0.5, 1.0), ("cad", 2, 0.7, 3.0), ("cad", 3, 0.9, 2.0)])
    assert text.splitlines()[-1] == "cad,median,0.700000,2.000000"
