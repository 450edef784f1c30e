import json
import os
import subprocess
import sys

import numpy as np
import pytest

from lavae import cli
from lavae import evaluation as E

from conftest import data_path

FIXTURE = os.path.join(os.path.dirname(__file__), "fixtures", "tiny_flips.ckpt")


def run_cli(argv):
    return cli.main(argv)


def base_args(tmp_path, *extra):
    return [
        "--config", write_config(tmp_path),
        "--out", str(tmp_path / "out"),
        *extra,
    ]


def write_config(tmp_path, **overrides):
    cfg = {
        "train_images": data_path("train-images-idx3-ubyte.gz"),
        "train_labels": data_path("train-labels-idx1-ubyte.gz"),
        "test_images": data_path("t10k-images-idx3-ubyte.gz"),
        "test_labels": data_path("t10k-labels-idx1-ubyte.gz"),
        "subset": 96,
        "eval_subset": 64,
        "channels": [4, 8],
        "stage1_epochs": 1,
        "stage2_epochs": 1,
        "stage3_epochs": 1,
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_eval_table_on_shipped_fixture(tmp_path):
    rc = run_cli(["eval-table", *base_args(tmp_path), "--lavae", FIXTURE])
    assert rc == 0
    table = (tmp_path / "out" / "table.tsv").read_text().strip().split("\n")
    assert table[0].startswith("model\t")
    assert table[1].startswith("lavae\t")


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli(["no-such-command"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err.lower()


def test_train_with_missing_data_exits_1(tmp_path, capsys):
    cfg = write_config(tmp_path, train_images=str(tmp_path / "missing.idx"))
    rc = run_cli(["train", "--config", cfg, "--out", str(tmp_path / "out")])
    assert rc == 1
    assert "does not exist" in capsys.readouterr().err


def test_bad_config_key_exits_1(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"no_such_key": 1}))
    rc = run_cli(["train", "--config", str(path)])
    assert rc == 1
    assert "unknown config keys" in capsys.readouterr().err


def test_train_then_fit_then_eval(tmp_path):
    out = tmp_path / "out"
    rc = run_cli(["train", *base_args(tmp_path)])
    assert rc == 0
    ckpt = out / "lavae.ckpt"
    assert ckpt.exists()
    assert (out / "stage1.log").read_text().startswith("stage\tepoch")

    rc = run_cli(["fit-transforms", *base_args(tmp_path), "--checkpoint", str(ckpt)])
    assert rc == 0
    rc = run_cli(["eval-table", *base_args(tmp_path), "--lavae", str(ckpt)])
    assert rc == 0
    assert (out / "table.tsv").exists()


def test_transfer_head_command(tmp_path):
    out = tmp_path / "out"
    assert run_cli(["train", *base_args(tmp_path)]) == 0
    assert run_cli(["fit-transforms", *base_args(tmp_path)]) == 0
    rc = run_cli(["transfer", *base_args(tmp_path), "--target-pair", "nested_shear"])
    assert rc == 0
    eval_files = list(out.glob("transfer_*.tsv"))
    assert len(eval_files) == 1
    from lavae.model import load_checkpoint
    params = load_checkpoint(out / "lavae.ckpt")
    assert params.transfer_heads


def test_cvae_train_command(tmp_path):
    out = tmp_path / "out"
    rc = run_cli(["cvae-train", *base_args(tmp_path), "--model", "cvae_trad"])
    assert rc == 0
    assert (out / "cvae_trad.ckpt").exists()


def test_figure_commands_smoke(tmp_path):
    out = tmp_path / "out"
    args = base_args(tmp_path)
    assert run_cli(["augment", *args, "--checkpoint", FIXTURE, "--indices", "0,1"]) == 0
    assert (out / "augment_forward.pgm").exists()
    assert run_cli(["augment", *args, "--checkpoint", FIXTURE, "--indices", "0",
                    "--mode", "inverse"]) == 0
    assert run_cli(["augment", *args, "--checkpoint", FIXTURE, "--indices", "0",
                    "--mode", "reverse-compose"]) == 0
    assert run_cli(["sample", *args, "--checkpoint", FIXTURE, "--count", "4"]) == 0
    assert (out / "samples.pgm").exists() and (out / "samples_latents.tsv").exists()
    assert run_cli(["interpolate", *args, "--checkpoint", FIXTURE,
                    "--index-a", "0", "--index-b", "5", "--steps", "6",
                    "--with-augs"]) == 0
    grid = E.read_pgm(out / "interpolation.pgm")
    assert grid.shape == (3 * 28 + 2, 6 * 28 + 5)


def test_recurse_and_project_deterministic(tmp_path):
    out = tmp_path / "out"
    args = base_args(tmp_path)
    assert run_cli(["recurse", *args, "--checkpoint", FIXTURE,
                    "--index", "3", "--steps", "4"]) == 0
    grid = E.read_pgm(out / "recursion_3.pgm")
    assert grid.shape == (28, 5 * 28 + 4)
    lat = np.loadtxt(out / "recursion_3_latents.tsv")
    assert lat.shape == (5, 16)
    path2d = np.loadtxt(out / "recursion_3_path2d.tsv")
    assert path2d.shape == (5, 2)

    assert run_cli(["project", *args, "--checkpoint", FIXTURE]) == 0
    pca_rows = (out / "pca.tsv").read_text().strip().split("\n")
    assert pca_rows[0] == "category\tx\ty"
    assert len(pca_rows) == 1 + 4 * 64

    first = (out / "pca.tsv").read_bytes(), (out / "ica.tsv").read_bytes()
    assert run_cli(["project", *args, "--checkpoint", FIXTURE]) == 0
    assert ((out / "pca.tsv").read_bytes(), (out / "ica.tsv").read_bytes()) == first


def test_export_grid_command(tmp_path):
    out_file = tmp_path / "digits.pgm"
    rc = run_cli(["export-grid", "--images", data_path("t10k-images-idx3-ubyte.gz"),
                  "--indices", "0,1,2,3", "--rows", "2", "--cols", "2",
                  "--labels", data_path("t10k-labels-idx1-ubyte.gz"),
                  "--out-file", str(out_file)])
    assert rc == 0
    img = E.read_pgm(out_file)
    assert img.shape == (2 * 28 + 1, 2 * 28 + 1)
    labels = (tmp_path / "digits.pgm.labels.txt").read_text().strip().split("\n")
    assert labels == ["7", "2", "1", "0"]


def test_console_entry_point_installed():
    proc = subprocess.run([sys.executable, "-m", "lavae.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "train" in proc.stdout and "heatmap" in proc.stdout
