import json

import pytest

from clnet.cli import main
from clnet.models import load_checkpoint


@pytest.fixture(scope="module")
def data_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "ds.bin"
    assert main(["gen-data", "--samples", "150", "--seed", "2", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def ckpt_file(data_file):
    path = data_file.parent / "m.ckpt"
    argv = ["train", "--data", str(data_file), "--epochs", "1", "--batch-size", "50", "--quiet", "--out", str(path)]
    assert main(argv) == 0
    return path


def test_gen_data_reports_splits_and_manifest(tmp_path, capsys):
    out = tmp_path / "d.bin"
    assert main(["gen-data", "--samples", "150", "--seed", "2", "--out", str(out)]) == 0
    assert "train=100 val=30 test=20" in capsys.readouterr().out
    manifest = json.loads((tmp_path / "d.bin.manifest.json").read_text())
    assert manifest["seed"] == 2 and manifest["command"] == "gen-data"
    assert manifest["outputs"]["dataset"]["bytes"] == out.stat().st_size


def test_gen_data_is_byte_identical(tmp_path, data_file):
    again = tmp_path / "again.bin"
    main(["gen-data", "--samples", "150", "--seed", "2", "--out", str(again)])
    assert again.read_bytes() == data_file.read_bytes()


def test_gen_data_invalid_arguments(tmp_path):
    assert main(["gen-data", "--samples", "1", "--out", str(tmp_path / "x")]) == 6


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--eta", "1/3", "--data", "x", "--out", "y"])
    assert exc.value.code == 2


def test_train_is_reproducible(tmp_path, data_file, ckpt_file):
    again = tmp_path / "m.ckpt"
    argv = ["train", "--data", str(data_file), "--epochs", "1", "--batch-size", "50", "--quiet", "--out", str(again)]
    assert main(argv) == 0
    assert again.read_bytes() == ckpt_file.read_bytes()
    log_a = (tmp_path / "m.ckpt.log.csv").read_text()
    assert log_a == ckpt_file.with_name("m.ckpt.log.csv").read_text()
    assert log_a.splitlines()[0] == "epoch,train_loss,val_nmse_db,lr"


def test_train_missing_data(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "m")]) == 3


def test_eval_writes_report(tmp_path, data_file, ckpt_file, capsys):
    out, csv_path, cw = tmp_path / "r.txt", tmp_path / "r.csv", tmp_path / "cw.bin"
    argv = ["eval", "--data", str(data_file), "--checkpoint", str(ckpt_file), "--eta", "1/4"]
    argv += ["--csv", str(csv_path), "--codewords", str(cw), "--out", str(out)]
    assert main(argv) == 0
    text = out.read_text()
    assert "count=20" in text and "nmse_db=" in text
    assert len(csv_path.read_text().splitlines()) == 21
    assert cw.exists()
    assert text == capsys.readouterr().out


def test_eval_eta_mismatch(tmp_path, data_file, ckpt_file):
    argv = ["eval", "--data", str(data_file), "--checkpoint", str(ckpt_file), "--eta", "1/8", "--out", str(tmp_path / "r")]
    assert main(argv) == 4


def test_eval_corrupt_checkpoint(tmp_path, data_file, ckpt_file):
    bad = tmp_path / "bad.ckpt"
    raw = bytearray(ckpt_file.read_bytes())
    raw[-8] ^= 0xFF
    bad.write_bytes(bytes(raw))
    argv = ["eval", "--data", str(data_file), "--checkpoint", str(bad), "--out", str(tmp_path / "r")]
    assert main(argv) == 5


def test_checkpoint_loads(ckpt_file):
    model = load_checkpoint(ckpt_file)
    assert model.arch == "clnet" and model.codeword_length == 512


def test_flops_and_compare(tmp_path, capsys):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    assert main(["flops", "--model", "clnet", "--eta", "1/4", "--out", str(a)]) == 0
    assert main(["flops", "--model", "crnet-base", "--eta", "1/4", "--out", str(b)]) == 0
    assert "flops=10218608" in a.read_text()
    capsys.readouterr()
    table = tmp_path / "cmp.csv"
    assert main(["compare", "--clnet", str(a), "--baseline", str(b), "--out", str(table)]) == 0
    assert "21.25" in table.read_text()


def test_compare_defaults_to_all_ratios(tmp_path):
    table = tmp_path / "cmp.csv"
    assert main(["compare", "--out", str(table)]) == 0
    lines = table.read_text().splitlines()
    assert len(lines) == 7 and lines[-1] == "average,,,26.95"


def test_compare_eta_mismatch(tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    main(["flops", "--eta", "1/4", "--out", str(a)])
    main(["flops", "--model", "crnet-base", "--eta", "1/8", "--out", str(b)])
    assert main(["compare", "--clnet", str(a), "--baseline", str(b), "--out", str(tmp_path / "c")]) == 4


def test_compare_rejects_garbage(tmp_path):
    a = tmp_path / "a.txt"
    a.write_text("hello\n")
    assert main(["compare", "--clnet", str(a), "--baseline", str(a), "--out", str(tmp_path / "c")]) == 5
