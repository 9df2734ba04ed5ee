import subprocess
import sys

import pytest

from agconv.cli import main

TINY = ["--epochs", "1", "--batch-size", "4", "--k", "6", "--hidden", "6", "--widths", "6,6,8,8", "--emb", "16",
        "--head", "8", "--n-train", "6", "--n-test", "6", "--n-points", "32"]


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_no_arguments_is_usage_error(capsys):
    code, out, err = run([], capsys)
    assert code == 1 and out == "" and "usage" in err


def test_unknown_subcommand_and_flag(capsys):
    assert run(["fly"], capsys)[0] == 1
    assert run(["params", "--bogus"], capsys)[0] == 1


def test_params_single_layer(capsys):
    code, out, _ = run(["params", "--layer", "agconv", "--D", "64", "--M", "64", "--d", "64", "--c", "6"], capsys)
    assert code == 0
    assert out.splitlines()[0] == "name,kind,formula,count"
    assert out.splitlines()[1].endswith(",32768")
    code, out, _ = run(["params", "--layer", "graphconv", "--D", "64", "--M", "64"], capsys)
    assert out.splitlines()[1].endswith(",8192")


def test_params_model_table(capsys):
    code, out, _ = run(["params"], capsys)
    lines = out.splitlines()
    assert code == 0 and lines[-1].startswith("total,")
    assert int(lines[-1].split(",")[-1]) == sum(int(line.split(",")[-1]) for line in lines[1:-1])


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n_train = 3\nn_test = 3\nn_points = 16\n")
    code, out, _ = run(["gen-data", "--config", str(cfg), "--n-test", "0", "--out", str(tmp_path / "d")], capsys)
    assert code == 0
    rows = out.splitlines()[1:]
    assert len(rows) == 3 and all(r.split(",")[1] == "train" for r in rows)


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epohcs = 3\n")
    code, _, err = run(["train", "--config", str(cfg)], capsys)
    assert code == 1 and "epohcs" in err


def test_runtime_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.agck"
    bad.write_bytes(b"NOPE")
    code, _, err = run(["eval", "--checkpoint", str(bad)], capsys)
    assert code == 2 and "magic" in err


def test_missing_file_is_runtime_error(tmp_path, capsys):
    code, _, _ = run(["eval", "--checkpoint", str(tmp_path / "none.agck")], capsys)
    assert code == 2


def test_train_eval_robustness(tmp_path, capsys):
    out_dir = tmp_path / "run"
    code, out, err = run(["train", *TINY, "--out", str(out_dir)], capsys)
    assert code == 0 and out.startswith("epoch,split,loss,oa,macc,miou,mciou\n")
    assert "test oa" in err
    code, out, _ = run(["eval", *TINY, "--checkpoint", str(out_dir / "model.agck")], capsys)
    assert code == 0
    header, row = out.splitlines()
    assert header == "split,loss,oa,macc,miou,mciou"
    eval_oa = row.split(",")[2]
    code, out, _ = run(["robustness", *TINY, "--keep-fractions", "1.0,0.5", "--noise-levels", "0,0.05",
                        "--checkpoint", str(out_dir / "model.agck")], capsys)
    lines = out.splitlines()
    assert code == 0 and lines[0] == "keep_fraction,sigma,oa,macc,miou" and len(lines) == 5
    assert lines[1].split(",")[2] == eval_oa


def test_gen_data_then_train_from_manifest(tmp_path, capsys):
    assert run(["gen-data", *TINY, "--out", str(tmp_path / "d")], capsys)[0] == 0
    code, out, _ = run(["train", *TINY, "--data", str(tmp_path / "d" / "manifest.txt")], capsys)
    assert code == 0 and len(out.splitlines()) == 3


def test_bench_csv(capsys):
    code, out, _ = run(["bench", "--sizes", "32,64", "--repeats", "1", "--k", "8", "--hidden", "8"], capsys)
    lines = out.splitlines()
    assert code == 0 and lines[0] == "op,n,k,seconds" and len(lines) == 5
    assert run(["bench", "--sizes", "x"], capsys)[0] == 1


@pytest.mark.slow
def test_gradcheck_command(capsys):
    code, out, err = run(["gradcheck"], capsys)
    assert code == 0
    assert out.splitlines()[0] == "target,max_rel_error,tolerance,seconds,passed"
    assert "max relative error" in err


def test_console_script_module():
    res = subprocess.run([sys.executable, "-m", "agconv.cli"], capture_output=True, text=True)
    assert res.returncode == 1 and "usage" in res.stderr and res.stdout == ""
