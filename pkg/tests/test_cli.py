import pytest

from cheblap.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_GRADCHECK,
    EXIT_NUMERICAL,
    EXIT_OK,
    hit_rate,
    main,
    run,
)
from cheblap.utils.errors import InvalidOrder, MismatchedBasis, NotSymmetric

TINY = ["--K", "3", "--set", "channels=4", "--set", "batch_size=4", "--deterministic"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    argv = ["synth", "--out", str(out), "--per-class", "6", "--test-per-class", "2", "--frames", "8"]
    assert main(argv) == EXIT_OK
    return out


def train_args(data_dir, out, *extra):
    return ["train", "--data", str(data_dir), "--out", str(out), *extra]


def test_synth_writes_a_dataset(data_dir):
    assert (data_dir / "manifest.txt").is_file()
    assert (data_dir / "edges.txt").is_file()
    assert (data_dir / "hidden_edges.txt").is_file()
    assert len((data_dir / "manifest.txt").read_text().splitlines()) == 12


def test_train_then_eval(data_dir, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(train_args(data_dir, out, *TINY, "--epochs", "2")) == EXIT_OK
    for name in ("checkpoint.txt", "metrics.txt", "run.txt"):
        assert (out / name).is_file()
    assert len((out / "metrics.txt").read_text().splitlines()) == 2
    assert "K = 3" in (out / "run.txt").read_text()

    capsys.readouterr()
    argv = ["eval", "--checkpoint", str(out / "checkpoint.txt"), "--data", str(data_dir)]
    assert main(argv) == EXIT_OK
    printed = capsys.readouterr().out
    assert printed.startswith("accuracy ")
    assert "sample_accuracy" in printed


def test_config_file_and_overrides(data_dir, tmp_path):
    config = tmp_path / "train.conf"
    config.write_text("K = 2\nepochs = 1\nchannels = 4\nbatch_size = 4\nmode = hl\n")
    out = tmp_path / "run"
    argv = train_args(data_dir, out, "--config", str(config), "--kind", "comb", "--sym", "0")
    assert main(argv) == EXIT_OK
    manifest = (out / "run.txt").read_text()
    assert "kind = COMB" in manifest
    assert "symmetric = 0" in manifest
    assert "mode = hl" in manifest


def test_missing_order_is_a_configuration_error(data_dir, tmp_path):
    assert main(train_args(data_dir, tmp_path / "run", "--epochs", "1")) == EXIT_CONFIG


def test_unknown_config_key(data_dir, tmp_path):
    argv = train_args(data_dir, tmp_path / "run", *TINY, "--set", "momentum=0.5")
    assert main(argv) == EXIT_CONFIG


def test_huge_learning_rate_aborts(data_dir, tmp_path):
    argv = train_args(data_dir, tmp_path / "run", *TINY, "--epochs", "5", "--lr", "1e3")
    assert main(argv) == EXIT_NUMERICAL


def test_missing_dataset(tmp_path):
    assert main(train_args(tmp_path / "nowhere", tmp_path / "run", *TINY)) == EXIT_DATA


def test_truncated_checkpoint(data_dir, tmp_path):
    out = tmp_path / "run"
    assert main(train_args(data_dir, out, *TINY, "--epochs", "1")) == EXIT_OK
    checkpoint = out / "checkpoint.txt"
    lines = checkpoint.read_text().splitlines()
    checkpoint.write_text("\n".join(lines[:-10]) + "\n")
    argv = ["eval", "--checkpoint", str(checkpoint), "--data", str(data_dir)]
    assert main(argv) == EXIT_DATA


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--n", "4", "--K", "3"]) == EXIT_OK
    assert "FAIL" not in capsys.readouterr().out


def test_corrupted_gradcheck_fails(capsys):
    assert main(["gradcheck", "--n", "4", "--kinds", "NDRW,S-DN", "--corrupt-jacobian"]) == EXIT_GRADCHECK
    assert capsys.readouterr().out.count("FAIL") == 2


def test_gradcheck_rejects_bad_arguments():
    assert main(["gradcheck", "--kinds", "XYZ"]) == EXIT_CONFIG
    assert main(["gradcheck", "--n", "40"]) == EXIT_CONFIG


def test_inspect_handcrafted_checkpoint(data_dir, tmp_path, capsys):
    run = tmp_path / "run"
    argv = train_args(data_dir, run, *TINY, "--epochs", "1", "--mode", "hl")
    assert main(argv) == EXIT_OK
    out = tmp_path / "inspect"
    argv = ["inspect", "--checkpoint", str(run / "checkpoint.txt"), "--out", str(out), "--data", str(data_dir)]
    assert main(argv) == EXIT_OK
    assert (out / "adjacency.txt").is_file()
    assert (out / "laplacian.txt").is_file()
    assert (out / "off_skeleton_edges.txt").read_text() == ""
    assert "hit-rate 0.0000" in capsys.readouterr().out


def test_inspect_tll_checkpoint(data_dir, tmp_path):
    run = tmp_path / "run"
    assert main(train_args(data_dir, run, *TINY, "--epochs", "1", "--mode", "tll")) == EXIT_OK
    out = tmp_path / "inspect"
    assert main(["inspect", "--checkpoint", str(run / "checkpoint.txt"), "--out", str(out)]) == EXIT_OK
    assert sorted(p.name for p in out.glob("laplacian_*.txt")) == [
        "laplacian_0.txt",
        "laplacian_1.txt",
        "laplacian_2.txt",
    ]


def test_ablate(data_dir, tmp_path):
    argv = [
        "ablate",
        "--data",
        str(data_dir),
        "--out",
        str(tmp_path),
        "--Ks",
        "2",
        "--kinds",
        "COMB",
        "--modes",
        "hl,learned",
        "--epochs",
        "1",
        *TINY[2:],
    ]
    assert main(argv) == EXIT_OK
    assert len((tmp_path / "ablation.txt").read_text().splitlines()) == 3


def test_symmetric_kind_flag(data_dir, tmp_path):
    out = tmp_path / "run"
    assert main(train_args(data_dir, out, *TINY, "--epochs", "1", "--kind", "s-drw", "--sym", "0")) == EXIT_OK
    manifest = (out / "run.txt").read_text()
    assert "kind = DRW" in manifest
    assert "symmetric = 1" in manifest


def test_symmetric_kind_in_config_file(data_dir, tmp_path):
    config = tmp_path / "train.conf"
    config.write_text("K = 3\nkind = S-NDRW\nsymmetric = 0\nepochs = 1\n")
    out = tmp_path / "run"
    argv = train_args(data_dir, out, "--config", str(config), "--deterministic")
    assert main(argv + ["--set", "channels=4", "--set", "batch_size=4"]) == EXIT_OK
    manifest = (out / "run.txt").read_text()
    assert "kind = NDRW" in manifest
    assert "symmetric = 1" in manifest


def test_order_beyond_the_basis_limit_is_a_configuration_error(data_dir, tmp_path):
    argv = train_args(data_dir, tmp_path / "run", *TINY, "--K", "40", "--epochs", "1")
    assert main(argv) == EXIT_CONFIG


@pytest.mark.parametrize("error", [NotSymmetric, MismatchedBasis])
def test_unmapped_errors_are_numerical(error):
    def handler(args):
        raise error("operator went bad")

    assert run(handler, None) == EXIT_NUMERICAL


def test_invalid_order_is_a_configuration_error():
    def handler(args):
        raise InvalidOrder("order K must lie in [1, 32], got 40")

    assert run(handler, None) == EXIT_CONFIG


def test_hit_rate():
    ranked = [((0, 5), 0.9), ((2, 7), 0.5), ((1, 4), 0.1)]
    assert hit_rate(ranked, [(5, 0), (4, 1)]) == 0.5
    assert hit_rate(ranked, [(0, 5), (2, 7)]) == 1.0


def test_help_exits_cleanly():
    with pytest.raises(SystemExit) as error:
        main(["--help"])
    assert error.value.code == 0
