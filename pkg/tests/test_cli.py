import json

import pytest

from stratakv.cli import main


def run_cli(args, tmp_path, capsys):
    code = main(["--data-dir", str(tmp_path / "data")] + args)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_calc_lfs_rho(tmp_path, capsys):
    code, out, _ = run_cli(["calc", "lfs-rho", "--mu", "0.8"], tmp_path, capsys)
    assert code == 0
    assert json.loads(out) == 10.0


def test_calc_cow_slowdown(tmp_path, capsys):
    code, out, _ = run_cli(["calc", "cow-slowdown", "--b", "16", "--rho", "5"],
                           tmp_path, capsys)
    assert code == 0
    assert json.loads(out) == 96.0


def test_calc_domain_error_exit_code(tmp_path, capsys):
    code, _, err = run_cli(["calc", "lfs-rho", "--mu", "1.5"], tmp_path, capsys)
    assert code == 3
    assert "mu" in err


def test_bench_run_writes_csv(tmp_path, capsys):
    out_file = tmp_path / "metrics.csv"
    plot_file = tmp_path / "plot.csv"
    code, out, _ = run_cli(
        ["bench", "run", "--target", "sda", "--inserts", "2000",
         "--seed", "3", "--verify", "--window", "1000",
         "--clone-interval", "500", "--range-interval", "500",
         "--out", str(out_file), "--plot-data", str(plot_file)],
        tmp_path, capsys)
    assert code == 0
    assert "[sda]" in out
    text = out_file.read_text()
    assert text.startswith("# schema=stratakv-metrics-1")
    assert len(text.splitlines()) >= 3
    assert plot_file.read_text().startswith("target,ops_done")


def test_bench_run_with_config_file(tmp_path, capsys):
    config = tmp_path / "store.toml"
    config.write_text('[store]\nflush_entries = 128\nblock_size = 16384\n')
    code, out, _ = run_cli(
        ["bench", "run", "--target", "sda", "--inserts", "1000",
         "--seed", "1", "--config", str(config), "--window", "500"],
        tmp_path, capsys)
    assert code == 0


def test_bench_audit_cli(tmp_path, capsys):
    from stratakv.config import StoreConfig
    from stratakv.store import SdaStore
    store_dir = tmp_path / "box"
    store = SdaStore.create(store_dir, StoreConfig(flush_entries=16,
                                                   capacity_blocks=2048))
    store.put(b"k", b"v", 0)
    store.close()
    code, out, _ = run_cli(["bench", "audit", "--store", str(store_dir)],
                           tmp_path, capsys)
    assert code == 0
    assert "audit clean" in out


def test_bench_audit_missing_store(tmp_path, capsys):
    code, _, err = run_cli(["bench", "audit", "--store", str(tmp_path / "nope")],
                           tmp_path, capsys)
    assert code == 3


def test_bench_crash_test_cli(tmp_path, capsys):
    code, out, _ = run_cli(
        ["bench", "crash-test", "--kill-points", "post_epoch",
         "--inserts", "1200", "--seed", "5"],
        tmp_path, capsys)
    assert code == 0
    assert "failures=0" in out


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--help"])
    assert excinfo.value.code == 0
    out = capsys.readouterr().out
    for word in ("serve", "bench", "calc"):
        assert word in out
