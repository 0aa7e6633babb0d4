import numpy as np
import pytest

from mlpfusion.bench import COLUMNS, METRICS, BenchConfig, load_report, run_bench, verify_report
from mlpfusion.errors import InvalidArgument
from mlpfusion.fixtures import make_fixture


@pytest.fixture(scope="module")
def fx():
    return make_fixture(m=6)


@pytest.fixture(scope="module")
def report(fx):
    cfg = BenchConfig(methods=("fuse", "sketch", "svd", "prune"), seeds=(0, 1), mmd_steps=5)
    return run_bench(fx.teacher, fx.head, fx.inputs, cfg)


def test_rows_and_summary_layout(report):
    assert len(report.rows) == 8
    assert [r["method"] for r in report.rows[::2]] == ["fuse", "sketch", "svd", "prune"]
    assert all(set(COLUMNS) <= set(r) for r in report.rows + report.summary)
    assert all(r["ntk_error_adam"] >= 0 and r["output_error"] >= 0 for r in report.rows)
    assert report.header["metrics"] == METRICS
    sketch = [r["ntk_error_adam"] for r in report.rows if r["method"] == "sketch"]
    assert report.mean("sketch") == pytest.approx(np.mean(sketch))


def test_lossless_fixture_fusion_row():
    lossless = make_fixture(noise=0.0, m=6)
    rep = run_bench(lossless.teacher, lossless.head, lossless.inputs, BenchConfig(methods=("fuse",), seeds=(0,)))
    row = rep.rows[0]
    assert row["ntk_error_adam"] < 1e-7 and row["output_error"] < 1e-9


def test_failures_recorded_not_raised(fx):
    rep = run_bench(fx.teacher, fx.head, fx.inputs, BenchConfig(methods=("fuse_sgd", "fuse"), seeds=(0,)))
    assert rep.rows[0]["status"] == "failed:unsupported-activation"
    assert rep.rows[1]["status"] == "ok"
    assert rep.summary[0]["status"] == "0/1 ok"


def test_rerun_is_byte_identical(fx, report):
    cfg = BenchConfig(methods=("fuse", "sketch", "svd", "prune"), seeds=(0, 1), mmd_steps=5)
    again = run_bench(fx.teacher, fx.head, fx.inputs, cfg)
    assert again.to_csv() == report.to_csv()
    assert again.to_json() == report.to_json()


def test_report_reload_and_hash(tmp_path, fx, report):
    report.write(tmp_path / "r.json")
    back = load_report(tmp_path / "r.json")
    assert verify_report(back, fx.teacher, fx.head, fx.inputs)
    assert not verify_report(back, fx.teacher, fx.head, fx.inputs[:-1])
    assert back.rows == report.rows


def test_csv_header_comments(report):
    text = report.to_csv()
    assert text.startswith("# activation:")
    assert ",".join(COLUMNS) in text


def test_config_validation():
    with pytest.raises(InvalidArgument):
        BenchConfig(methods=("zip",))
    with pytest.raises(InvalidArgument):
        BenchConfig(seeds=())


def test_dynamics_section(fx):
    cfg = BenchConfig(methods=("fuse",), seeds=(0,), dynamics=True, dynamics_steps=5)
    rep = run_bench(fx.teacher, fx.head, fx.inputs, cfg)
    assert len(rep.dynamics) == 1
    assert rep.header["dynamics_fuse_closer"] in ("0/1", "1/1")
