import math

import pytest

import mdcpc


def test_grid_shape():
    assert mdcpc.grid_shape(96, 24, 12) == 7
    with pytest.raises(mdcpc.GeometryError):
        mdcpc.grid_shape(96, 24, 10)


def test_info_nce_equal_scores():
    loss = mdcpc.info_nce_loss([[0.0, 0.0]], [[1.0, 2.0]], [[[3.0, 4.0]] * 4])
    assert loss == pytest.approx(math.log(5.0), abs=1e-12)


def test_synthetic_counts():
    assert mdcpc.synthetic_counts(100, 32, 7) == {"train": 120, "valid": 40, "test": 40}


def test_leakcheck_default_passes():
    reports = mdcpc.leakcheck(grid=5, trials=2)
    assert reports and all(r["passed"] for r in reports)


def test_cli_usage_error(tmp_path):
    code, _, err = mdcpc.run_cli(["--run-root", str(tmp_path), "synth", "--size", "32"])
    assert code == 1
    assert "--n" in err
