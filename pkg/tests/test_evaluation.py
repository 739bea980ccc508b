import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tomopr.containers import VoxelVolume
from tomopr.errors import ConfigError
from tomopr.evaluation import (
    SweepConfig,
    SweepResult,
    parse_method,
    quality_factor,
    run_sweep,
    summarize,
)


def vol(arr):
    return VoxelVolume(np.asarray(arr, dtype=np.float64))


def test_q_is_one_for_identical_volumes():
    v = vol(np.random.default_rng(0).uniform(size=(4, 4, 4)))
    assert quality_factor(v, v) == pytest.approx(1.0, abs=1e-14)


def test_q_is_scale_invariant():
    v = np.random.default_rng(1).uniform(size=(4, 4, 4))
    assert quality_factor(vol(3.5 * v), vol(v)) == pytest.approx(1.0, abs=1e-14)


def test_q_known_value():
    # r = (1, 0), t = (1, 1): Q = 1 / sqrt(2)
    r = vol(np.array([1.0, 0.0]).reshape(2, 1, 1))
    t = vol(np.array([1.0, 1.0]).reshape(2, 1, 1))
    assert quality_factor(r, t) == pytest.approx(1.0 / np.sqrt(2.0), rel=1e-14)


def test_q_orthogonal_supports():
    r = vol(np.array([1.0, 0.0]).reshape(2, 1, 1))
    t = vol(np.array([0.0, 1.0]).reshape(2, 1, 1))
    assert quality_factor(r, t) == 0.0


def test_q_zero_recon_scores_zero():
    t = vol(np.ones((3, 3, 3)))
    assert quality_factor(vol(np.zeros((3, 3, 3))), t) == 0.0


def test_q_rejects_zero_truth_and_dim_mismatch():
    with pytest.raises(ValueError, match="zero"):
        quality_factor(vol(np.ones((3, 3, 3))), vol(np.zeros((3, 3, 3))))
    with pytest.raises(ValueError, match="dims"):
        quality_factor(vol(np.ones((3, 3, 3))), vol(np.ones((3, 3, 4))))


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (3, 3, 3), elements=st.floats(0, 10)),
    arrays(np.float64, (3, 3, 3), elements=st.floats(0.01, 10)),
)
def test_q_bounds_and_symmetry(a, b):
    q = quality_factor(vol(a), vol(b))
    assert 0.0 <= q <= 1.0 + 1e-12
    # subnormal entries can square-underflow to an all-zero energy, which
    # the swapped call rejects as a zero truth
    if float(a.ravel() @ a.ravel()) != 0.0:
        assert quality_factor(vol(b), vol(a)) == pytest.approx(q, abs=1e-12)


def test_parse_method():
    assert parse_method("mlos") == ("mlos", 0)
    assert parse_method("mart-5") == ("mart", 5)
    assert parse_method("MART-10") == ("mart", 10)
    assert parse_method("sfmart-10") == ("sfmart", 10)
    assert parse_method("aipr") == ("aipr", 0)
    for bad in ("mart", "smart-3", "mart-5x", "aipr-2", ""):
        with pytest.raises(ConfigError):
            parse_method(bad)


def test_sweep_config_validation():
    ok = dict(volume_dims=(8, 8, 8), ppp_values=(0.05,))
    SweepConfig(**ok)
    with pytest.raises(ConfigError):
        SweepConfig(volume_dims=(8, 8, 8), ppp_values=())
    with pytest.raises(ConfigError):
        SweepConfig(**ok, seeds=())
    with pytest.raises(ConfigError):
        SweepConfig(**ok, methods=("tomo",))
    with pytest.raises(ConfigError):
        SweepConfig(**ok, noise_values=(-0.1,))


def test_sweep_aipr_needs_network_before_any_work():
    cfg = SweepConfig(volume_dims=(512, 512, 256), ppp_values=(0.05,), methods=("aipr",))
    # dims are deliberately huge: the config check must fire first
    with pytest.raises(ConfigError, match="network"):
        run_sweep(cfg)


def test_run_sweep_grid(tmp_path):
    cfg = SweepConfig(
        volume_dims=(12, 12, 8),
        ppp_values=(0.05,),
        noise_values=(0.0, 0.1),
        methods=("mlos", "mart-2"),
        seeds=(0, 1),
    )
    results = run_sweep(cfg, out_dir=tmp_path)
    assert len(results) == 8
    # deterministic row order: ppp, noise, seed, method
    key = [(r.noise, r.seed, r.method) for r in results]
    assert key == [
        (0.0, 0, "mlos"), (0.0, 0, "mart-2"),
        (0.0, 1, "mlos"), (0.0, 1, "mart-2"),
        (0.1, 0, "mlos"), (0.1, 0, "mart-2"),
        (0.1, 1, "mlos"), (0.1, 1, "mart-2"),
    ]
    for r in results:
        assert 0.0 < r.q <= 1.0
        assert r.seconds >= 0.0

    mart_q = np.mean([r.q for r in results if r.method == "mart-2"])
    mlos_q = np.mean([r.q for r in results if r.method == "mlos"])
    assert mart_q > mlos_q

    csv = (tmp_path / "results.csv").read_text().splitlines()
    assert csv[0] == "method,ppp,n,seed,Q,seconds"
    assert len(csv) == 9

    rerun = run_sweep(cfg)
    assert [r.q for r in rerun] == [r.q for r in results]


def test_run_sweep_noise_lowers_q():
    base = dict(volume_dims=(12, 12, 8), ppp_values=(0.1,), methods=("mlos",), seeds=(0, 1, 2))
    clean = run_sweep(SweepConfig(noise_values=(0.0,), **base))
    noisy = run_sweep(SweepConfig(noise_values=(0.3,), **base))
    assert np.mean([r.q for r in noisy]) < np.mean([r.q for r in clean])


def test_summarize_exact_stats(tmp_path):
    rows = [
        SweepResult("mlos", 0.05, 0.0, 0, 0.8, 1.0),
        SweepResult("mlos", 0.05, 0.0, 1, 0.6, 3.0),
        SweepResult("mlos", 0.15, 0.0, 0, 0.5, 1.0),
        SweepResult("mart-5", 0.05, 0.0, 0, 0.9, 2.0),
        SweepResult("mart-5", 0.15, 0.0, 0, 0.7, 2.0),
    ]
    summary = summarize(rows, out_dir=tmp_path)
    assert summary[0] == ["mlos", 0.05, 0.0, pytest.approx(0.7), pytest.approx(0.1), 2.0]
    assert summary[1][3] == 0.5  # single-seed cell: mean is the value
    assert summary[1][4] == 0.0  # population std of one sample

    files = {p.name for p in tmp_path.iterdir()}
    assert files == {"summary.csv", "q_vs_ppp.csv", "q_vs_n.csv"}
    pivot = (tmp_path / "q_vs_ppp.csv").read_text().splitlines()
    assert pivot[0] == "ppp,mlos,mart-5"
    assert pivot[1].startswith("0.05,")
    # q_vs_n pivots at ppp = 0.15 when present
    qn = (tmp_path / "q_vs_n.csv").read_text().splitlines()
    assert qn[1] == "0.0,0.5,0.7"


def test_summarize_rejects_empty():
    with pytest.raises(ValueError):
        summarize([])
