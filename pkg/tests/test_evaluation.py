import csv
import json
import math

import numpy as np
import pytest

from holofocus.evaluation import (
    FWHM_PER_SIGMA, REALTIME_LIMIT_MS, ErrorReport, OcclusionSpec, bench_inference, evaluate,
    evaluate_classical, occlude, occlusion_sweep, residuals, write_bench_csv,
)
from holofocus.focus import FocusNotFoundError
from holofocus.models import ModelSpec, VggConfig, ViTConfig, build
from holofocus.optics import OpticalConfig, generate_dataset


def test_fwhm_constant():
    assert abs(FWHM_PER_SIGMA - 2.35482) < 1e-5
    rep = ErrorReport([0, 1, 2, 3], [0.5, 0.7, 2.1, 3.3])
    assert abs(rep.fwhm_um - 2.35482 * rep.sigma) < 1e-5 * rep.sigma + 1e-12
    assert rep.half_fwhm_um == rep.fwhm_um / 2


def test_perfect_predictor():
    z = np.repeat(np.arange(5.0), 3)
    rep = ErrorReport(z, z)
    assert rep.mu == 0 and rep.sigma == 0 and rep.n == 15
    assert [r[0] for r in rep.per_z()] == [0, 1, 2, 3, 4] and all(r[3] == 3 for r in rep.per_z())


@pytest.mark.parametrize("fit", ["ml", "histogram"])
def test_gaussian_fit_recovers_sigma(fit):
    rng = np.random.default_rng(0)
    eps = rng.normal(0.2, 0.5, 10_000)
    rep = ErrorReport(np.zeros_like(eps), eps, fit)
    assert 0.45 <= rep.sigma <= 0.55
    se = 0.5 / math.sqrt(len(eps))
    if fit == "ml":
        assert abs(rep.mu - 0.2) < 3 * se and abs(rep.sigma - 0.5) < 3 * se / math.sqrt(2) * 1.5
    else:
        assert abs(rep.mu - 0.2) < 0.03


def test_residual_convention():
    np.testing.assert_array_equal(residuals([3.0, 1.0], [1.0, 1.5]), [2.0, -0.5])
    rep = ErrorReport([1.0], [3.0])
    assert rep.eps[0] == 2.0


def test_report_exports(tmp_path):
    rep = ErrorReport([0, 0, 1, 1], [0.1, -0.1, 1.5, 1.3])
    rep.write_csv(tmp_path / "e.csv")
    rows = list(csv.reader(open(tmp_path / "e.csv")))
    assert rows[0] == ["z_um", "mean_eps_um", "std_eps_um", "n"]
    assert float(rows[2][1]) == pytest.approx(0.4) and rows[2][3] == "2"
    rep.write_summary(tmp_path / "s.json")
    s = json.loads((tmp_path / "s.json").read_text())
    assert s["n"] == 4 and s["fwhm_um"] == pytest.approx(rep.fwhm_um)


def test_report_rejects_empty():
    with pytest.raises(ValueError):
        ErrorReport([], [])


# --- occlusion --------------------------------------------------------------------------

def test_occlude_ten_percent(rng):
    roi = rng.random((128, 128)) + 0.1
    out = occlude(roi, OcclusionSpec(0.10, seed=4))
    assert OcclusionSpec(0.10).side == 40
    changed = out != roi
    assert changed.sum() == 1600 and np.all(out[changed] == 0)
    rows, cols = np.nonzero(changed)
    assert np.ptp(rows) == 39 and np.ptp(cols) == 39  # one solid square
    np.testing.assert_array_equal(out[~changed], roi[~changed])
    np.testing.assert_array_equal(out, occlude(roi, OcclusionSpec(0.10, seed=4)))
    assert not np.array_equal(out, occlude(roi, OcclusionSpec(0.10, seed=5)))


def test_occlude_zero_and_bounds(rng):
    roi = rng.random((128, 128))
    np.testing.assert_array_equal(occlude(roi, 0.0), roi)
    with pytest.raises(ValueError):
        OcclusionSpec(1.0)
    for seed in range(50):
        out = occlude(np.ones((128, 128)), OcclusionSpec(0.9, seed))
        assert (out == 0).sum() == round(math.sqrt(0.9) * 128) ** 2


# --- model-level evaluation --------------------------------------------------------------

@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("ev")
    return generate_dataset("pseudo_periodic", "phase", 0, 4, 1, 2, OpticalConfig(grid=(128, 128)), 2, out)


def test_evaluate_counts_and_determinism(data):
    model = build(ModelSpec("tvit", ViTConfig(depth=1, heads=2, hidden=16, mlp_dim=16)))
    a = evaluate(model, data, 3, seed=1)
    b = evaluate(model, data, 3, seed=1)
    assert a.n == 3 * len(data)
    np.testing.assert_array_equal(a.eps, b.eps)
    assert len(a.per_z()) == 5


def test_occlusion_sweep_zero_matches_plain(data, tmp_path):
    model = build(ModelSpec("tvgg", VggConfig(blocks=((4,), (4,)))))
    sweep = occlusion_sweep(model, data, [0.0, 0.05, 0.10], seed=3, rois_per_hologram=2)
    plain = evaluate(model, data, 2, seed=3)
    np.testing.assert_array_equal(sweep.reports[0].eps, plain.eps)
    assert not np.array_equal(sweep.reports[2].eps, plain.eps)
    rows = sweep.summary_rows()
    assert [r["pixels"] for r in rows] == [0, 29 * 29, 40 * 40]
    sweep.write(tmp_path)
    per_z = list(csv.reader(open(tmp_path / "occlusion_per_z.csv")))
    assert per_z[0] == ["fraction", "z_um", "mean_eps_um", "std_eps_um", "n"]
    assert len(per_z) == 1 + 3 * 5
    with pytest.raises(ValueError):
        occlusion_sweep(model, data, [0.1, 0.0])
    with pytest.raises(ValueError):
        evaluate(model, data.subset([]), 2)


def test_evaluate_classical_shares_residuals(data):
    idx = [3, 5, 7]  # z = 1, 2, 3 um
    rep = evaluate_classical(data.subset(idx), 0, 6, 1)
    z = np.array([data.records[i].z_h_um for i in idx])
    np.testing.assert_array_equal(rep.z_true, z)
    np.testing.assert_array_equal(rep.eps, residuals(rep.z_pred, z))


def test_evaluate_classical_flat_hologram_raises(data):
    # a phase object recorded in focus leaves no intensity contrast
    with pytest.raises(FocusNotFoundError):
        evaluate_classical(data.subset([1]), 0, 6, 1)


# --- benchmark ---------------------------------------------------------------------------

def test_bench_counts_and_order(tmp_path):
    model = build(ModelSpec("tvit", ViTConfig(depth=1, heads=2, hidden=16, mlp_dim=16)))
    res = bench_inference(model, n=25, threads=1)
    assert res.n == 25 and res.threads == 1 and res.precision == "f32"
    assert res.p10_ms <= res.median_ms <= res.p90_ms
    assert res.realtime_limit_ms == REALTIME_LIMIT_MS == 50.0
    write_bench_csv(tmp_path / "b.csv", [res])
    rows = list(csv.DictReader(open(tmp_path / "b.csv")))
    assert rows[0]["model"] == "tvit" and rows[0]["realtime_limit_ms"] == "50.0"
    assert set(rows[0]) >= {"model", "threads", "precision", "median_ms", "p10_ms", "p90_ms"}
    with pytest.raises(ValueError):
        bench_inference(model, n=5)
