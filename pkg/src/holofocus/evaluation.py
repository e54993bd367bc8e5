"""Error statistics, Gaussian fits, occlusion sweeps and latency benchmarks."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from .focus import Metric, autofocus_classical
from .models import Model
from .optics import DatasetManifest
from .training import ROI_SIZE, sample_rois

__all__ = [
    "FWHM_PER_SIGMA", "REALTIME_LIMIT_MS", "residuals", "ErrorReport", "OcclusionSpec", "occlude",
    "evaluate", "evaluate_classical", "OcclusionSweep", "occlusion_sweep", "BenchResult",
    "bench_inference", "write_bench_csv",
]

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
REALTIME_LIMIT_MS = 50.0  # 20 Hz control loop


def residuals(z_pred, z_true) -> np.ndarray:
    """eps = z_pred - z_true, the one error convention used for every estimator."""
    return np.asarray(z_pred, dtype=np.float64) - np.asarray(z_true, dtype=np.float64)


def _gauss(x, a, mu, sigma):
    return a * np.exp(-0.5 * ((x - mu) / sigma) ** 2)


@dataclass
class ErrorReport:
    """Pooled and per-distance statistics of eps (um)."""

    z_true: np.ndarray
    z_pred: np.ndarray
    fit: str = "ml"
    eps: np.ndarray = field(init=False)
    mu: float = field(init=False)
    sigma: float = field(init=False)

    def __post_init__(self):
        self.z_true = np.asarray(self.z_true, dtype=np.float64).ravel()
        self.z_pred = np.asarray(self.z_pred, dtype=np.float64).ravel()
        if self.z_true.size == 0:
            raise ValueError("error report needs at least one sample")
        if self.z_true.shape != self.z_pred.shape:
            raise ValueError("z_true and z_pred lengths differ")
        self.eps = residuals(self.z_pred, self.z_true)
        if self.fit == "ml":
            self.mu, self.sigma = float(self.eps.mean()), float(self.eps.std())
        elif self.fit == "histogram":
            self.mu, self.sigma = self._histogram_fit()
        else:
            raise ValueError(f"fit must be 'ml' or 'histogram', got {self.fit!r}")

    def _histogram_fit(self) -> tuple[float, float]:
        from scipy.optimize import curve_fit

        mu0, s0 = float(self.eps.mean()), float(self.eps.std())
        if s0 == 0:
            return mu0, 0.0
        counts, edges = np.histogram(self.eps, bins="auto")
        centres = 0.5 * (edges[1:] + edges[:-1])
        (_, mu, sigma), _ = curve_fit(_gauss, centres, counts, p0=(counts.max(), mu0, s0))
        return float(mu), float(abs(sigma))

    @property
    def n(self) -> int:
        return int(self.eps.size)

    @property
    def mean_abs_eps(self) -> float:
        """|mean eps|, the bias magnitude."""
        return abs(float(self.eps.mean()))

    @property
    def fwhm_um(self) -> float:
        return FWHM_PER_SIGMA * self.sigma

    @property
    def half_fwhm_um(self) -> float:
        return 0.5 * self.fwhm_um

    def per_z(self) -> list[tuple[float, float, float, int]]:
        """(z_um, mean_eps_um, std_eps_um, n) for every distinct true distance."""
        rows = []
        for z in np.unique(self.z_true):
            e = self.eps[self.z_true == z]
            rows.append((float(z), float(e.mean()), float(e.std()), int(e.size)))
        return rows

    def summary(self) -> dict:
        return {"n": self.n, "fit": self.fit, "mu_um": self.mu, "sigma_um": self.sigma,
                "fwhm_um": self.fwhm_um, "half_fwhm_um": self.half_fwhm_um,
                "mean_abs_eps_um": self.mean_abs_eps, "n_z": len(np.unique(self.z_true))}

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["z_um", "mean_eps_um", "std_eps_um", "n"])
            for z, m, s, k in self.per_z():
                w.writerow([repr(z), repr(m), repr(s), k])

    def write_summary(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=1) + "\n")


@dataclass(frozen=True)
class OcclusionSpec:
    fraction: float
    seed: int = 0
    roi_size: int = ROI_SIZE

    def __post_init__(self):
        if not 0.0 <= self.fraction < 1.0:
            raise ValueError(f"occlusion fraction must be in [0, 1), got {self.fraction}")

    @property
    def side(self) -> int:
        return int(round(math.sqrt(self.fraction) * self.roi_size))


def occlude(roi: np.ndarray, spec: OcclusionSpec | float, seed=None) -> np.ndarray:
    """Copy of ``roi`` with a seeded square of side round(sqrt(f)*size) set to 0."""
    if not isinstance(spec, OcclusionSpec):
        spec = OcclusionSpec(float(spec), 0 if seed is None else seed, roi.shape[-1])
    roi = np.asarray(roi)
    if roi.shape[-2:] != (spec.roi_size, spec.roi_size):
        raise ValueError(f"ROI shape {roi.shape} does not match size {spec.roi_size}")
    out = roi.copy()
    side = spec.side
    if side == 0:
        return out
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    r, c = rng.integers(0, spec.roi_size - side + 1, 2)
    out[..., r:r + side, c:c + side] = 0
    return out


def _predictions(model: Model, manifest: DatasetManifest, rois: int, seed: int,
                 occlusion: OcclusionSpec | None, batch: int):
    if len(manifest) == 0:
        raise ValueError("evaluation needs a non-empty test set")
    z_true, z_pred = [], []
    for i in range(len(manifest)):
        holo = manifest.load_record(i)
        x = sample_rois(holo, rois, [seed, 3, i], dtype=np.dtype(model.spec.dtype))
        if occlusion is not None and occlusion.side:
            for k in range(len(x)):
                x[k] = occlude(x[k], occlusion, [occlusion.seed, i, k])
        z_pred.append(model.predict(x, batch))
        z_true.append(np.full(rois, holo.z_h_um))
    return np.concatenate(z_true), np.concatenate(z_pred)


def evaluate(model: Model, test_manifest: DatasetManifest, rois_per_hologram: int = 16,
             seed: int = 0, fit: str = "ml", occlusion: OcclusionSpec | None = None,
             batch_size: int = 64) -> ErrorReport:
    """Predict ``rois_per_hologram`` seeded ROIs per hologram and pool eps."""
    z_true, z_pred = _predictions(model, test_manifest, rois_per_hologram, seed, occlusion, batch_size)
    return ErrorReport(z_true, z_pred, fit)


def evaluate_classical(manifest: DatasetManifest, z_min_um: float, z_max_um: float,
                       z_step_um: float = 1.0, metric: str | Metric = Metric.LAPLACIAN,
                       fit: str = "ml") -> ErrorReport:
    """The same statistics for the sharpness-search baseline."""
    if len(manifest) == 0:
        raise ValueError("evaluation needs a non-empty test set")
    z_true, z_pred = [], []
    for i in range(len(manifest)):
        holo = manifest.load_record(i)
        z_hat, _ = autofocus_classical(holo, z_min_um, z_max_um, z_step_um, metric)
        z_true.append(holo.z_h_um)
        z_pred.append(z_hat)
    return ErrorReport(np.array(z_true), np.array(z_pred), fit)


@dataclass
class OcclusionSweep:
    fractions: list[float]
    reports: list[ErrorReport]
    seed: int

    def summary_rows(self) -> list[dict]:
        rows = []
        for f, r in zip(self.fractions, self.reports):
            side = OcclusionSpec(f).side
            rows.append({"fraction": f, "side_px": side, "pixels": side * side,
                         "mean_abs_eps_um": r.mean_abs_eps, "mu_um": r.mu, "sigma_um": r.sigma,
                         "fwhm_um": r.fwhm_um, "n": r.n})
        return rows

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "occlusion_per_z.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fraction", "z_um", "mean_eps_um", "std_eps_um", "n"])
            for f, r in zip(self.fractions, self.reports):
                for z, m, s, k in r.per_z():
                    w.writerow([repr(f), repr(z), repr(m), repr(s), k])
        rows = self.summary_rows()
        with open(out / "occlusion_summary.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


def occlusion_sweep(model: Model, test_manifest: DatasetManifest, fractions, seed: int = 0,
                    rois_per_hologram: int = 16, batch_size: int = 64) -> OcclusionSweep:
    """evaluate() at each occlusion fraction with identical ROI positions."""
    fractions = [float(f) for f in fractions]
    if not fractions:
        raise ValueError("fractions list is empty")
    if any(b < a for a, b in zip(fractions, fractions[1:])):
        raise ValueError(f"fractions must be sorted ascending, got {fractions}")
    reports = [evaluate(model, test_manifest, rois_per_hologram, seed,
                        occlusion=OcclusionSpec(f, seed), batch_size=batch_size) for f in fractions]
    return OcclusionSweep(fractions, reports, seed)


@dataclass(frozen=True)
class BenchResult:
    model: str
    threads: int
    precision: str
    timings_ms: tuple[float, ...]
    realtime_limit_ms: float = REALTIME_LIMIT_MS

    @property
    def n(self) -> int:
        return len(self.timings_ms)

    @property
    def median_ms(self) -> float:
        return float(np.median(self.timings_ms))

    @property
    def p10_ms(self) -> float:
        return float(np.percentile(self.timings_ms, 10))

    @property
    def p90_ms(self) -> float:
        return float(np.percentile(self.timings_ms, 90))

    @property
    def realtime(self) -> bool:
        return self.median_ms < self.realtime_limit_ms

    def row(self) -> dict:
        return {"model": self.model, "threads": self.threads, "precision": self.precision,
                "n": self.n, "median_ms": self.median_ms, "p10_ms": self.p10_ms,
                "p90_ms": self.p90_ms, "realtime_limit_ms": self.realtime_limit_ms}


def _blas_threads() -> int:
    info = threadpool_info()
    return max((p.get("num_threads", 1) for p in info), default=1)


def bench_inference(model: Model, n: int = 200, threads: int | None = None, warmup: int = 10,
                    seed: int = 0) -> BenchResult:
    """Median, p10 and p90 of ``n`` single-ROI forward passes after a warm-up."""
    if n < 10:
        raise ValueError(f"bench needs n >= 10 timed inferences, got {n}")
    if warmup < 10:
        raise ValueError(f"warm-up must be >= 10 inferences, got {warmup}")
    roi = np.random.default_rng(seed).random((1, ROI_SIZE, ROI_SIZE)).astype(model.spec.dtype)
    limiter = threadpool_limits(threads) if threads else None
    try:
        used = threads or _blas_threads()
        for _ in range(warmup):
            model.predict(roi)
        times = []
        for _ in range(n):
            t0 = time.perf_counter()
            model.predict(roi)
            times.append((time.perf_counter() - t0) * 1e3)
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    precision = "f32" if model.spec.dtype == "float32" else "f64"
    return BenchResult(model.arch, used, precision, tuple(times))


def write_bench_csv(path: str | Path, results: list[BenchResult]) -> None:
    if not results:
        raise ValueError("no benchmark results to write")
    rows = [r.row() for r in results]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
