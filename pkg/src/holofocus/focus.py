"""Classical autofocus: reconstruct over a z sweep and score image sharpness."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.fft

from .optics import HologramRecord, Modality, _transfer, count_z_steps

__all__ = [
    "Metric", "FocusCurve", "FocusNotFoundError", "focus_metric", "focus_curve",
    "autofocus_classical", "peak_of", "parabolic_peak", "write_curve_csv", "read_curve_csv",
]


class Metric(str, Enum):
    LAPLACIAN = "laplacian"
    VARIANCE = "variance"
    TAMURA = "tamura"
    GRADIENT_ABS = "gradient_abs"

    @classmethod
    def parse(cls, name: "str | Metric") -> "Metric":
        if isinstance(name, Metric):
            return name
        return _ALIASES.get(name.lower()) or cls(name.lower())


_ALIASES = {"lap": Metric.LAPLACIAN, "var": Metric.VARIANCE, "grad": Metric.GRADIENT_ABS}


class FocusNotFoundError(RuntimeError):
    """The focus curve has no extremum (all scores equal)."""


@dataclass
class FocusCurve:
    z_um: np.ndarray
    score: np.ndarray
    metric: Metric

    def __post_init__(self):
        self.z_um = np.asarray(self.z_um, dtype=np.float64)
        self.score = np.asarray(self.score, dtype=np.float64)
        if self.z_um.shape != self.score.shape:
            raise ValueError("z_um and score lengths differ")
        if np.any(np.diff(self.z_um) <= 0):
            raise ValueError("z_um must be strictly increasing")


def _laplacian(img: np.ndarray) -> np.ndarray:
    p = np.pad(img, 1, mode="edge")
    return p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * img


def focus_metric(intensity: np.ndarray, metric: str | Metric = Metric.LAPLACIAN) -> float:
    """Sharpness score of a non-negative image (edges replicated).

    laplacian     sum of the squared 5-point Laplacian
    variance      grey-level variance
    tamura        sqrt(std / mean)
    gradient_abs  sum of |dI/dx| + |dI/dy| by forward differences
    """
    metric = Metric.parse(metric)
    img = np.asarray(intensity, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 3:
        raise ValueError(f"focus_metric needs a 2-D image of at least 3x3, got {img.shape}")
    if metric is Metric.LAPLACIAN:
        return float(np.sum(_laplacian(img) ** 2))
    # centring on one pixel first makes a constant image score exactly 0
    spread = (img - img.flat[0]).std()
    if metric is Metric.VARIANCE:
        return float(spread ** 2)
    if metric is Metric.TAMURA:
        m = img.mean()
        if not m > 0:
            raise ValueError("tamura coefficient undefined for an image with zero mean")
        return float(np.sqrt(spread / m))
    gx = np.abs(np.diff(img, axis=1, append=img[:, -1:]))
    gy = np.abs(np.diff(img, axis=0, append=img[-1:, :]))
    return float(gx.sum() + gy.sum())


def _sweep(z_min_um: float, z_max_um: float, z_step_um: float) -> np.ndarray:
    if not z_step_um > 0:
        raise ValueError(f"z_step_um must be positive, got {z_step_um}")
    n = count_z_steps(z_min_um, z_max_um, z_step_um) if z_max_um >= z_min_um else 0
    if n < 3:
        raise ValueError(f"sweep {z_min_um}..{z_max_um} step {z_step_um} has fewer than 3 planes")
    return z_min_um + z_step_um * np.arange(n)


def focus_curve(holo: HologramRecord, z_min_um: float, z_max_um: float, z_step_um: float = 1.0,
                metric: str | Metric = Metric.LAPLACIAN, use_field: bool = True) -> FocusCurve:
    """Score the amplitude reconstruction at every plane of the sweep.

    The complex sensor field is used when the record carries one (simulated
    holograms); otherwise the square-rooted intensity is taken as the field
    modulus with zero phase.  Scores are normalized to a maximum of 1.
    """
    metric = Metric.parse(metric)
    if holo.config is None:
        raise ValueError("focus_curve needs the record's optical config")
    zs = _sweep(z_min_um, z_max_um, z_step_um)
    if use_field and holo.field is not None:
        u = holo.field
    else:
        u = np.sqrt(holo.as_float()).astype(np.complex128)
    spec = scipy.fft.fft2(u)
    pitch, lam = holo.config.object_pitch_um, holo.config.wavelength_um
    scores = np.empty(len(zs))
    for i, z in enumerate(zs):
        amp = np.abs(scipy.fft.ifft2(spec * _transfer(u.shape, pitch, lam, -z)))
        scores[i] = focus_metric(amp, metric)
    top = scores.max()
    if top > 0:
        scores = scores / top
    return FocusCurve(zs, scores, metric)


def parabolic_peak(z: np.ndarray, s: np.ndarray, i: int) -> float:
    """Vertex of the parabola through samples i-1, i, i+1 (uniform spacing).

    Falls back to ``z[i]`` at the sweep boundaries or on a flat triple.
    """
    if i <= 0 or i >= len(z) - 1:
        return float(z[i])
    s0, s1, s2 = s[i - 1], s[i], s[i + 1]
    denom = s0 - 2.0 * s1 + s2
    if denom == 0:
        return float(z[i])
    h = z[i + 1] - z[i]
    return float(z[i] + 0.5 * h * (s0 - s2) / denom)


def _resolve_extremum(holo: HologramRecord, extremum: str) -> str:
    if extremum != "auto":
        if extremum not in ("max", "min"):
            raise ValueError(f"extremum must be 'auto', 'max' or 'min', got {extremum!r}")
        return extremum
    # a phase object has uniform modulus in focus: sharpness is minimal there
    if holo.pattern is not None and holo.pattern.modality is Modality.PHASE:
        return "min"
    return "max"


def autofocus_classical(holo: HologramRecord, z_min_um: float, z_max_um: float,
                        z_step_um: float = 1.0, metric: str | Metric = Metric.LAPLACIAN,
                        extremum: str = "auto", use_field: bool = True) -> tuple[float, FocusCurve]:
    """Focus distance at the curve extremum, refined by parabolic interpolation."""
    curve = focus_curve(holo, z_min_um, z_max_um, z_step_um, metric, use_field)
    return peak_of(curve, _resolve_extremum(holo, extremum)), curve


def peak_of(curve: FocusCurve, extremum: str = "max") -> float:
    s = curve.score if extremum == "max" else -curve.score
    if np.ptp(s) == 0:
        raise FocusNotFoundError("focus curve is flat; no focus found")
    return parabolic_peak(curve.z_um, s, int(np.argmax(s)))


def write_curve_csv(path: str | Path, curve: FocusCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["z_um", "score"])
        for z, s in zip(curve.z_um, curve.score):
            w.writerow([repr(float(z)), repr(float(s))])


def read_curve_csv(path: str | Path, metric: str | Metric = Metric.LAPLACIAN) -> FocusCurve:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return FocusCurve(data[:, 0], data[:, 1], Metric.parse(metric))
