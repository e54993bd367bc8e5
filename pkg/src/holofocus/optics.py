"""Hologram simulation: object patterns, angular-spectrum propagation, recording.

Distances and lengths are in micrometres throughout.  Fields live in the
object plane, i.e. they are sampled at ``sensor_pitch_um / magnification``.
"""

from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.fft

__all__ = [
    "OpticalConfig", "ComplexField", "PatternKind", "Modality", "PatternSpec",
    "HologramRecord", "DatasetManifest", "ManifestRecord",
    "transfer_function", "propagate", "make_pattern", "record_hologram",
    "generate_dataset", "write_hologram", "read_hologram", "count_z_steps",
    "default_phase_depth",
]


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class OpticalConfig:
    """Microscope and sensor parameters (defaults: 10x/0.32 DHM at 674.99 nm)."""

    wavelength_um: float = 0.67499
    na: float = 0.32
    magnification: float = 10.0
    sensor_pitch_um: float = 5.86
    grid: tuple[int, int] = (1024, 1024)

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        if not self.wavelength_um > 0:
            raise ValueError(f"wavelength_um must be positive, got {self.wavelength_um}")
        if not 0 < self.na < 1:
            raise ValueError(f"na must lie in (0, 1), got {self.na}")
        if not self.magnification > 0:
            raise ValueError(f"magnification must be positive, got {self.magnification}")
        if not self.sensor_pitch_um > 0:
            raise ValueError(f"sensor_pitch_um must be positive, got {self.sensor_pitch_um}")
        if len(self.grid) != 2 or not all(_is_pow2(g) and g >= 16 for g in self.grid):
            raise ValueError(f"grid dims must be powers of two >= 16, got {self.grid}")

    @property
    def object_pitch_um(self) -> float:
        return self.sensor_pitch_um / self.magnification

    def dof_um(self) -> float:
        """Depth of field 2*lambda/NA^2 (13.18 um for the defaults)."""
        return 2.0 * self.wavelength_um / self.na ** 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OpticalConfig":
        return cls(**{**d, "grid": tuple(d["grid"])})


@dataclass
class ComplexField:
    data: np.ndarray
    pitch_um: float
    wavelength_um: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 2:
            raise ValueError(f"field must be 2-D, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("field contains NaN or Inf")
        if not self.pitch_um > 0 or not self.wavelength_um > 0:
            raise ValueError("pitch_um and wavelength_um must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def energy(self) -> float:
        return float(np.sum(np.abs(self.data) ** 2))

    def intensity(self) -> np.ndarray:
        return np.abs(self.data) ** 2


class PatternKind(str, Enum):
    PSEUDO_PERIODIC = "pseudo_periodic"
    USAF = "usaf"


class Modality(str, Enum):
    PHASE = "phase"
    AMPLITUDE = "amplitude"


def default_phase_depth(wavelength_um: float) -> float:
    """Round-trip phase of a 100 nm reflective step: 4*pi*0.1/lambda."""
    return 4.0 * math.pi * 0.1 / wavelength_um


@dataclass(frozen=True)
class PatternSpec:
    kind: PatternKind = PatternKind.PSEUDO_PERIODIC
    modality: Modality = Modality.PHASE
    period_um: float = 9.0
    pose: tuple[float, float, float] = (0.0, 0.0, 0.0)  # dx_um, dy_um, theta_deg
    phase_depth_rad: float | None = None  # None -> default_phase_depth(wavelength)
    fill_density: float = 0.5
    layout_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", PatternKind(self.kind))
        object.__setattr__(self, "modality", Modality(self.modality))
        object.__setattr__(self, "pose", tuple(float(p) for p in self.pose))
        if self.phase_depth_rad is not None and not 0 < self.phase_depth_rad < 2 * math.pi:
            raise ValueError(f"phase_depth_rad must lie in (0, 2*pi), got {self.phase_depth_rad}")
        if not 0 < self.fill_density <= 1:
            raise ValueError(f"fill_density must lie in (0, 1], got {self.fill_density}")
        if not self.period_um > 0:
            raise ValueError(f"period_um must be positive, got {self.period_um}")

    def with_pose(self, dx_um: float, dy_um: float, theta_deg: float) -> "PatternSpec":
        return replace(self, pose=(dx_um, dy_um, theta_deg))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["modality"] = self.modality.value
        d["pose"] = list(self.pose)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PatternSpec":
        return cls(**{**d, "pose": tuple(d["pose"])})


@dataclass
class HologramRecord:
    """One recorded intensity image and its ground-truth distance.

    ``field`` holds the complex sensor-plane wavefront when the record was
    simulated in this process; it is not serialized.  Autofocus uses it the
    way a DHM uses its reconstructed complex field.
    """

    pixels: np.ndarray
    z_h_um: float
    pattern: PatternSpec | None = None
    config: OpticalConfig | None = None
    seed: int = 0
    field: np.ndarray | None = None

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise ValueError(f"pixels must be 2-D, got {self.pixels.shape}")
        if self.pixels.dtype not in (np.uint8, np.float32):
            raise ValueError(f"pixels must be uint8 or float32, got {self.pixels.dtype}")
        if self.config is not None and self.pixels.shape != self.config.grid:
            raise ValueError(f"pixels {self.pixels.shape} do not match grid {self.config.grid}")

    def as_float(self) -> np.ndarray:
        """Pixels scaled to [0, 1] as float64."""
        if self.pixels.dtype == np.uint8:
            return self.pixels.astype(np.float64) / 255.0
        return self.pixels.astype(np.float64)


# ---------------------------------------------------------------------------
# propagation

@lru_cache(maxsize=32)
def _kz(shape: tuple[int, int], pitch_um: float, wavelength_um: float) -> tuple[np.ndarray, np.ndarray]:
    """Axial spatial frequency sqrt(1/lambda^2 - fx^2 - fy^2) and the propagating mask."""
    fy = np.fft.fftfreq(shape[0], d=pitch_um)
    fx = np.fft.fftfreq(shape[1], d=pitch_um)
    arg = 1.0 / wavelength_um ** 2 - fy[:, None] ** 2 - fx[None, :] ** 2
    band = arg > 0
    kz = np.sqrt(np.where(band, arg, 0.0))
    kz.flags.writeable = False
    band.flags.writeable = False
    return kz, band


def _transfer(shape, pitch_um: float, wavelength_um: float, z_um: float) -> np.ndarray:
    if not pitch_um > 0:
        raise ValueError(f"pitch must be positive, got {pitch_um}")
    if not wavelength_um > 0:
        raise ValueError(f"wavelength must be positive, got {wavelength_um}")
    if not math.isfinite(z_um):
        raise ValueError(f"z must be finite, got {z_um}")
    kz, band = _kz(tuple(int(s) for s in shape), float(pitch_um), float(wavelength_um))
    return np.where(band, np.exp(2j * np.pi * z_um * kz), 0.0)


def transfer_function(config: OpticalConfig, z_um: float, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Angular-spectrum transfer function on the FFT frequency grid.

    ``exp(i 2 pi z sqrt(1/lambda^2 - fx^2 - fy^2))`` inside the propagating
    circle, exactly zero on the evanescent band.
    """
    return _transfer(shape or config.grid, config.object_pitch_um, config.wavelength_um, z_um)


def propagate(field: ComplexField, z_um: float, config: OpticalConfig | None = None,
              pad: bool = False) -> ComplexField:
    """Propagate ``field`` by ``z_um`` (negative = back-propagation).

    With ``pad`` the field is zero-padded to twice its size before the FFT
    and cropped afterwards, suppressing wrap-around at the edges.
    """
    if config is not None and (not math.isclose(config.object_pitch_um, field.pitch_um)
                               or not math.isclose(config.wavelength_um, field.wavelength_um)):
        raise ValueError("propagate: field pitch/wavelength do not match the optical config")
    u = field.data
    if pad:
        h, w = u.shape
        u = np.pad(u, ((h // 2, h - h // 2), (w // 2, w - w // 2)))
    spec = scipy.fft.fft2(u)
    spec *= _transfer(u.shape, field.pitch_um, field.wavelength_um, z_um)
    out = scipy.fft.ifft2(spec)
    if pad:
        out = out[h // 2:h // 2 + h, w // 2:w // 2 + w]
    return ComplexField(out, field.pitch_um, field.wavelength_um)


# ---------------------------------------------------------------------------
# patterns

def _object_coords(spec: PatternSpec, config: OpticalConfig) -> tuple[np.ndarray, np.ndarray]:
    """Pattern-frame coordinates (um) of every pixel centre, after pose."""
    h, w = config.grid
    p = config.object_pitch_um
    y = (np.arange(h) - h / 2) * p
    x = (np.arange(w) - w / 2) * p
    yy, xx = np.meshgrid(y, x, indexing="ij")
    dx, dy, theta = spec.pose
    t = math.radians(theta)
    c, s = math.cos(t), math.sin(t)
    return c * xx + s * yy - dx, -s * xx + c * yy - dy


def _grid_mask(xr: np.ndarray, yr: np.ndarray, period: float) -> np.ndarray:
    # square dots of half-period side on a square lattice
    return (np.mod(xr / period, 1.0) < 0.5) & (np.mod(yr / period, 1.0) < 0.5)


USAF_BAR_WIDTHS_UM = (8.0, 4.0, 2.0, 1.0)


def _usaf_tree(rng: np.random.Generator, fill: float, level: int):
    """Quadtree: each cell holds a three-bar group with prob ``fill``, else splits."""
    if rng.random() < fill:
        return ("group", int(rng.integers(2)))
    if level + 1 >= len(USAF_BAR_WIDTHS_UM):
        return ("empty",)
    return ("split", [_usaf_tree(rng, fill, level + 1) for _ in range(4)])


def _usaf_eval(node, lx: np.ndarray, ly: np.ndarray, level: int) -> np.ndarray:
    bar = USAF_BAR_WIDTHS_UM[level]
    cell = 5.0 * bar
    if node[0] == "empty":
        return np.zeros(lx.shape, dtype=bool)
    if node[0] == "group":
        along = lx if node[1] == 0 else ly
        idx = np.clip(np.floor(along / bar).astype(np.int64), 0, 4)
        return idx % 2 == 0
    half = cell / 2.0
    out = np.zeros(lx.shape, dtype=bool)
    right, low = lx >= half, ly >= half
    for k, child in enumerate(node[1]):
        sel = (right == bool(k & 1)) & (low == bool(k & 2))
        if sel.any():
            out[sel] = _usaf_eval(child, lx[sel] - half * (k & 1), ly[sel] - half * ((k >> 1) & 1),
                                  level + 1)
    return out


def _usaf_mask(xr: np.ndarray, yr: np.ndarray, fill: float, layout_seed: int) -> np.ndarray:
    top = 5.0 * USAF_BAR_WIDTHS_UM[0]
    ix = np.floor(xr / top).astype(np.int64)
    iy = np.floor(yr / top).astype(np.int64)
    out = np.zeros(xr.shape, dtype=bool)
    for cx, cy in set(zip(ix.ravel().tolist(), iy.ravel().tolist())):
        sel = (ix == cx) & (iy == cy)
        rng = np.random.default_rng([layout_seed, cx + (1 << 31), cy + (1 << 31)])
        tree = _usaf_tree(rng, fill, 0)
        out[sel] = _usaf_eval(tree, xr[sel] - cx * top, yr[sel] - cy * top, 0)
    return out


def make_pattern(spec: PatternSpec, config: OpticalConfig) -> ComplexField:
    """Object-plane field of the posed pattern.

    Phase modality gives unit amplitude with binary phase {0, depth};
    amplitude modality gives binary transmittance {0, 1}.  USAF charts are
    built from three-bar groups on a quadtree of four scales (bar widths
    8, 4, 2, 1 um); ``fill_density`` is the probability that a cell holds a
    group rather than splitting.
    """
    if spec.kind is PatternKind.PSEUDO_PERIODIC and spec.period_um < 2 * config.object_pitch_um:
        raise ValueError(f"period {spec.period_um} um is below twice the object pitch "
                         f"{config.object_pitch_um:.4f} um and cannot be resolved")
    xr, yr = _object_coords(spec, config)
    if spec.kind is PatternKind.PSEUDO_PERIODIC:
        mask = _grid_mask(xr, yr, spec.period_um)
    else:
        mask = _usaf_mask(xr, yr, spec.fill_density, spec.layout_seed)
    if spec.modality is Modality.PHASE:
        depth = spec.phase_depth_rad or default_phase_depth(config.wavelength_um)
        data = np.exp(1j * depth * mask)
    else:
        data = mask.astype(np.complex128)
    return ComplexField(data, config.object_pitch_um, config.wavelength_um)


# ---------------------------------------------------------------------------
# recording

def _rescale(intensity: np.ndarray) -> np.ndarray:
    lo, hi = float(intensity.min()), float(intensity.max())
    # a flat image (e.g. a phase object at z = 0) carries only FFT round-off
    if hi - lo <= 1e-9 * max(abs(hi), 1e-300):
        return np.zeros_like(intensity)
    return (intensity - lo) / (hi - lo)


def record_hologram(obj: ComplexField, z_h_um: float, quantize_8bit: bool = True,
                    noise_std: float = 0.0, seed: int = 0, *,
                    pattern: PatternSpec | None = None, config: OpticalConfig | None = None,
                    keep_field: bool = True) -> HologramRecord:
    """In-line intensity hologram of ``obj`` at distance ``z_h_um``.

    Noise (if any) is Gaussian with standard deviation ``noise_std`` in units
    of the mean intensity, added before the per-image [0, 1] rescaling.
    """
    if noise_std < 0:
        raise ValueError(f"noise_std must be >= 0, got {noise_std}")
    sensor = propagate(obj, z_h_um)
    intensity = sensor.intensity()
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        intensity = intensity + noise_std * intensity.mean() * rng.standard_normal(intensity.shape)
    v = _rescale(intensity)
    if quantize_8bit:
        pixels = np.round(255.0 * v).astype(np.uint8)
    else:
        pixels = v.astype(np.float32)
    return HologramRecord(pixels, float(z_h_um), pattern, config, int(seed),
                          sensor.data if keep_field else None)


# ---------------------------------------------------------------------------
# hologram file format

HOLO_MAGIC = b"HOLO"
HOLO_VERSION = 1
_HOLO_HEADER = struct.Struct("<4sHIIBdQ")


def write_hologram(path: str | Path, record: HologramRecord) -> None:
    h, w = record.pixels.shape
    code = 0 if record.pixels.dtype == np.uint8 else 1
    header = _HOLO_HEADER.pack(HOLO_MAGIC, HOLO_VERSION, w, h, code, float(record.z_h_um),
                               int(record.seed) & 0xFFFFFFFFFFFFFFFF)
    dt = "<u1" if code == 0 else "<f4"
    Path(path).write_bytes(header + np.ascontiguousarray(record.pixels, dtype=dt).tobytes())


def read_hologram(path: str | Path, pattern: PatternSpec | None = None,
                  config: OpticalConfig | None = None) -> HologramRecord:
    buf = Path(path).read_bytes()
    if len(buf) < _HOLO_HEADER.size:
        raise ValueError(f"{path}: truncated hologram header")
    magic, version, w, h, code, z_h, seed = _HOLO_HEADER.unpack_from(buf)
    if magic != HOLO_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != HOLO_VERSION:
        raise ValueError(f"{path}: unsupported hologram version {version}")
    if code not in (0, 1):
        raise ValueError(f"{path}: unknown pixel dtype code {code}")
    dt = np.dtype("<u1") if code == 0 else np.dtype("<f4")
    expected = _HOLO_HEADER.size + w * h * dt.itemsize
    if len(buf) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(buf)}")
    pixels = np.frombuffer(buf, dtype=dt, offset=_HOLO_HEADER.size).reshape(h, w)
    pixels = pixels.astype(np.uint8 if code == 0 else np.float32)
    return HologramRecord(pixels, z_h, pattern, config, seed)


# ---------------------------------------------------------------------------
# datasets

MANIFEST_NAME = "manifest.json"
MANIFEST_SCHEMA = 1


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    z_h_um: float
    site: int
    seed: int
    pose: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass
class DatasetManifest:
    config: OpticalConfig
    pattern: PatternSpec
    z_min_um: float
    z_max_um: float
    z_step_um: float
    sites_per_z: int
    seed: int
    quantize_8bit: bool = True
    noise_std: float = 0.0
    records: list[ManifestRecord] = field(default_factory=list)
    root: Path | None = None

    def __len__(self) -> int:
        return len(self.records)

    def to_dict(self) -> dict:
        return {
            "schema_version": MANIFEST_SCHEMA,
            "config": self.config.to_dict(),
            "pattern": self.pattern.to_dict(),
            "z_min_um": self.z_min_um,
            "z_max_um": self.z_max_um,
            "z_step_um": self.z_step_um,
            "sites_per_z": self.sites_per_z,
            "seed": self.seed,
            "quantize_8bit": self.quantize_8bit,
            "noise_std": self.noise_std,
            "records": [{"path": r.path, "z_h_um": r.z_h_um, "site": r.site, "seed": r.seed,
                         "pose": list(r.pose)} for r in self.records],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        d = json.loads(path.read_text(encoding="utf-8"))
        if d.get("schema_version") != MANIFEST_SCHEMA:
            raise ValueError(f"{path}: unsupported manifest schema {d.get('schema_version')}")
        records = [ManifestRecord(r["path"], r["z_h_um"], r["site"], r["seed"],
                                  tuple(r.get("pose", (0.0, 0.0, 0.0)))) for r in d["records"]]
        return cls(OpticalConfig.from_dict(d["config"]), PatternSpec.from_dict(d["pattern"]),
                   d["z_min_um"], d["z_max_um"], d["z_step_um"], d["sites_per_z"], d["seed"],
                   d.get("quantize_8bit", True), d.get("noise_std", 0.0), records, path.parent)

    def subset(self, indices) -> "DatasetManifest":
        return replace(self, records=[self.records[i] for i in indices])

    def load_record(self, i: int) -> HologramRecord:
        r = self.records[i]
        base = self.root if self.root is not None else Path(".")
        return read_hologram(base / r.path, self.pattern.with_pose(*r.pose), self.config)


def count_z_steps(z_min_um: float, z_max_um: float, z_step_um: float) -> int:
    return int(math.floor((z_max_um - z_min_um) / z_step_um + 1 + 1e-9))


def _site_pose(seed: int, site: int, kind: PatternKind, period_um: float,
               config: OpticalConfig) -> tuple[float, float, float]:
    rng = np.random.default_rng([seed, site, 0x5173])
    if kind is PatternKind.PSEUDO_PERIODIC:
        span = period_um
    else:
        span = 0.5 * config.grid[1] * config.object_pitch_um
    return (float(rng.uniform(0, span)), float(rng.uniform(0, span)), float(rng.uniform(-8.0, 8.0)))


def _record_seed(seed: int, iz: int, site: int) -> int:
    return int(np.random.SeedSequence([seed, iz, site]).generate_state(1, np.uint64)[0])


def _simulate_site(job):
    config, spec, quantize, noise, shots = job
    obj = make_pattern(spec, config)
    for z, rseed, path in shots:
        rec = record_hologram(obj, z, quantize, noise, rseed, pattern=spec, config=config,
                              keep_field=False)
        write_hologram(path, rec)


def generate_dataset(pattern_kind, modality, z_min_um: float, z_max_um: float, z_step_um: float,
                     sites_per_z: int, config: OpticalConfig, seed: int, out_dir: str | Path, *,
                     force: bool = False, quantize_8bit: bool = True, noise_std: float = 0.0,
                     pattern: PatternSpec | None = None, workers: int = 1) -> DatasetManifest:
    """Simulate one hologram per (z, site) and write them with a manifest.

    Each site has a fixed random pose (shift, in-plane rotation within
    +-8 deg) and is scanned over the whole z range.  Record content depends
    only on (seed, z index, site index).
    """
    if not z_step_um > 0:
        raise ValueError(f"z_step_um must be positive, got {z_step_um}")
    if sites_per_z < 1:
        raise ValueError(f"sites_per_z must be >= 1, got {sites_per_z}")
    if z_max_um < z_min_um:
        raise ValueError("z_max_um must be >= z_min_um")
    out = Path(out_dir)
    mpath = out / MANIFEST_NAME
    if mpath.exists() and not force:
        raise FileExistsError(f"{mpath} exists; pass force=True to overwrite")
    out.mkdir(parents=True, exist_ok=True)

    base = pattern or PatternSpec()
    base = replace(base, kind=PatternKind(pattern_kind), modality=Modality(modality))
    poses = [_site_pose(seed, s, base.kind, base.period_um, config) for s in range(sites_per_z)]
    n_z = count_z_steps(z_min_um, z_max_um, z_step_um)
    records = []
    shots: list[list] = [[] for _ in range(sites_per_z)]
    for iz in range(n_z):
        z = round(z_min_um + iz * z_step_um, 9)
        for site in range(sites_per_z):
            name = f"z{iz:05d}_s{site:03d}.holo"
            rseed = _record_seed(seed, iz, site)
            records.append(ManifestRecord(name, z, site, rseed, poses[site]))
            shots[site].append((z, rseed, out / name))
    jobs = [(config, base.with_pose(*poses[s]), quantize_8bit, noise_std, shots[s])
            for s in range(sites_per_z)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            list(ex.map(_simulate_site, jobs))
    else:
        for job in jobs:
            _simulate_site(job)
    manifest = DatasetManifest(config, base, z_min_um, z_max_um, z_step_um, sites_per_z, seed,
                               quantize_8bit, noise_std, records, out)
    manifest.save(mpath)
    return manifest
