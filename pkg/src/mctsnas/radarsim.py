"""Synthetic range-Doppler maps (a stand-in, not a physical radar model).

Rows are Doppler bins with zero Doppler at the centre row, columns are range
bins.  A map is ``|noise + clutter + targets|`` where

* noise is unit-power circular complex Gaussian,
* clutter (absent in the thermal-only scenario) is complex Gaussian whose
  power follows a Gaussian ridge around zero Doppler; the ridge width grows
  with platform speed and its power falls with elevation,
* targets are small square footprints with uniform random phase and SNR.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MAP_SIZE = 128
MAX_TARGETS = 6


@dataclass(frozen=True)
class Scenario:
    aircraft_speed: float | None
    elevation: float | None
    thermal_only: bool = False

    def __post_init__(self):
        if self.thermal_only:
            if self.aircraft_speed is not None or self.elevation is not None:
                raise ValueError("thermal-only scenario takes no speed/elevation")
        elif self.aircraft_speed is None or self.elevation is None:
            raise ValueError("clutter scenario needs speed and elevation")


# scenarios 1..10, in table order
SCENARIOS: tuple[Scenario, ...] = tuple(
    Scenario(v, e) for v in (250, 500, 1000) for e in (5000, 1000, 10000)
) + (Scenario(None, None, thermal_only=True),)


def scenario(number: int) -> Scenario:
    if not 1 <= number <= len(SCENARIOS):
        raise ValueError(f"scenario number must be in 1..{len(SCENARIOS)}")
    return SCENARIOS[number - 1]


@dataclass(frozen=True)
class GeneratorConfig:
    shape: tuple[int, int] = (MAP_SIZE, MAP_SIZE)
    out_size: int | None = MAP_SIZE
    noise_power: float = 1.0
    bins_per_mps: float = 1.0 / 125.0  # ridge std in Doppler bins per m/s
    cnr_ref_db: float = 30.0  # clutter-to-noise ratio at the ridge peak, at ref elevation
    ref_elevation: float = 5000.0
    snr_db: tuple[float, float] = (8.0, 20.0)
    target_extent: int = 1  # footprint side in cells (1 or 2)


def ridge_sigma_bins(sc: Scenario, cfg: GeneratorConfig = GeneratorConfig()) -> float:
    return 0.0 if sc.thermal_only else sc.aircraft_speed * cfg.bins_per_mps


def clutter_peak_power(sc: Scenario, cfg: GeneratorConfig = GeneratorConfig()) -> float:
    if sc.thermal_only:
        return 0.0
    return cfg.noise_power * 10 ** (cfg.cnr_ref_db / 10) * cfg.ref_elevation / sc.elevation


def clutter_profile(sc: Scenario, n_doppler: int, cfg: GeneratorConfig = GeneratorConfig()) -> np.ndarray:
    """Expected clutter power per Doppler bin."""
    if sc.thermal_only:
        return np.zeros(n_doppler)
    d = np.arange(n_doppler) - n_doppler // 2
    sigma = ridge_sigma_bins(sc, cfg)
    return clutter_peak_power(sc, cfg) * np.exp(-0.5 * (d / sigma) ** 2)


def clutter_support(sc: Scenario, n_doppler: int, cfg: GeneratorConfig = GeneratorConfig()) -> int:
    """Number of Doppler bins where expected clutter power exceeds the noise floor."""
    return int(np.count_nonzero(clutter_profile(sc, n_doppler, cfg) > cfg.noise_power))


@dataclass(frozen=True)
class RangeDopplerSample:
    map: np.ndarray  # float64 magnitudes
    mask: np.ndarray  # uint8 labels
    n_targets: int
    scenario: Scenario
    seed: int


def _cgauss(rng, shape, power):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(power / 2)


def generate_sample(sc: Scenario, seed: int, cfg: GeneratorConfig = GeneratorConfig()) -> RangeDopplerSample:
    rng = np.random.default_rng(seed)
    nd, nr = cfg.shape
    field = _cgauss(rng, (nd, nr), cfg.noise_power)
    if not sc.thermal_only:
        field += _cgauss(rng, (nd, nr), 1.0) * np.sqrt(clutter_profile(sc, nd, cfg))[:, None]
    n_targets = int(rng.integers(0, MAX_TARGETS + 1))
    mask = np.zeros((nd, nr), np.uint8)
    e = cfg.target_extent
    for _ in range(n_targets):
        d0 = int(rng.integers(0, nd - e + 1))
        r0 = int(rng.integers(0, nr - e + 1))
        snr = 10 ** (rng.uniform(*cfg.snr_db) / 10)
        phase = rng.uniform(0, 2 * np.pi)
        field[d0:d0 + e, r0:r0 + e] += np.sqrt(snr * cfg.noise_power) * np.exp(1j * phase)
        mask[d0:d0 + e, r0:r0 + e] = 1
    mag = np.abs(field)
    if cfg.out_size is not None:
        mag, mask = pad_to(mag, mask, cfg.out_size)
    return RangeDopplerSample(mag, mask, n_targets, sc, seed)


def pad_to(map_, mask, size: int = MAP_SIZE):
    """Zero-pad map and mask to size x size, content anchored top-left."""
    h, w = map_.shape
    if mask.shape != map_.shape:
        raise ValueError(f"map {map_.shape} and mask {mask.shape} differ")
    if h > size or w > size:
        raise ValueError(f"map {map_.shape} larger than {size}x{size}")
    out_map = np.zeros((size, size), dtype=map_.dtype)
    out_mask = np.zeros((size, size), dtype=mask.dtype)
    out_map[:h, :w] = map_
    out_mask[:h, :w] = mask
    return out_map, out_mask


def pad_to_128(map_, mask):
    return pad_to(map_, mask, MAP_SIZE)


def sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(0x5A, index)).generate_state(1)[0])


def make_samples(scenarios: Sequence[Scenario], count: int, seed: int,
                 cfg: GeneratorConfig = GeneratorConfig()) -> list[RangeDopplerSample]:
    return [generate_sample(scenarios[i % len(scenarios)], sample_seed(seed, i), cfg) for i in range(count)]


def standardize(mag: np.ndarray) -> np.ndarray:
    x = np.log1p(mag)
    std = x.std()
    return (x - x.mean()) / (std if std > 0 else 1.0)


def make_batch(scenarios: Sequence[Scenario], batch_size: int, seed: int,
               cfg: GeneratorConfig = GeneratorConfig()) -> np.ndarray:
    """(batch, 1, H, W) float32 of standardized log(1 + magnitude) maps."""
    samples = make_samples(scenarios, batch_size, seed, cfg)
    return np.stack([standardize(s.map)[None] for s in samples]).astype(np.float32)


def train_val_split(n: int, seed: int, train_fraction: float = 0.8):
    perm = np.random.default_rng(seed).permutation(n)
    cut = int(round(train_fraction * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


# ---------------------------------------------------------------------------
# detection metrics


def _binary_pair(pred, label):
    pred = np.asarray(pred)
    label = np.asarray(label)
    if pred.shape != label.shape:
        raise ValueError(f"prediction {pred.shape} and label {label.shape} differ")
    return pred.astype(np.int64), label.astype(np.int64)


def pd_proxy(pred, label) -> float | None:
    """Detected fraction of target pixels; None when the label has no targets."""
    p, y = _binary_pair(pred, label)
    denom = y.sum()
    if denom == 0:
        return None
    return float((p * y).sum() / denom)


def pfa_proxy(pred, label) -> float | None:
    """False-alarm fraction of background pixels; None when there is no background."""
    p, y = _binary_pair(pred, label)
    denom = (1 - y).sum()
    if denom == 0:
        return None
    return float((p * (1 - y)).sum() / denom)


@dataclass(frozen=True)
class DetectionMetrics:
    pd_proxy: float | None
    pfa_proxy: float | None
    threshold: float


def detection_metrics(probs, label, threshold: float = 0.5) -> DetectionMetrics:
    pred = (np.asarray(probs) > threshold).astype(np.uint8)
    return DetectionMetrics(pd_proxy(pred, label), pfa_proxy(pred, label), threshold)


def mean_metrics(items: Sequence[DetectionMetrics]) -> dict:
    """Averages over defined values only; undefined entries are counted, not zeroed."""
    out = {}
    for name in ("pd_proxy", "pfa_proxy"):
        vals = [getattr(m, name) for m in items if getattr(m, name) is not None]
        out[name] = float(np.mean(vals)) if vals else None
        out[f"{name}_undefined"] = len(items) - len(vals)
    return out


# ---------------------------------------------------------------------------
# export
#
# batch file: b"RDMB", uint32 version, uint32 count, uint32 height, uint32 width,
# then count*H*W float32 magnitudes and count*H*W uint8 masks, little-endian,
# row-major.

_BATCH_MAGIC = b"RDMB"
_BATCH_HEADER = struct.Struct("<4sIIII")


def write_batch(path, samples: Sequence[RangeDopplerSample]) -> None:
    maps = np.stack([s.map for s in samples]).astype("<f4")
    masks = np.stack([s.mask for s in samples]).astype(np.uint8)
    n, h, w = maps.shape
    with open(path, "wb") as f:
        f.write(_BATCH_HEADER.pack(_BATCH_MAGIC, 1, n, h, w))
        f.write(maps.tobytes())
        f.write(masks.tobytes())


def read_batch(path):
    data = Path(path).read_bytes()
    magic, version, n, h, w = _BATCH_HEADER.unpack_from(data)
    if magic != _BATCH_MAGIC or version != 1:
        raise ValueError(f"{path}: not a range-Doppler batch file")
    off = _BATCH_HEADER.size
    maps = np.frombuffer(data, "<f4", n * h * w, off).reshape(n, h, w)
    masks = np.frombuffer(data, np.uint8, n * h * w, off + 4 * n * h * w).reshape(n, h, w)
    return maps.copy(), masks.copy()


def manifest(samples: Sequence[RangeDopplerSample]) -> list[dict]:
    return [
        {"index": i, "scenario": asdict(s.scenario), "scenario_number": SCENARIOS.index(s.scenario) + 1,
         "seed": s.seed, "n_targets": s.n_targets}
        for i, s in enumerate(samples)
    ]


def write_manifest(path, samples, extra: dict | None = None) -> None:
    doc = {"samples": manifest(samples)}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def rayleigh_mean(noise_power: float = 1.0) -> float:
    """Mean magnitude of circular complex Gaussian noise of the given power."""
    return math.sqrt(math.pi * noise_power) / 2
