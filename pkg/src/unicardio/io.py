"""File formats and configuration.

Corpus container (``UCS1``): magic, four little-endian u32 header
fields (n_modalities, n_segments, L, fs*1000), then one float32 row per
(segment, modality) pair in canonical modality order (PPG, ECG, BP).
The CSV alternative carries explicit modality names and is also used
for single-modality artifacts such as predictions.

Config files are JSON with fixed sections; unknown sections or keys are
hard errors so typos never silently fall back to defaults.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .diffusion import SamplerConfig
from .errors import ConfigError, FormatError, ParameterError
from .model import ModelConfig
from .signals import NormStats, PreprocessConfig
from .tasks import SIGNAL_MODALITIES, Modality
from .training import CurriculumConfig

CORPUS_MAGIC = b"UCS1"

#: storage order inside UCS1 files; the first n_modalities are present
CANONICAL_ORDER = tuple(SIGNAL_MODALITIES)


def write_corpus(path, signals: dict[Modality, np.ndarray], fs: float) -> None:
    """Write aligned per-modality segment arrays as a UCS1 file."""
    mods = [m for m in CANONICAL_ORDER if m in signals]
    if len(mods) != len(signals):
        extra = set(signals) - set(mods)
        raise ParameterError(f"unsupported modalities for UCS1: {extra}")
    if not mods:
        raise ParameterError("no modalities to write")
    if mods != list(CANONICAL_ORDER[: len(mods)]):
        raise ParameterError(
            f"UCS1 stores a prefix of {[m.name for m in CANONICAL_ORDER]}, got "
            f"{[m.name for m in mods]}"
        )
    arrays = [np.asarray(signals[m], dtype=np.float32) for m in mods]
    n_segments, L = arrays[0].shape
    for m, a in zip(mods, arrays):
        if a.shape != (n_segments, L):
            raise ParameterError(f"{m.name} array shape {a.shape} misaligned")
    with open(path, "wb") as fh:
        fh.write(CORPUS_MAGIC)
        fh.write(struct.pack("<4I", len(mods), n_segments, L, int(round(fs * 1000))))
        for seg in range(n_segments):
            for a in arrays:
                fh.write(a[seg].astype("<f4").tobytes(order="C"))


def read_corpus(path) -> tuple[dict[Modality, np.ndarray], float]:
    """Read a UCS1 file; returns (signals, fs)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CORPUS_MAGIC:
            raise FormatError(f"bad corpus magic {magic!r}")
        header = fh.read(16)
        if len(header) != 16:
            raise FormatError("truncated corpus header")
        n_mod, n_segments, L, fs_times_1000 = struct.unpack("<4I", header)
        if n_mod == 0 or n_mod > len(CANONICAL_ORDER):
            raise FormatError(f"unsupported modality count {n_mod}")
        mods = CANONICAL_ORDER[:n_mod]
        count = n_mod * n_segments * L
        raw = fh.read(count * 4)
        if len(raw) != count * 4:
            raise FormatError("truncated corpus payload")
        if fh.read(1):
            raise FormatError("trailing bytes after corpus payload")
    data = np.frombuffer(raw, dtype="<f4").reshape(n_segments, n_mod, L)
    signals = {m: np.ascontiguousarray(data[:, i, :]) for i, m in enumerate(mods)}
    return signals, fs_times_1000 / 1000.0


def write_corpus_csv(path, signals: dict[Modality, np.ndarray]) -> None:
    """CSV alternative: segment,modality,index,value."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["segment", "modality", "index", "value"])
        for m, arr in signals.items():
            arr = np.asarray(arr)
            if arr.ndim == 1:
                arr = arr[None, :]
            for seg in range(arr.shape[0]):
                for i in range(arr.shape[1]):
                    writer.writerow([seg, m.name, i, repr(float(arr[seg, i]))])


def read_corpus_csv(path) -> dict[Modality, np.ndarray]:
    rows: dict[Modality, dict[int, dict[int, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["segment", "modality", "index", "value"]:
            raise FormatError(f"unexpected corpus CSV header {header}")
        for line in reader:
            if not line:
                continue
            seg, mod_name, idx, value = line
            try:
                mod = Modality[mod_name]
            except KeyError:
                raise FormatError(f"unknown modality {mod_name!r}") from None
            rows.setdefault(mod, {}).setdefault(int(seg), {})[int(idx)] = float(value)
    out: dict[Modality, np.ndarray] = {}
    for mod, segs in rows.items():
        n = max(segs) + 1
        lengths = {max(vals) + 1 for vals in segs.values()}
        if len(lengths) != 1 or set(segs) != set(range(n)):
            raise FormatError(f"ragged or sparse CSV corpus for {mod.name}")
        L = lengths.pop()
        arr = np.empty((n, L))
        for seg, vals in segs.items():
            if set(vals) != set(range(L)):
                raise FormatError(f"missing indices in segment {seg} of {mod.name}")
            for i, v in vals.items():
                arr[seg, i] = v
        out[mod] = arr
    return out


def read_raw_streams_csv(path) -> tuple[dict[Modality, np.ndarray], float]:
    """Raw input CSV with header ``t,<modality>...``; returns streams
    and the sampling rate inferred from the time column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "t":
            raise FormatError("raw CSV must start with a 't' column")
        mods = []
        for name in header[1:]:
            try:
                mods.append(Modality[name])
            except KeyError:
                raise FormatError(f"unknown modality column {name!r}") from None
        data = [[float(v) for v in line] for line in reader if line]
    if len(data) < 2:
        raise FormatError("raw CSV needs at least two rows")
    arr = np.asarray(data, dtype=np.float64)
    tt = arr[:, 0]
    dt = np.diff(tt)
    if np.any(dt <= 0) or not np.allclose(dt, dt[0], rtol=1e-3):
        raise FormatError("time column must be uniformly increasing")
    fs = 1.0 / float(np.mean(dt))
    return {m: arr[:, i + 1] for i, m in enumerate(mods)}, fs


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class DataConfig:
    seed: int = 0
    n_segments: int = 512
    fs: float = 32.0
    segment_seconds: float = 4.0
    hr_range_bpm: tuple[float, float] = (55.0, 75.0)
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    entropy_thresholds: dict[str, float] = field(
        default_factory=lambda: {"PPG": 0.2, "ECG": 0.3, "BP": 0.2}
    )
    sqi_threshold: float | None = 0.8

    def __post_init__(self) -> None:
        if self.n_segments < 1:
            raise ParameterError("n_segments must be at least 1")
        if self.fs <= 0 or self.segment_seconds <= 0:
            raise ParameterError("fs and segment_seconds must be positive")
        lo, hi = self.hr_range_bpm
        if not 40.0 <= lo <= hi <= 180.0:
            raise ParameterError("hr_range_bpm must satisfy 40 <= lo <= hi <= 180")
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise ParameterError("ratios must be three non-negative fractions")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ParameterError("ratios must sum to 1")
        for key in self.entropy_thresholds:
            if key not in Modality.__members__:
                raise ParameterError(f"unknown modality in entropy_thresholds: {key!r}")
        if self.sqi_threshold is not None and not 0.0 <= self.sqi_threshold <= 1.0:
            raise ParameterError("sqi_threshold must lie in [0, 1]")

    def thresholds_by_modality(self) -> dict[Modality, float]:
        return {Modality[k]: v for k, v in self.entropy_thresholds.items()}


@dataclass(frozen=True)
class ScheduleConfig:
    n_steps: int = 50
    kind: str = "quadratic"
    beta_start: float = 1e-4
    beta_end: float = 0.5

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ParameterError("n_steps must be at least 1")
        if self.kind not in ("quadratic", "linear"):
            raise ParameterError(f"unknown schedule kind {self.kind!r}")
        if not 0.0 < self.beta_start < self.beta_end < 1.0:
            raise ParameterError("need 0 < beta_start < beta_end < 1")


@dataclass(frozen=True)
class AppConfig:
    model: ModelConfig
    schedule: ScheduleConfig
    curriculum: CurriculumConfig
    sampler: SamplerConfig
    data: DataConfig

    def preprocess_config(self) -> PreprocessConfig:
        return PreprocessConfig(
            segment_seconds=self.data.segment_seconds,
            ratios=self.data.ratios,
            entropy_thresholds=self.data.thresholds_by_modality(),
            sqi_threshold=self.data.sqi_threshold,
            seed=self.data.seed,
        )


_SECTION_FIELDS = {
    "model": {"L", "C", "n_modules", "n_heads", "kernel_sizes", "neg_mask_value"},
    "schedule": {"n_steps", "kind", "beta_start", "beta_end"},
    "curriculum": {
        "epochs", "k_phases", "lr_values", "lr_drop_fraction", "batch_size",
        "noise_snr_db", "gap_fraction", "task_type_threshold",
        "phase3_low_count_mass", "phase3_threecond_imputation_only", "momentum",
        "grad_clip_norm",
    },
    "sampler": {"kind", "n_steps", "eta", "seed", "posterior_variance"},
    "data": {
        "seed", "n_segments", "fs", "segment_seconds", "hr_range_bpm",
        "ratios", "entropy_thresholds", "sqi_threshold",
    },
    "ablations": {"disable_lrs", "disable_tbc", "disable_tam"},
}

_TUPLE_KEYS = {
    "kernel_sizes", "lr_values", "gap_fraction", "task_type_threshold",
    "hr_range_bpm", "ratios",
}


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be an object")
    unknown = set(sec) - _SECTION_FIELDS[name]
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    return {
        k: tuple(v) if k in _TUPLE_KEYS and isinstance(v, list) else v
        for k, v in sec.items()
    }


def parse_config(raw: dict) -> AppConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    unknown = set(raw) - set(_SECTION_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    schedule = ScheduleConfig(**_section(raw, "schedule"))
    model_kwargs = _section(raw, "model")
    model_kwargs["n_diffusion_steps"] = schedule.n_steps
    curriculum_kwargs = _section(raw, "curriculum")
    curriculum_kwargs.update(_section(raw, "ablations"))
    try:
        return AppConfig(
            model=ModelConfig(**model_kwargs),
            schedule=schedule,
            curriculum=CurriculumConfig(**curriculum_kwargs),
            sampler=SamplerConfig(**_section(raw, "sampler")),
            data=DataConfig(**_section(raw, "data")),
        )
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | None) -> tuple[AppConfig, dict]:
    """Parse the JSON config file; returns (config, raw dict). A missing
    path yields all defaults."""
    if path is None:
        raw: dict = {}
    else:
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(raw), raw


def config_hash(raw: dict) -> str:
    """Stable hash of the raw config dict (canonical JSON form)."""
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def resolve_seed(flag_seed: int | None, config_seed: int) -> int:
    """Precedence: CLI flag, then UNICARDIO_SEED, then the config."""
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get("UNICARDIO_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"UNICARDIO_SEED must be an integer, got {env!r}") from None
    return config_seed


def write_manifest(path, command: str, seed: int, raw_config: dict,
                   outputs: dict | None = None, **extras) -> dict:
    """JSON run manifest: command, seed, config hash, library versions."""
    import scipy
    import torch

    from . import __version__

    manifest = {
        "command": command,
        "seed": seed,
        "config_hash": config_hash(raw_config),
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "versions": {
            "unicardio": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "torch": torch.__version__,
        },
        "outputs": outputs or {},
    }
    manifest.update(extras)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def save_norm_stats(path, stats: dict[Modality, NormStats]) -> None:
    payload = {
        m.name: {
            "mean": s.mean, "std": s.std, "min": s.min, "max": s.max,
            "source_space": s.source_space,
        }
        for m, s in stats.items()
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_norm_stats(path) -> dict[Modality, NormStats]:
    with open(path) as fh:
        payload = json.load(fh)
    out = {}
    for name, vals in payload.items():
        try:
            mod = Modality[name]
        except KeyError:
            raise FormatError(f"unknown modality {name!r} in stats file") from None
        out[mod] = NormStats(modality=mod, **vals)
    return out


def write_removal_report(path, rows) -> None:
    """CSV: segment_id,modality,entropy,kept."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["segment_id", "modality", "entropy", "kept"])
        for r in rows:
            writer.writerow([r.segment_id, r.modality.name, repr(r.entropy),
                             int(r.kept)])


def write_mask_csv(path, observed: np.ndarray) -> None:
    """Observation masks, one row per sample: segment,index,observed."""
    observed = np.asarray(observed, dtype=bool)
    if observed.ndim == 1:
        observed = observed[None, :]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["segment", "index", "observed"])
        for seg in range(observed.shape[0]):
            for i in range(observed.shape[1]):
                writer.writerow([seg, i, int(observed[seg, i])])


def read_mask_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["segment", "index", "observed"]:
            raise FormatError(f"unexpected mask CSV header {header}")
        vals = [(int(s), int(i), bool(int(v))) for s, i, v in reader]
    if not vals:
        raise FormatError("empty mask CSV")
    n = max(v[0] for v in vals) + 1
    L = max(v[1] for v in vals) + 1
    out = np.zeros((n, L), dtype=bool)
    seen = np.zeros((n, L), dtype=bool)
    for s, i, v in vals:
        out[s, i] = v
        seen[s, i] = True
    if not seen.all():
        raise FormatError("sparse mask CSV")
    return out


def write_trajectory_csv(path, trajectory) -> None:
    """Step-wise sampler states: t,segment,index,value."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "segment", "index", "value"])
        for t, arr in trajectory:
            arr = np.asarray(arr)
            if arr.ndim == 1:
                arr = arr[None, :]
            for seg in range(arr.shape[0]):
                for i in range(arr.shape[1]):
                    writer.writerow([t, seg, i, repr(float(arr[seg, i]))])


def read_trajectory_csv(path) -> list[tuple[int, np.ndarray]]:
    entries: dict[int, dict[tuple[int, int], float]] = {}
    order: list[int] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t", "segment", "index", "value"]:
            raise FormatError(f"unexpected trajectory CSV header {header}")
        for t_str, seg, i, v in reader:
            t = int(t_str)
            if t not in entries:
                entries[t] = {}
                order.append(t)
            entries[t][(int(seg), int(i))] = float(v)
    out = []
    for t in order:
        cells = entries[t]
        n = max(k[0] for k in cells) + 1
        L = max(k[1] for k in cells) + 1
        arr = np.empty((n, L))
        for (seg, i), v in cells.items():
            arr[seg, i] = v
        out.append((t, arr))
    return out
