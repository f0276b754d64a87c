"""Signal preprocessing: filtering, normalization, quality gating,
degradation construction, segmentation and splitting.

Most operations accept either a :class:`SignalSegment` or a bare NumPy
array; metadata (fs, modality, unit space) is carried through when a
segment is given. All randomness flows through explicit generators.

The sample-entropy match counter dispatches to a compiled kernel when
the extension built, otherwise to a vectorized NumPy fallback; the
active one is named in ``ENTROPY_BACKEND``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import signal as sps
from scipy import stats as spstats

from .errors import (
    DegenerateStatsError,
    NonFiniteSignalError,
    ParameterError,
)
from .tasks import SIGNAL_MODALITIES, Modality

try:
    from ._sampen import match_counts as _match_counts

    ENTROPY_BACKEND = "compiled"
except ImportError:  # extension not built
    from ._sampen_np import match_counts as _match_counts

    ENTROPY_BACKEND = "numpy"


#: Gating thresholds: segments with sample entropy above these are dropped.
DEFAULT_ENTROPY_THRESHOLDS = {
    Modality.PPG: 0.2,
    Modality.ECG: 0.3,
    Modality.BP: 0.2,
}

#: Normalization scheme per modality.
DEFAULT_NORM_MODE = {
    Modality.PPG: "minmax",
    Modality.ECG: "minmax",
    Modality.BP: "zscore",
}

UNIT_SPACES = ("raw", "zscored", "minmax", "mmHg")


@dataclass(frozen=True)
class SignalSegment:
    """A fixed-length single-modality window of samples."""

    samples: np.ndarray
    fs: float
    modality: Modality
    unit_space: str = "raw"

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1:
            raise ParameterError(f"samples must be 1-D, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise NonFiniteSignalError(
                f"{self.modality.name} segment has non-finite samples"
            )
        if self.fs <= 0:
            raise ParameterError(f"fs must be positive, got {self.fs}")
        if self.unit_space not in UNIT_SPACES:
            raise ParameterError(f"unknown unit space {self.unit_space!r}")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class ObservationMask:
    """Boolean observation indicator; all-True denotes an intact signal."""

    observed: np.ndarray

    def __post_init__(self):
        observed = np.asarray(self.observed, dtype=bool)
        object.__setattr__(self, "observed", observed)
        if observed.ndim != 1:
            raise ParameterError("mask must be 1-D")

    @property
    def n_missing(self) -> int:
        return int(np.count_nonzero(~self.observed))

    def __len__(self) -> int:
        return len(self.observed)


@dataclass(frozen=True)
class NormStats:
    """Frozen per-modality normalization statistics from the training split."""

    modality: Modality
    mean: float
    std: float
    min: float
    max: float
    source_space: str = "raw"

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.std)
                and np.isfinite(self.min) and np.isfinite(self.max)):
            raise DegenerateStatsError("non-finite normalization statistics")
        if self.std <= 0.0:
            raise DegenerateStatsError(f"std must be > 0, got {self.std}")
        if self.max <= self.min:
            raise DegenerateStatsError(
                f"max must exceed min, got [{self.min}, {self.max}]"
            )

    @classmethod
    def fit(cls, modality: Modality, arrays, source_space: str = "raw") -> "NormStats":
        flat = np.concatenate([np.ravel(np.asarray(a, dtype=np.float64)) for a in arrays])
        if flat.size == 0:
            raise DegenerateStatsError("cannot fit statistics on empty data")
        return cls(
            modality=modality,
            mean=float(flat.mean()),
            std=float(flat.std()),
            min=float(flat.min()),
            max=float(flat.max()),
            source_space=source_space,
        )


def _samples_of(seg):
    """Accept a SignalSegment or an array; return (float64 array, segment|None)."""
    if isinstance(seg, SignalSegment):
        return seg.samples, seg
    return np.asarray(seg, dtype=np.float64), None


def _rewrap(values: np.ndarray, seg, unit_space: str | None = None):
    if seg is None:
        return values
    if unit_space is None:
        unit_space = seg.unit_space
    return replace(seg, samples=values, unit_space=unit_space)


def highpass(seg, cutoff_hz: float = 0.5, order: int = 5):
    """Zero-phase Butterworth high-pass (forward-backward)."""
    x, meta = _samples_of(seg)
    fs = meta.fs if meta is not None else _require_fs(seg)
    if not np.all(np.isfinite(x)):
        raise NonFiniteSignalError("high-pass input has non-finite samples")
    if fs <= 2.0 * cutoff_hz:
        raise ParameterError(f"fs={fs} must exceed twice the cutoff {cutoff_hz}")
    if order < 1:
        raise ParameterError(f"order must be >= 1, got {order}")
    sos = sps.butter(order, cutoff_hz, btype="highpass", fs=fs, output="sos")
    y = sps.sosfiltfilt(sos, x)
    return _rewrap(y, meta)


def _require_fs(seg):
    raise ParameterError(
        "bare arrays need an fs; pass a SignalSegment to filtering operations"
    )


def notch_powerline(seg, freq_hz: float = 50.0, q: float = 30.0):
    """Zero-phase IIR notch at the powerline frequency."""
    x, meta = _samples_of(seg)
    fs = meta.fs if meta is not None else _require_fs(seg)
    if not np.all(np.isfinite(x)):
        raise NonFiniteSignalError("notch input has non-finite samples")
    if freq_hz >= fs / 2.0:
        raise ParameterError(f"notch frequency {freq_hz} >= Nyquist {fs / 2.0}")
    if freq_hz <= 0.0 or q <= 0.0:
        raise ParameterError("notch frequency and Q must be positive")
    b, a = sps.iirnotch(freq_hz, q, fs=fs)
    y = sps.filtfilt(b, a, x)
    return _rewrap(y, meta)


def normalize(seg, stats: NormStats, mode: str | None = None):
    """Map into zscore or minmax space; ``mode`` defaults per modality."""
    x, meta = _samples_of(seg)
    if mode is None:
        mode = DEFAULT_NORM_MODE[stats.modality]
    if mode == "zscore":
        y = (x - stats.mean) / stats.std
        return _rewrap(y, meta, "zscored")
    if mode == "minmax":
        y = (x - stats.min) / (stats.max - stats.min)
        return _rewrap(y, meta, "minmax")
    raise ParameterError(f"unknown normalization mode {mode!r}")


def denormalize(seg, stats: NormStats, mode: str | None = None):
    """Inverse of :func:`normalize`; restores the stats' source space."""
    x, meta = _samples_of(seg)
    if mode is None:
        mode = DEFAULT_NORM_MODE[stats.modality]
    if mode == "zscore":
        y = x * stats.std + stats.mean
    elif mode == "minmax":
        y = x * (stats.max - stats.min) + stats.min
    else:
        raise ParameterError(f"unknown normalization mode {mode!r}")
    return _rewrap(y, meta, stats.source_space)


def sample_entropy(series, m: int = 2, r: float | None = None) -> float:
    """Sample entropy -ln(A/B); +inf when either count is zero.

    ``r`` defaults to 0.2 times the series' standard deviation. A is
    the number of (m+1)-length template matches, B the number of
    m-length matches, Chebyshev distance, self-matches excluded.
    """
    x = np.ascontiguousarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise ParameterError("series must be 1-D")
    if x.size <= m + 1:
        raise ParameterError(f"series length {x.size} must exceed m+1 = {m + 1}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteSignalError("sample entropy input has non-finite samples")
    if r is None:
        r = 0.2 * float(x.std())
        if r == 0.0:
            raise ParameterError(
                "constant series: the derived tolerance 0.2 * std is zero"
            )
    elif r <= 0.0:
        raise ParameterError(f"r must be positive, got {r}")
    a, b = _match_counts(x, int(m), float(r))
    if a == 0 or b == 0:
        return float("inf")
    return float(-np.log(a / b))


@dataclass(frozen=True)
class GateRow:
    """One removal-report entry."""

    segment_id: int
    modality: Modality
    entropy: float
    kept: bool


@dataclass(frozen=True)
class GateResult:
    keep_mask: np.ndarray  # (n,) bool; True where the aligned triple survives
    kept: dict[Modality, np.ndarray]
    report: list[GateRow]
    removal_rate: float


def quality_gate(
    segments: dict[Modality, np.ndarray],
    thresholds: dict[Modality, float] | None = None,
    m: int = 2,
) -> GateResult:
    """Drop aligned segment tuples whose entropy exceeds any modality
    threshold. Segments with degenerate entropy (+inf) are dropped too.
    """
    thresholds = thresholds or DEFAULT_ENTROPY_THRESHOLDS
    for mod, thr in thresholds.items():
        if thr <= 0.0:
            raise ParameterError(f"threshold for {mod.name} must be positive")
    mods = list(segments)
    n = len(next(iter(segments.values())))
    keep = np.ones(n, dtype=bool)
    report: list[GateRow] = []
    for mod in mods:
        arr = np.asarray(segments[mod], dtype=np.float64)
        if len(arr) != n:
            raise ParameterError("modalities hold different segment counts")
        thr = thresholds.get(mod)
        for i in range(n):
            ent = sample_entropy(arr[i], m=m)
            ok = thr is None or ent <= thr
            report.append(GateRow(i, mod, ent, ok))
            keep[i] &= ok
    kept = {mod: np.asarray(segments[mod])[keep] for mod in mods}
    removal_rate = 1.0 - float(keep.mean()) if n else 0.0
    if n and not keep.any():
        warnings.warn("quality gate removed every segment", stacklevel=2)
    return GateResult(keep_mask=keep, kept=kept, report=report,
                      removal_rate=removal_rate)


def rectify_ecg_inversion(seg):
    """Flip a segment whose sample skewness is negative (upright R
    peaks dominate the positive tail). Idempotent."""
    x, meta = _samples_of(seg)
    if float(spstats.skew(x)) < 0.0:
        x = -x
    return _rewrap(np.array(x, copy=True), meta)


def sqi_template_correlation(seg, fs: float | None = None) -> float:
    """Beat-template quality index: mean Pearson correlation of each
    detected beat window against the mean beat. Returns 0.0 when fewer
    than two clean beats are found."""
    x, meta = _samples_of(seg)
    if meta is not None:
        fs = meta.fs
    if fs is None or fs <= 0:
        raise ParameterError("sqi needs a sampling rate")
    spread = float(x.max() - x.min())
    if spread == 0.0:
        return 0.0
    peaks, _ = sps.find_peaks(x, distance=max(1, int(0.4 * fs)),
                              prominence=0.4 * spread)
    half = max(2, int(0.25 * fs))
    windows = [x[p - half:p + half + 1] for p in peaks
               if p - half >= 0 and p + half + 1 <= x.size]
    if len(windows) < 2:
        return 0.0
    w = np.stack(windows)
    template = w.mean(axis=0)
    if template.std() == 0.0:
        return 0.0
    corrs = []
    for row in w:
        if row.std() == 0.0:
            corrs.append(0.0)
        else:
            corrs.append(float(np.corrcoef(row, template)[0, 1]))
    return float(np.mean(corrs))


@dataclass(frozen=True)
class SplitResult:
    """Aligned multi-modal segments per split, with origin offsets."""

    splits: dict[str, dict[Modality, np.ndarray]]  # split -> modality -> (n_i, L)
    offsets: dict[str, np.ndarray]  # start sample index of each segment
    fs: float
    L: int


def segment_and_split(
    streams: dict[Modality, np.ndarray],
    fs: float,
    seconds: float = 4.0,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitResult:
    """Cut aligned streams into non-overlapping windows and split them
    train/val/test by a seeded permutation."""
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise ParameterError(f"ratios must be nonnegative and sum to 1, got {ratios}")
    if seconds <= 0:
        raise ParameterError(f"seconds must be positive, got {seconds}")
    lengths = {len(np.asarray(v)) for v in streams.values()}
    if len(lengths) != 1:
        raise ParameterError("modality streams differ in length")
    total = lengths.pop()
    L = int(round(seconds * fs))
    n = total // L
    names = ("train", "val", "test")
    if n == 0:
        warnings.warn(
            f"stream of {total} samples is shorter than one {L}-sample segment",
            stacklevel=2,
        )
        empty = {s: {m: np.empty((0, L)) for m in streams} for s in names}
        return SplitResult(splits=empty,
                           offsets={s: np.empty(0, dtype=int) for s in names},
                           fs=fs, L=L)
    starts = np.arange(n) * L
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(ratios[0] * n)
    n_val = int(ratios[1] * n)
    pick = {
        "train": perm[:n_train],
        "val": perm[n_train:n_train + n_val],
        "test": perm[n_train + n_val:],
    }
    splits = {}
    offsets = {}
    for name, idx in pick.items():
        idx = np.sort(idx)
        splits[name] = {
            mod: np.stack([np.asarray(v, dtype=np.float64)[s:s + L] for s in starts[idx]])
            if len(idx) else np.empty((0, L))
            for mod, v in streams.items()
        }
        offsets[name] = starts[idx]
    return SplitResult(splits=splits, offsets=offsets, fs=fs, L=L)


def noise_at_snr(x: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian noise scaled so the realized SNR is exact."""
    x = np.asarray(x, dtype=np.float64)
    power = float(np.mean(x * x))
    if power == 0.0:
        raise ParameterError("cannot set an SNR against a zero-power signal")
    noise = rng.standard_normal(x.shape)
    target = power / 10.0 ** (snr_db / 10.0)
    noise *= np.sqrt(target / np.mean(noise * noise))
    return x + noise


def add_noise_at_snr(seg, snr_db: float, rng: np.random.Generator):
    x, meta = _samples_of(seg)
    return _rewrap(noise_at_snr(x, snr_db, rng), meta)


def gen_gap_mask(L: int, gap_fraction, rng: np.random.Generator) -> ObservationMask:
    """One contiguous missing run whose length is the sampled fraction
    of ``L``. ``gap_fraction`` is a scalar or a (lo, hi) range."""
    if np.isscalar(gap_fraction):
        lo = hi = float(gap_fraction)
    else:
        lo, hi = (float(v) for v in gap_fraction)
    if not (0.0 < lo <= hi < 1.0):
        raise ParameterError(f"gap fraction must lie strictly in (0, 1), got {gap_fraction}")
    if L < 2:
        raise ParameterError(f"L must be >= 2 to hold a gap, got {L}")
    frac = rng.uniform(lo, hi) if hi > lo else lo
    n_missing = int(round(L * frac))
    n_missing = min(max(n_missing, 1), L - 1)
    start = int(rng.integers(0, L - n_missing + 1))
    observed = np.ones(L, dtype=bool)
    observed[start:start + n_missing] = False
    return ObservationMask(observed=observed)


def apply_mask(seg, mask: ObservationMask):
    """Zero-fill missing samples (intended for normalized space)."""
    x, meta = _samples_of(seg)
    if len(mask) != x.size:
        raise ParameterError(f"mask length {len(mask)} != segment length {x.size}")
    return _rewrap(np.where(mask.observed, x, 0.0), meta)


@dataclass(frozen=True)
class PreprocessConfig:
    segment_seconds: float = 4.0
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    highpass_cutoff_hz: float = 0.5
    highpass_order: int = 5
    notch_hz: float = 50.0
    notch_q: float = 30.0
    entropy_thresholds: dict[Modality, float] | None = None
    sqi_threshold: float | None = 0.8  # ECG template-correlation gate; None disables
    seed: int = 0

    def __post_init__(self):
        if self.segment_seconds <= 0:
            raise ParameterError(
                f"segment_seconds must be positive, got {self.segment_seconds}"
            )
        if abs(sum(self.ratios) - 1.0) > 1e-9 or any(r < 0 for r in self.ratios):
            raise ParameterError(
                f"ratios must be nonnegative and sum to 1, got {self.ratios}"
            )
        if self.highpass_cutoff_hz <= 0 or self.highpass_order < 1:
            raise ParameterError("high-pass cutoff and order must be positive")
        if self.notch_hz <= 0 or self.notch_q <= 0:
            raise ParameterError("notch frequency and Q must be positive")
        if self.sqi_threshold is not None and not (0.0 <= self.sqi_threshold <= 1.0):
            raise ParameterError(
                f"sqi_threshold must lie in [0, 1], got {self.sqi_threshold}"
            )


@dataclass(frozen=True)
class PreprocessResult:
    splits: dict[str, dict[Modality, np.ndarray]]  # normalized segments
    stats: dict[Modality, NormStats]
    report: list[GateRow]
    offsets: dict[str, np.ndarray]
    fs: float
    L: int


def preprocess_corpus(
    streams: dict[Modality, np.ndarray],
    fs: float,
    config: PreprocessConfig | None = None,
) -> PreprocessResult:
    """Full pipeline: filter PPG/ECG, rectify ECG polarity, segment and
    split, entropy-gate each split, fit normalization statistics on the
    surviving training segments, normalize everything."""
    cfg = config or PreprocessConfig()
    filtered: dict[Modality, np.ndarray] = {}
    for mod, stream in streams.items():
        x = np.asarray(stream, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise NonFiniteSignalError(f"{mod.name} stream has non-finite samples")
        if mod in (Modality.PPG, Modality.ECG):
            seg = SignalSegment(x, fs=fs, modality=mod)
            seg = highpass(seg, cfg.highpass_cutoff_hz, cfg.highpass_order)
            if fs > 2.0 * cfg.notch_hz:
                seg = notch_powerline(seg, cfg.notch_hz, cfg.notch_q)
            x = seg.samples
        filtered[mod] = x

    split = segment_and_split(filtered, fs, cfg.segment_seconds, cfg.ratios, cfg.seed)
    thresholds = cfg.entropy_thresholds or DEFAULT_ENTROPY_THRESHOLDS

    gated: dict[str, dict[Modality, np.ndarray]] = {}
    offsets: dict[str, np.ndarray] = {}
    report: list[GateRow] = []
    for name, segs in split.splits.items():
        if Modality.ECG in segs and len(segs[Modality.ECG]):
            segs = dict(segs)
            segs[Modality.ECG] = np.stack(
                [rectify_ecg_inversion(row) for row in segs[Modality.ECG]]
            )
        if len(next(iter(segs.values()))) == 0:
            gated[name] = segs
            offsets[name] = split.offsets[name]
            continue
        gate = quality_gate(segs, thresholds)
        keep = gate.keep_mask
        if cfg.sqi_threshold is not None and Modality.ECG in segs:
            sqi_ok = np.array([
                sqi_template_correlation(row, fs) >= cfg.sqi_threshold
                for row in segs[Modality.ECG]
            ])
            keep = keep & sqi_ok
        gated[name] = {mod: arr[keep] for mod, arr in segs.items()}
        offsets[name] = split.offsets[name][keep]
        report.extend(gate.report)

    stats = {
        mod: NormStats.fit(
            mod,
            gated["train"][mod],
            source_space="mmHg" if mod is Modality.BP else "raw",
        )
        for mod in streams
    }
    normalized = {
        name: {mod: normalize(arr, stats[mod]) for mod, arr in segs.items()}
        for name, segs in gated.items()
    }
    return PreprocessResult(splits=normalized, stats=stats, report=report,
                            offsets=offsets, fs=fs, L=split.L)
