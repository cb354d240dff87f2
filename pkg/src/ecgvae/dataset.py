"""ECG corpus handling: record types, file ingestion, synthetic generation.

On-disk layout understood by :func:`load_corpus`:

* metadata CSV with header ``record_id,strat_fold,CD,HYP,MI,NORM,STTC,signal_file``
* one raw signal file per record: exactly 1000 x 12 little-endian float32
  values, time-major (48,000 bytes total)
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadFold,
    BadSignalShape,
    InvalidProbability,
    MissingFile,
    SchemaMismatch,
)

SIGNAL_LENGTH = 1000
NUM_LEADS = 12
NUM_CLASSES = 5

LEAD_NAMES = (
    "I", "II", "III", "aVR", "aVL", "aVF",
    "V1", "V2", "V3", "V4", "V5", "V6",
)

METADATA_COLUMNS = (
    "record_id", "strat_fold", "CD", "HYP", "MI", "NORM", "STTC", "signal_file",
)


class DiagClass(enum.IntEnum):
    """The five diagnostic superclasses in canonical (alphabetical) order."""

    CD = 0
    HYP = 1
    MI = 2
    NORM = 3
    STTC = 4


CLASS_NAMES = tuple(c.name for c in DiagClass)


@dataclass(frozen=True)
class ECGRecord:
    record_id: str
    signal: np.ndarray       # (1000, 12) float64, millivolt scale
    labels: np.ndarray       # (5,) uint8 multi-hot in DiagClass order
    strat_fold: int

    def __post_init__(self):
        if self.signal.shape != (SIGNAL_LENGTH, NUM_LEADS):
            raise BadSignalShape(
                f"record {self.record_id!r}: signal shape {self.signal.shape}, "
                f"expected ({SIGNAL_LENGTH}, {NUM_LEADS})"
            )
        if self.labels.shape != (NUM_CLASSES,):
            raise SchemaMismatch(
                f"record {self.record_id!r}: labels shape {self.labels.shape}"
            )
        if not 1 <= self.strat_fold <= 10:
            raise BadFold(
                f"record {self.record_id!r}: strat_fold {self.strat_fold} outside 1..10"
            )


@dataclass(frozen=True)
class Corpus:
    """Immutable ordered collection of ECG records."""

    records: tuple[ECGRecord, ...]
    lead_names: tuple[str, ...] = LEAD_NAMES

    def __post_init__(self):
        ids = [r.record_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise SchemaMismatch("duplicate record_id in corpus")

    def __len__(self) -> int:
        return len(self.records)

    def signals(self) -> np.ndarray:
        """Stack all signals into a (n, 1000, 12) float64 array."""
        if not self.records:
            return np.zeros((0, SIGNAL_LENGTH, NUM_LEADS))
        return np.stack([r.signal for r in self.records])

    def labels(self) -> np.ndarray:
        """Stack all label vectors into a (n, 5) uint8 matrix."""
        if not self.records:
            return np.zeros((0, NUM_CLASSES), dtype=np.uint8)
        return np.stack([r.labels for r in self.records])

    def folds(self) -> np.ndarray:
        return np.array([r.strat_fold for r in self.records], dtype=np.int64)


def read_signal_file(path: Path, record_id: str) -> np.ndarray:
    """Read one raw little-endian f32 signal file, returning float64 (1000, 12)."""
    if not path.exists():
        raise MissingFile(f"signal file not found: {path}")
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != SIGNAL_LENGTH * NUM_LEADS:
        raise BadSignalShape(
            f"record {record_id!r}: {path} holds {raw.size} values, "
            f"expected {SIGNAL_LENGTH * NUM_LEADS}"
        )
    return raw.reshape(SIGNAL_LENGTH, NUM_LEADS).astype(np.float64)


def write_signal_file(path: Path, signal: np.ndarray) -> None:
    if signal.shape != (SIGNAL_LENGTH, NUM_LEADS):
        raise BadSignalShape(f"cannot write signal of shape {signal.shape}")
    np.ascontiguousarray(signal, dtype="<f4").tofile(path)


def load_corpus(metadata_path, signal_dir) -> Corpus:
    """Ingest a metadata CSV plus its signal directory into a Corpus.

    Rows with unreadable or mis-shaped signals raise; nothing is skipped
    silently. Label columns are mapped to canonical DiagClass order no
    matter how the CSV orders them.
    """
    metadata_path = Path(metadata_path)
    signal_dir = Path(signal_dir)
    if not metadata_path.exists():
        raise MissingFile(f"metadata file not found: {metadata_path}")

    with open(metadata_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in METADATA_COLUMNS if c not in header]
        if missing:
            raise SchemaMismatch(f"metadata missing column(s): {', '.join(missing)}")
        rows = list(reader)

    records = []
    for row in rows:
        record_id = row["record_id"]
        try:
            fold = int(row["strat_fold"])
        except ValueError:
            raise BadFold(f"record {record_id!r}: strat_fold {row['strat_fold']!r}")
        if not 1 <= fold <= 10:
            raise BadFold(f"record {record_id!r}: strat_fold {fold} outside 1..10")
        labels = np.zeros(NUM_CLASSES, dtype=np.uint8)
        for cls in DiagClass:
            value = row[cls.name].strip()
            if value not in ("0", "1"):
                raise SchemaMismatch(
                    f"record {record_id!r}: column {cls.name} has value {value!r}"
                )
            labels[cls] = int(value)
        signal = read_signal_file(signal_dir / row["signal_file"], record_id)
        records.append(ECGRecord(record_id, signal, labels, fold))
    return Corpus(tuple(records))


def save_corpus(corpus: Corpus, metadata_path, signal_dir) -> None:
    """Write a corpus back out in the canonical CSV + raw-f32 layout."""
    metadata_path = Path(metadata_path)
    signal_dir = Path(signal_dir)
    signal_dir.mkdir(parents=True, exist_ok=True)
    lines = [",".join(METADATA_COLUMNS)]
    for rec in corpus.records:
        fname = f"{rec.record_id}.f32"
        write_signal_file(signal_dir / fname, rec.signal)
        bits = ",".join(str(int(rec.labels[c])) for c in DiagClass)
        lines.append(f"{rec.record_id},{rec.strat_fold},{bits},{fname}")
    metadata_path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def class_counts(corpus: Corpus) -> np.ndarray:
    """Per-class positive-label counts; the sum can exceed len(corpus)."""
    return corpus.labels().sum(axis=0).astype(np.int64)


# --- synthetic corpus -------------------------------------------------------
#
# Pseudo-ECG morphology constants. Each diagnosis perturbs a periodic
# P-QRS-T template in a way that stays visually plausible yet is cleanly
# separable for a small model.

QRS_AMP_BASE = 1.0          # R peak amplitude, template units
QRS_AMP_HYP = 1.8           # HYP multiplies the R amplitude
QRS_WIDTH_CD = 1.8          # CD widens the whole QRS complex
MI_Q_DEPTH = 0.45           # MI deepens the Q deflection by this * R amplitude
ST_OFFSET_STTC = 0.15       # STTC raises the ST segment by this * R amplitude
NOISE_STD = 0.05            # additive Gaussian noise, template units
HEART_PERIOD_RANGE = (70, 110)   # samples per beat at 100 Hz

# Fixed per-lead projection gains and baselines (12 leads).
LEAD_GAINS = np.array(
    [1.0, 1.1, 0.6, -0.9, 0.5, 0.8, 0.7, 1.2, 1.3, 1.1, 1.0, 0.9]
)
LEAD_BASELINES = np.array(
    [0.00, 0.02, -0.01, 0.01, 0.00, -0.02, 0.03, 0.00, -0.01, 0.02, 0.01, 0.00]
)


def _gauss(t, center, width):
    return np.exp(-0.5 * ((t - center) / width) ** 2)


def _beat_waveform(period: int, qrs_amp: float, qrs_width: float,
                   q_depth: float, st_offset: float) -> np.ndarray:
    """One heartbeat of the P-QRS-T template, length ``period`` samples."""
    t = np.arange(period, dtype=np.float64) / period
    wave = np.zeros(period)
    wave += 0.12 * _gauss(t, 0.15, 0.04)                       # P wave
    wave -= q_depth * _gauss(t, 0.27, 0.015 * qrs_width)       # Q
    wave += qrs_amp * _gauss(t, 0.30, 0.016 * qrs_width)       # R
    wave -= 0.20 * _gauss(t, 0.33, 0.015 * qrs_width)          # S
    st = (t > 0.36) & (t < 0.50)
    wave[st] += st_offset                                      # ST segment
    wave += 0.25 * _gauss(t, 0.55, 0.06)                       # T wave
    return wave


def _sample_labels(rng: np.random.Generator, mix: np.ndarray) -> np.ndarray:
    """Draw one multi-hot label vector honouring NORM exclusivity.

    Non-NORM classes are drawn conditionally on NORM being absent, with
    probability mix[c] / (1 - mix[NORM]), so that the marginal frequency of
    every class matches the requested mix.
    """
    u = rng.random(NUM_CLASSES)
    labels = np.zeros(NUM_CLASSES, dtype=np.uint8)
    p_norm = mix[DiagClass.NORM]
    if u[DiagClass.NORM] < p_norm:
        labels[DiagClass.NORM] = 1
        return labels
    scale = 1.0 - p_norm
    for cls in (DiagClass.CD, DiagClass.HYP, DiagClass.MI, DiagClass.STTC):
        p = 1.0 if scale <= 0 else min(1.0, mix[cls] / scale)
        if u[cls] < p:
            labels[cls] = 1
    return labels


def generate_synthetic(n: int, seed: int, class_mix) -> Corpus:
    """Generate ``n`` deterministic pseudo-ECG records.

    Identical (n, seed, class_mix) always reproduces a bit-identical corpus.
    Labels condition the morphology: HYP amplifies the R peak, MI deepens Q,
    STTC offsets the ST segment, CD widens the QRS, and NORM leaves the
    template unmodified (and excludes all other labels).
    """
    if n < 1:
        raise InvalidProbability(f"n must be >= 1, got {n}")
    mix = np.asarray(class_mix, dtype=np.float64)
    if mix.shape != (NUM_CLASSES,):
        raise InvalidProbability(f"class_mix must have 5 entries, got {mix.shape}")
    if np.any(mix < 0) or np.any(mix > 1):
        raise InvalidProbability(f"class_mix entries must lie in [0, 1]: {mix}")

    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        labels = _sample_labels(rng, mix)
        qrs_amp = QRS_AMP_BASE
        qrs_width = 1.0
        q_depth = 0.10
        st_offset = 0.0
        if labels[DiagClass.HYP]:
            qrs_amp *= QRS_AMP_HYP
        if labels[DiagClass.CD]:
            qrs_width *= QRS_WIDTH_CD
        if labels[DiagClass.MI]:
            q_depth += MI_Q_DEPTH * qrs_amp
        if labels[DiagClass.STTC]:
            st_offset += ST_OFFSET_STTC * qrs_amp

        period = int(rng.integers(HEART_PERIOD_RANGE[0], HEART_PERIOD_RANGE[1] + 1))
        beat = _beat_waveform(period, qrs_amp, qrs_width, q_depth, st_offset)
        n_beats = SIGNAL_LENGTH // period + 2
        trace = np.tile(beat, n_beats)
        phase = int(rng.integers(0, period))
        trace = trace[phase:phase + SIGNAL_LENGTH]

        signal = trace[:, None] * LEAD_GAINS[None, :] + LEAD_BASELINES[None, :]
        signal = signal + rng.normal(0.0, NOISE_STD, size=signal.shape)
        # match the on-disk precision so save/load round-trips bit-exactly
        signal = signal.astype(np.float32).astype(np.float64)

        fold = i % 10 + 1
        records.append(ECGRecord(f"syn{i:06d}", signal, labels, fold))
    return Corpus(tuple(records))
