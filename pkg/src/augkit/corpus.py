"""Audio containers, WAV I/O, fixed-window chunking and JSONL manifests."""
from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy.io import wavfile

from .errors import CorruptHeader, DuplicateId, InvalidParams, IoError, SchemaError, UnsupportedEncoding

LABELS = ("AD", "HC")
SPLITS = ("train", "test", "none")


@dataclass
class AudioSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise InvalidParams(f"sample_rate must be a positive integer, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise InvalidParams("audio samples must be finite")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def wav_read(path) -> AudioSignal:
    """Read PCM16 or float32 WAV; stereo is averaged to mono."""
    path = Path(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except FileNotFoundError as e:
        raise IoError(str(e)) from e
    except (ValueError, EOFError) as e:
        msg = str(e)
        if msg.startswith(("Unknown wave file format", "Unsupported bit depth")):
            raise UnsupportedEncoding(f"{path}: {msg}") from e
        raise CorruptHeader(f"{path}: {msg}") from e
    except struct.error as e:
        raise CorruptHeader(f"{path}: truncated header: {e}") from e

    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise UnsupportedEncoding(f"{path}: only PCM 16-bit and float 32-bit are supported, got {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    return AudioSignal(x, int(rate))


def wav_write(signal: AudioSignal, path) -> None:
    """Write mono float32 WAV, clamping to [-1, 1]."""
    x = np.clip(signal.samples, -1.0, 1.0).astype(np.float32)
    try:
        wavfile.write(Path(path), signal.sample_rate, x)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def chunk_audio(signal: AudioSignal, chunk_s: float = 10.0, stride_s: float = 2.0) -> list[AudioSignal]:
    """Cut fixed-length windows starting every ``stride_s`` seconds.

    Only windows that fit entirely are returned; a signal shorter than one
    window yields a single zero-padded chunk.
    """
    if not (chunk_s > 0 and stride_s > 0):
        raise InvalidParams(f"chunk_s and stride_s must be positive (got {chunk_s}, {stride_s})")
    sr = signal.sample_rate
    size = int(round(chunk_s * sr))
    step = int(round(stride_s * sr))
    if size < 1 or step < 1:
        raise InvalidParams("chunk or stride shorter than one sample")
    n = len(signal)
    if n < size:
        padded = np.zeros(size)
        padded[:n] = signal.samples
        return [AudioSignal(padded, sr)]
    count = (n - size) // step + 1
    return [AudioSignal(signal.samples[i * step:i * step + size].copy(), sr) for i in range(count)]


@dataclass
class SampleRecord:
    sample_id: str
    label: str
    audio_path: str | None = None
    transcript_path: str | None = None
    provenance: list[dict[str, Any]] = field(default_factory=list)
    split: str = "none"
    # recording the sample was cut from; chunks of one recording share it
    group: str | None = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise SchemaError(f"label must be one of {LABELS}, got {self.label!r}", self.sample_id)
        if self.audio_path is None and self.transcript_path is None:
            raise SchemaError("record needs audio_path or transcript_path", self.sample_id)
        if self.split not in SPLITS:
            raise SchemaError(f"split must be one of {SPLITS}, got {self.split!r}", self.sample_id)

    @property
    def recording_id(self) -> str:
        return self.group or self.sample_id

    @property
    def root_id(self) -> str:
        """Id of the original sample this record descends from (itself if original)."""
        for step in self.provenance:
            if step.get("source"):
                return step["source"]
        return self.sample_id

    def derive(self, sample_id: str, method: str, params: dict, seed: int, **paths) -> "SampleRecord":
        """Child record with one more provenance step appended."""
        step = {"method": method, "params": dict(params), "seed": int(seed), "source": self.root_id}
        return SampleRecord(
            sample_id=sample_id,
            label=self.label,
            audio_path=paths.get("audio_path", self.audio_path),
            transcript_path=paths.get("transcript_path", self.transcript_path),
            provenance=[*self.provenance, step],
            split=self.split,
            group=self.group,
        )

    def to_dict(self) -> dict:
        d = {
            "sample_id": self.sample_id,
            "label": self.label,
            "audio_path": self.audio_path,
            "transcript_path": self.transcript_path,
            "provenance": self.provenance,
            "split": self.split,
        }
        if self.group is not None:
            d["group"] = self.group
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SampleRecord":
        if not isinstance(d, dict):
            raise SchemaError("record must be a JSON object")
        for key in ("sample_id", "label"):
            if key not in d:
                raise SchemaError(f"missing field {key!r}", d.get("sample_id"))
        prov = d.get("provenance", [])
        if not isinstance(prov, list) or not all(isinstance(p, dict) for p in prov):
            raise SchemaError("provenance must be a list of objects", d.get("sample_id"))
        return cls(
            sample_id=str(d["sample_id"]),
            label=d["label"],
            audio_path=d.get("audio_path"),
            transcript_path=d.get("transcript_path"),
            provenance=prov,
            split=d.get("split", "none"),
            group=d.get("group"),
        )


class Manifest:
    """Ordered, id-unique collection of sample records."""

    def __init__(self, records=()):
        self.records: list[SampleRecord] = []
        self._index: dict[str, SampleRecord] = {}
        self.base_dir = Path(".")
        for r in records:
            self.add(r)

    def add(self, record: SampleRecord):
        if record.sample_id in self._index:
            raise DuplicateId(f"duplicate sample id {record.sample_id!r}", record.sample_id)
        self.records.append(record)
        self._index[record.sample_id] = record

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, sample_id: str) -> SampleRecord:
        return self._index[sample_id]

    def __contains__(self, sample_id):
        return sample_id in self._index

    def ids(self):
        return [r.sample_id for r in self.records]


def load_manifest(path) -> Manifest:
    path = Path(path)
    base = path.parent
    manifest = Manifest()
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise IoError(f"cannot read manifest {path}: {e}") from e
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}:{lineno}: invalid JSON: {e}") from e
        rec = SampleRecord.from_dict(d)
        manifest.add(rec)
    manifest.base_dir = base
    return manifest


def save_manifest(manifest: Manifest, path) -> None:
    text = "".join(json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) + "\n" for r in manifest)
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write manifest {path}: {e}") from e


def resolve(manifest: Manifest, rel: str | None) -> Path | None:
    """Resolve a record path relative to the manifest's directory."""
    if rel is None:
        return None
    p = Path(rel)
    if not p.is_absolute():
        p = manifest.base_dir / p
    return p


def chunk_count(duration_s: float, chunk_s: float, stride_s: float) -> int:
    if duration_s < chunk_s:
        return 1
    return math.floor((duration_s - chunk_s) / stride_s) + 1
