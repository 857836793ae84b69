"""Divergence descriptors and label-preservation scores for augmented corpora."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .dsp import MelSpectrogram
from .errors import (DimensionMismatch, EmptyInput, EmptyText, MelMismatch, MissingPredictions,
                     ZeroVector)


def levenshtein(a: str, b: str) -> int:
    """Character edit distance with unit costs.

    Row-wise DP; insertions within a row are resolved with a running minimum,
    which lets each row be computed with numpy.
    """
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    if len(a) < len(b):
        a, b = b, a
    bb = np.frombuffer(b.encode("utf-32-le"), dtype=np.uint32)
    j = np.arange(len(bb) + 1)
    prev = j.copy()
    aa = np.frombuffer(a.encode("utf-32-le"), dtype=np.uint32)
    for i, ch in enumerate(aa, start=1):
        cur = np.empty_like(prev)
        cur[0] = i
        sub = prev[:-1] + (bb != ch)
        cur[1:] = np.minimum(prev[1:] + 1, sub)
        # cur[k] = min over m<=k of cur[m] + (k - m)
        cur = np.minimum.accumulate(cur - j) + j
        prev = cur
    return int(prev[-1])


def transcript_text(sentences) -> str:
    return " ".join(sentences)


def _tokens(text: str) -> list[str]:
    return text.lower().split()


def ttr(text: str) -> float:
    toks = _tokens(text)
    if not toks:
        raise EmptyText("type-token ratio of an empty text")
    return len(set(toks)) / len(toks)


def ttr_delta(orig: str, aug: str) -> float:
    return abs(ttr(orig) - ttr(aug))


def semantic_distance(e1, e2) -> float:
    """Cosine distance 1 - cos(e1, e2), in [0, 2]."""
    a = np.asarray(e1, dtype=np.float64).reshape(-1)
    b = np.asarray(e2, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionMismatch(f"embedding sizes differ: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine distance of a zero vector")
    if np.array_equal(a, b):
        return 0.0
    return float(np.clip(1.0 - np.dot(a, b) / (na * nb), 0.0, 2.0))


def kl_histograms(p, q, eps: float = 1e-6) -> float:
    """D(p || q) in nats after add-eps smoothing and renormalisation."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionMismatch(f"histograms differ in length: {p.size} vs {q.size}")
    p = p / p.sum() + eps
    q = q / q.sum() + eps
    p /= p.sum()
    q /= q.sum()
    return float(max(0.0, np.sum(p * np.log(p / q))))


def _histogram(x, lo, hi, bins):
    if hi <= lo:
        idx = np.zeros(x.size, dtype=int)
    else:
        idx = np.floor((x - lo) / (hi - lo) * bins).astype(int)
        idx = np.clip(idx, 0, bins - 1)
    return np.bincount(idx, minlength=bins).astype(np.float64)


def kl_feature_divergence(orig_features, aug_features, bins: int = 32, eps: float = 1e-6) -> float:
    """Mean over feature dimensions of D(original || augmented) of per-dimension histograms.

    Both sets are binned over their pooled min-max range.
    """
    X = np.atleast_2d(np.asarray(orig_features, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(aug_features, dtype=np.float64))
    if X.size == 0 or Y.size == 0:
        raise EmptyInput("feature sets must be non-empty")
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatch(f"feature dims differ: {X.shape[1]} vs {Y.shape[1]}")
    total = 0.0
    for d in range(X.shape[1]):
        lo = min(X[:, d].min(), Y[:, d].min())
        hi = max(X[:, d].max(), Y[:, d].max())
        total += kl_histograms(_histogram(X[:, d], lo, hi, bins), _histogram(Y[:, d], lo, hi, bins), eps)
    return total / X.shape[1]


def mel_distortion(orig: MelSpectrogram, aug: MelSpectrogram) -> float:
    """Mean per-frame Euclidean distance between log-mel frames, truncated to the shorter one."""
    if orig.n_mels != aug.n_mels:
        raise MelMismatch(f"n_mels differ: {orig.n_mels} vs {aug.n_mels}")
    n = min(orig.n_frames, aug.n_frames)
    if n == 0:
        return 0.0
    diff = orig.frames[:n] - aug.frames[:n]
    return float(np.mean(np.sqrt(np.sum(diff ** 2, axis=1))))


def _is_positive(label) -> bool:
    if isinstance(label, str):
        return label.upper() == "AD"
    return bool(label)


def label_preservation(preds: dict, truth: dict) -> tuple[float, float]:
    """Accuracy over all predicted ids and F1 of the AD class."""
    if not preds:
        raise MissingPredictions("no predictions given")
    missing = sorted(set(preds) - set(truth))
    if missing:
        raise MissingPredictions(f"predictions for unknown ids: {missing[:5]}")
    tp = fp = fn = correct = 0
    for sid in sorted(preds):
        p, t = _is_positive(preds[sid]), _is_positive(truth[sid])
        correct += p == t
        tp += p and t
        fp += p and not t
        fn += t and not p
    acc = correct / len(preds)
    f1 = 1.0 if tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
    return acc, f1


@dataclass
class MetricsReport:
    method_name: str
    label_pres_acc: float | None = None
    label_pres_f1: float | None = None
    levenshtein_mean: float | None = None
    semantic_dist_mean: float | None = None
    ttr_delta_mean: float | None = None
    kl_divergence: float | None = None
    mel_distortion_mean: float | None = None

    def __post_init__(self):
        for name in ("label_pres_acc", "label_pres_f1"):
            v = getattr(self, name)
            if v is not None and not 0 <= v <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        for name in ("levenshtein_mean", "semantic_dist_mean", "ttr_delta_mean", "kl_divergence",
                     "mel_distortion_mean"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0, got {v}")

    def to_dict(self):
        return asdict(self)


REPORT_COLUMNS = [f.name for f in fields(MetricsReport)]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in reports:
        w.writerow([_fmt(getattr(r, c)) for c in REPORT_COLUMNS])
    return buf.getvalue()


# ---- corpus-level aggregation ----------------------------------------------

def text_divergence(pairs, embed=None) -> dict:
    """Mean Levenshtein, semantic distance and TTR delta over ``(id, orig, aug)`` text triples.

    ``embed`` maps a list of texts to an embedding matrix; when None the
    semantic column is left empty.
    """
    pairs = sorted(pairs, key=lambda p: p[0])
    if not pairs:
        raise EmptyInput("no text pairs")
    lev = [levenshtein(o, a) for _, o, a in pairs]
    dttr = [ttr_delta(o, a) for _, o, a in pairs]
    out = {"levenshtein_mean": math.fsum(lev) / len(lev), "ttr_delta_mean": math.fsum(dttr) / len(dttr)}
    if embed is not None:
        E = embed([o for _, o, _ in pairs] + [a for _, _, a in pairs])
        n = len(pairs)
        sem = [semantic_distance(E[i], E[n + i]) for i in range(n)]
        out["semantic_dist_mean"] = math.fsum(sem) / n
    return out


def audio_divergence(orig_features, aug_features, orig_mels, aug_mels, bins: int = 32) -> dict:
    """KL on pooled feature sets plus mean mel distortion over aligned pairs."""
    if len(orig_mels) != len(aug_mels) or not orig_mels:
        raise EmptyInput("need equally many, non-zero, original and augmented spectrograms")
    dist = [mel_distortion(o, a) for o, a in zip(orig_mels, aug_mels)]
    return {
        "kl_divergence": kl_feature_divergence(orig_features, aug_features, bins=bins),
        "mel_distortion_mean": math.fsum(dist) / len(dist),
    }
