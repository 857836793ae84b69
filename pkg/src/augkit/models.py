"""Baseline classifiers (TF-IDF + linear margin model, random forest on
acoustic descriptors), grouped stratified cross-validation and late fusion."""
from __future__ import annotations

import hashlib
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .chat import Transcript
from .corpus import AudioSignal
from .errors import (DegenerateSignal, EmptyCorpus, IdMismatch, InvalidParams, LeakageDetected,
                     SchemaError, SingleClass, TooFewSamples)
from .seeding import derive_seed, make_rng

POSITIVE = "AD"
NEGATIVE = "HC"


def encode_labels(labels) -> np.ndarray:
    return np.array([1 if (lab == POSITIVE or lab is True or lab == 1) else 0 for lab in labels], dtype=int)


def decode_label(v: int) -> str:
    return POSITIVE if int(v) == 1 else NEGATIVE


def schema_hash(names) -> str:
    return hashlib.sha256("\n".join(names).encode("utf-8")).hexdigest()[:16]


@dataclass
class FeatureMatrix:
    ids: list[str]
    X: np.ndarray
    feature_names: list[str]

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[0] != len(self.ids) or self.X.shape[1] != len(self.feature_names):
            raise SchemaError(f"feature matrix shape {self.X.shape} does not match ids/names")
        if not np.all(np.isfinite(self.X)):
            raise SchemaError("feature matrix contains non-finite values")

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def schema(self) -> str:
        return schema_hash(self.feature_names)


# ---- text features ----------------------------------------------------------

_TOKEN = re.compile(r"[\w']+")


def _ngrams(text: str) -> list[str]:
    toks = _TOKEN.findall(text.lower())
    return toks + [f"{a} {b}" for a, b in zip(toks, toks[1:])]


def _as_text(doc) -> str:
    if isinstance(doc, Transcript):
        return doc.text()
    return str(doc)


class Tfidf:
    """Unigram+bigram TF-IDF with smoothed idf and L2-normalised rows."""

    def fit(self, docs):
        docs = [_as_text(d) for d in docs]
        if not docs:
            raise EmptyCorpus("cannot fit TF-IDF on an empty corpus")
        df = Counter()
        for d in docs:
            df.update(set(_ngrams(d)))
        self.vocabulary = sorted(df)
        self.index = {term: i for i, term in enumerate(self.vocabulary)}
        n = len(docs)
        self.idf = np.array([math.log((1 + n) / (1 + df[t])) + 1.0 for t in self.vocabulary])
        return self

    def transform(self, docs) -> np.ndarray:
        docs = [_as_text(d) for d in docs]
        X = np.zeros((len(docs), len(self.vocabulary)))
        for r, d in enumerate(docs):
            for term, c in Counter(_ngrams(d)).items():
                j = self.index.get(term)
                if j is not None:
                    X[r, j] = c
        X *= self.idf[None, :]
        norms = np.linalg.norm(X, axis=1)
        X[norms > 0] /= norms[norms > 0, None]
        return X

    def fit_transform(self, docs) -> np.ndarray:
        return self.fit(docs).transform(docs)


def tfidf_fit_transform(corpus) -> tuple[FeatureMatrix, list[str]]:
    corpus = list(corpus)
    if not corpus:
        raise EmptyCorpus("cannot fit TF-IDF on an empty corpus")
    vec = Tfidf()
    X = vec.fit_transform(corpus)
    ids = [c.sample_id if isinstance(c, Transcript) else str(i) for i, c in enumerate(corpus)]
    return FeatureMatrix(ids, X, vec.vocabulary), vec.vocabulary


# ---- acoustic features --------------------------------------------------------

_LLD = [f"mfcc{i}" for i in range(13)] + ["rms", "zcr", "centroid", "rolloff", "flux"]
AUDIO_FEATURE_NAMES = [f"{name}_{stat}" for stat in ("mean", "std") for name in _LLD]


def extract_audio_features(signal: AudioSignal, n_fft: int = dsp.N_FFT, hop: int = dsp.HOP,
                           n_mels: int = dsp.N_MELS) -> np.ndarray:
    """Mean and std over frames of 13 MFCCs, RMS, ZCR, centroid, 85% rolloff and flux (36 values)."""
    if len(signal) < n_fft:
        raise DegenerateSignal(f"need at least {n_fft} samples, got {len(signal)}")
    x = signal.samples
    spec = dsp.stft(signal, n_fft, hop)
    mag = np.abs(spec.frames)
    fb = dsp.mel_filterbank(n_mels, n_fft, signal.sample_rate)
    mel = dsp.MelSpectrogram(np.log(np.maximum(mag ** 2 @ fb.T, dsp.POWER_FLOOR)), signal.sample_rate,
                             hop=hop, n_fft=n_fft)
    mfccs = dsp.mfcc(mel, 13)

    padded = np.pad(x, n_fft // 2, mode="reflect")
    idx = np.arange(spec.n_frames)[:, None] * hop + np.arange(n_fft)[None, :]
    frames = padded[idx]
    rms = np.sqrt(np.mean(frames ** 2, axis=1))
    signs = np.signbit(frames)
    zcr = np.mean(signs[:, 1:] != signs[:, :-1], axis=1)

    freqs = np.fft.rfftfreq(n_fft, 1.0 / signal.sample_rate)
    total = mag.sum(axis=1)
    safe = np.where(total > 0, total, 1.0)
    centroid = np.where(total > 0, (mag @ freqs) / safe, 0.0)
    cum = np.cumsum(mag, axis=1)
    roll_idx = np.argmax(cum >= 0.85 * cum[:, -1:], axis=1)
    rolloff = np.where(total > 0, freqs[roll_idx], 0.0)
    flux = np.zeros(spec.n_frames)
    flux[1:] = np.sqrt(np.sum(np.diff(mag, axis=0) ** 2, axis=1))

    lld = np.column_stack([mfccs, rms, zcr, centroid, rolloff, flux])
    return np.concatenate([lld.mean(axis=0), lld.std(axis=0)])


# ---- models -------------------------------------------------------------------

@dataclass
class TrainedModel:
    kind: str
    parameters: dict
    training_config: dict
    schema: str
    dim: int

    def decision(self, X) -> np.ndarray:
        X = self._check(X)
        if self.kind == "linear_margin":
            return X @ self.parameters["w"] + self.parameters["b"]
        votes = np.stack([_tree_predict(t, X) for t in self.parameters["trees"]])
        return votes.mean(axis=0) - 0.5

    def predict(self, X) -> np.ndarray:
        """0/1 labels (1 = AD); a zero score goes to AD."""
        return (self.decision(X) >= 0).astype(int)

    def predict_with_confidence(self, X):
        s = self.decision(X)
        labels = (s >= 0).astype(int)
        if self.kind == "linear_margin":
            conf = 1.0 / (1.0 + np.exp(-np.abs(s)))
        else:
            conf = 0.5 + np.abs(s)
        return labels, conf

    def _check(self, X):
        if isinstance(X, FeatureMatrix):
            if X.schema != self.schema:
                raise SchemaError(f"feature schema {X.schema} does not match model schema {self.schema}")
            X = X.X
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise SchemaError(f"expected {self.dim} features, got {X.shape[1]}")
        return X


def _unpack(X, y):
    names = None
    if isinstance(X, FeatureMatrix):
        names = X.feature_names
        X = X.X
    X = np.asarray(X, dtype=np.float64)
    y = encode_labels(y) if not isinstance(y, np.ndarray) or y.dtype.kind not in "iub" else y.astype(int)
    if X.shape[0] != y.size:
        raise InvalidParams(f"{X.shape[0]} rows but {y.size} labels")
    if np.unique(y).size < 2:
        raise SingleClass("training labels contain a single class")
    names = names or [f"f{i}" for i in range(X.shape[1])]
    return X, y, names


def train_linear(X, y, epochs: int = 30, lam: float = 1e-3, seed: int = 0) -> TrainedModel:
    """Hinge-loss linear classifier trained by Pegasos-style stochastic subgradient steps.

    The bias is learned as the weight of a constant input. One fixed shuffle
    per epoch, drawn from ``seed``.
    """
    X, y, names = _unpack(X, y)
    if epochs < 1 or lam <= 0:
        raise InvalidParams(f"need epochs >= 1 and lam > 0, got {epochs}, {lam}")
    ys = np.where(y == 1, 1.0, -1.0)
    Xb = np.hstack([X, np.ones((X.shape[0], 1))])
    rng = make_rng(seed)
    w = np.zeros(Xb.shape[1])
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(X.shape[0]):
            t += 1
            eta = 1.0 / (lam * t)
            margin = ys[i] * (Xb[i] @ w)
            w *= 1.0 - eta * lam
            if margin < 1.0:
                w += eta * ys[i] * Xb[i]
    w, b = w[:-1], float(w[-1])
    cfg = {"epochs": epochs, "lam": lam, "seed": seed}
    return TrainedModel("linear_margin", {"w": w, "b": b}, cfg, schema_hash(names), X.shape[1])


# tree nodes are stored as parallel lists: feature (-1 = leaf), threshold, left, right, label
@dataclass
class Tree:
    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    label: list = field(default_factory=list)

    def add(self, feature=-1, threshold=0.0, label=0):
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.label.append(label)
        return len(self.feature) - 1


def _majority(y) -> int:
    pos = int(np.sum(y))
    return 1 if pos >= y.size - pos else 0


def _best_split(x, y, min_leaf):
    """Lowest weighted Gini split of one feature: (impurity, threshold) or None."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = xs.size
    left_n = np.arange(1, n)
    left_pos = np.cumsum(ys)[:-1]
    right_n = n - left_n
    right_pos = ys.sum() - left_pos
    valid = (xs[1:] > xs[:-1]) & (left_n >= min_leaf) & (right_n >= min_leaf)
    if not valid.any():
        return None
    pl = left_pos / left_n
    pr = right_pos / right_n
    gini = (left_n * 2 * pl * (1 - pl) + right_n * 2 * pr * (1 - pr)) / n
    gini = np.where(valid, gini, np.inf)
    i = int(np.argmin(gini))
    thr = (xs[i] + xs[i + 1]) / 2.0
    if not xs[i] <= thr < xs[i + 1]:
        thr = xs[i]
    return float(gini[i]), float(thr)


def build_tree(X, y, max_features=None, min_leaf: int = 2, rng=None) -> Tree:
    """CART with Gini impurity, grown until nodes are pure or cannot be split.

    ``max_features`` features are tried per node in random order; when none of
    them admits a split the remaining features are tried as well.
    """
    rng = rng if rng is not None else make_rng(0)
    d = X.shape[1]
    k = d if max_features is None else max(1, min(d, int(max_features)))
    tree = Tree()
    root = tree.add(label=_majority(y))
    stack = [(root, np.arange(X.shape[0]))]
    while stack:
        node, rows = stack.pop()
        yn = y[rows]
        if yn.min() == yn.max() or rows.size < 2 * min_leaf:
            continue
        feats = rng.permutation(d) if k < d else np.arange(d)
        best = None
        for count, f in enumerate(feats):
            if count >= k and best is not None:
                break
            res = _best_split(X[rows, f], yn, min_leaf)
            if res is not None and (best is None or res[0] < best[0]):
                best = (res[0], res[1], int(f))
        if best is None:
            continue
        _, thr, f = best
        go_left = X[rows, f] <= thr
        lrows, rrows = rows[go_left], rows[~go_left]
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.left[node] = tree.add(label=_majority(y[lrows]))
        tree.right[node] = tree.add(label=_majority(y[rrows]))
        stack.append((tree.right[node], rrows))
        stack.append((tree.left[node], lrows))
    return tree


def _tree_predict(tree: Tree, X) -> np.ndarray:
    out = np.empty(X.shape[0], dtype=int)
    for r in range(X.shape[0]):
        node = 0
        while tree.feature[node] >= 0:
            node = tree.left[node] if X[r, tree.feature[node]] <= tree.threshold[node] else tree.right[node]
        out[r] = tree.label[node]
    return out


def train_random_forest(X, y, n_trees: int = 100, seed: int = 0, max_features="sqrt",
                        bootstrap: bool = True, min_leaf: int = 2) -> TrainedModel:
    """Bagged CART trees; each tree's randomness comes from its own derived seed."""
    X, y, names = _unpack(X, y)
    if n_trees < 1:
        raise InvalidParams(f"n_trees must be >= 1, got {n_trees}")
    if max_features == "sqrt":
        mf = max(1, int(math.sqrt(X.shape[1])))
    else:
        mf = max_features
    trees = []
    for t in range(n_trees):
        rng = make_rng(derive_seed(seed, "tree", t))
        rows = rng.integers(0, X.shape[0], X.shape[0]) if bootstrap else np.arange(X.shape[0])
        trees.append(build_tree(X[rows], y[rows], mf, min_leaf, rng))
    cfg = {"n_trees": n_trees, "seed": seed, "max_features": max_features, "bootstrap": bootstrap,
           "min_leaf": min_leaf}
    return TrainedModel("random_forest", {"trees": trees}, cfg, schema_hash(names), X.shape[1])


MODEL_KINDS = {"linear": "linear_margin", "linear_margin": "linear_margin",
               "forest": "random_forest", "rf": "random_forest", "random_forest": "random_forest"}


def train_model(kind: str, X, y, seed: int = 0, **params) -> TrainedModel:
    kind = MODEL_KINDS.get(kind, kind)
    if kind == "linear_margin":
        return train_linear(X, y, seed=seed, **params)
    if kind == "random_forest":
        return train_random_forest(X, y, seed=seed, **params)
    raise InvalidParams(f"unknown model kind {kind!r}")


# ---- cross-validation ---------------------------------------------------------

@dataclass
class CVData:
    """Samples for cross-validation.

    ``X`` is a feature array or a list of documents (TF-IDF is then fitted
    inside each training fold). ``roots`` names the original sample each row
    descends from and ``groups`` the recording it was cut from.
    """
    ids: list[str]
    X: object
    y: np.ndarray
    groups: list[str] | None = None
    roots: list[str] | None = None

    def __post_init__(self):
        self.y = encode_labels(self.y) if not isinstance(self.y, np.ndarray) else self.y.astype(int)
        n = len(self.ids)
        if len(self.X) != n or self.y.size != n:
            raise InvalidParams("ids, X and y must have the same length")
        if len(set(self.ids)) != n:
            raise InvalidParams("duplicate ids in CV data")
        self.groups = list(self.groups) if self.groups is not None else list(self.ids)
        self.roots = list(self.roots) if self.roots is not None else list(self.ids)

    def rows(self, idx):
        if isinstance(self.X, np.ndarray):
            return self.X[idx]
        return [self.X[i] for i in idx]


@dataclass
class FoldRecord:
    seed_index: int
    fold: int
    train_ids: list[str]
    val_ids: list[str]
    accuracy: float
    sensitivity: float


@dataclass
class CVResult:
    mean_acc: float
    std_acc: float
    mean_sensitivity: float
    folds: list[FoldRecord]

    def as_tuple(self):
        return self.mean_acc, self.std_acc, self.mean_sensitivity


def stratified_group_folds(groups, labels, k: int, rng) -> dict[str, int]:
    """Assign each group to a fold so every fold gets a share of each class.

    Groups are shuffled within class, larger groups placed first, each going
    to the fold with the fewest samples of that class.
    """
    size = Counter(groups)
    glabel = {}
    for g, lab in zip(groups, labels):
        if glabel.setdefault(g, lab) != lab:
            raise InvalidParams(f"group {g!r} mixes labels")
    by_class: dict[int, list[str]] = {}
    for g in sorted(glabel):
        by_class.setdefault(int(glabel[g]), []).append(g)
    for c, gs in by_class.items():
        if len(gs) < k:
            raise TooFewSamples(f"class {decode_label(c)} has {len(gs)} recordings, need >= {k} for {k} folds")
    totals = [0] * k
    assign = {}
    for c in sorted(by_class):
        gs = [by_class[c][i] for i in rng.permutation(len(by_class[c]))]
        gs.sort(key=lambda g: -size[g])
        per_class = [0] * k
        for g in gs:
            f = min(range(k), key=lambda j: (per_class[j], totals[j], j))
            assign[g] = f
            per_class[f] += size[g]
            totals[f] += size[g]
    return assign


def check_leakage(train_roots, val_roots, train_groups=(), val_groups=()) -> None:
    """Raise if a training row descends from, or shares a recording with, a validation row."""
    bad = sorted(set(train_roots) & set(val_roots))
    if bad:
        raise LeakageDetected(f"training fold contains descendants of validation samples: {bad[:5]}")
    bad = sorted(set(train_groups) & set(val_groups))
    if bad:
        raise LeakageDetected(f"training and validation folds share recordings: {bad[:5]}")


def _featurize(train_x, test_x):
    if isinstance(train_x, np.ndarray):
        return train_x, test_x
    vec = Tfidf().fit(train_x)
    return vec.transform(train_x), vec.transform(test_x)


def cross_validate(data: CVData, model_kind: str, k: int = 10, n_seeds: int = 5,
                   augmented: CVData | None = None, seed: int = 0, model_params: dict | None = None) -> CVResult:
    """Grouped, stratified k-fold CV repeated over ``n_seeds`` seeds.

    Each seed reshuffles fold assignment and reseeds the model. Augmented
    rows join a training fold only when their original sample is in it.
    """
    if k < 2:
        raise InvalidParams(f"k must be >= 2, got {k}")
    if n_seeds < 1:
        raise InvalidParams(f"n_seeds must be >= 1, got {n_seeds}")
    model_params = dict(model_params or {})
    root_group = dict(zip(data.ids, data.groups))
    folds: list[FoldRecord] = []
    seed_means = []
    for s in range(n_seeds):
        assign = stratified_group_folds(data.groups, data.y, k, make_rng(derive_seed(seed, "folds", s)))
        accs = []
        for f in range(k):
            val = [i for i, g in enumerate(data.groups) if assign[g] == f]
            train = [i for i, g in enumerate(data.groups) if assign[g] != f]
            val_groups = {data.groups[i] for i in val}
            train_x, train_y = data.rows(train), data.y[train]
            train_ids = [data.ids[i] for i in train]
            train_roots = [data.roots[i] for i in train]
            train_groups = [data.groups[i] for i in train]
            if augmented is not None:
                keep = [i for i, r in enumerate(augmented.roots)
                        if r in root_group and root_group[r] not in val_groups]
                if keep:
                    train_x = _concat(train_x, augmented.rows(keep))
                    train_y = np.concatenate([train_y, augmented.y[keep]])
                    train_ids += [augmented.ids[i] for i in keep]
                    train_roots += [augmented.roots[i] for i in keep]
                    train_groups += [root_group[augmented.roots[i]] for i in keep]
            check_leakage(train_roots, [data.roots[i] for i in val], train_groups, val_groups)
            Xtr, Xva = _featurize(train_x, data.rows(val))
            model = train_model(model_kind, Xtr, train_y, seed=derive_seed(seed, "model", s, f), **model_params)
            pred = model.predict(Xva)
            truth = data.y[val]
            acc = float(np.mean(pred == truth))
            pos = truth == 1
            sens = float(np.mean(pred[pos] == 1)) if pos.any() else float("nan")
            accs.append(acc)
            folds.append(FoldRecord(s, f, train_ids, [data.ids[i] for i in val], acc, sens))
        seed_means.append(float(np.mean(accs)))
    all_acc = [r.accuracy for r in folds]
    sens = [r.sensitivity for r in folds if not math.isnan(r.sensitivity)]
    return CVResult(float(np.mean(all_acc)), float(np.std(seed_means)), float(np.mean(sens)), folds)


def _concat(a, b):
    if isinstance(a, np.ndarray):
        return np.concatenate([a, np.asarray(b)], axis=0)
    return list(a) + list(b)


# ---- fusion and prediction files ------------------------------------------------

def majority_vote(pred_sets) -> dict[str, str]:
    """Per-id modal label over several predictors.

    Ties go to the tied label with the highest mean confidence, then to AD.
    """
    pred_sets = list(pred_sets)
    if not pred_sets:
        raise InvalidParams("need at least one prediction set")
    ids = set(pred_sets[0])
    for ps in pred_sets[1:]:
        if set(ps) != ids:
            diff = sorted(ids ^ set(ps))
            raise IdMismatch(f"prediction sets cover different ids: {diff[:5]}")
    fused = {}
    for sid in sorted(ids):
        votes: dict[str, list[float]] = {}
        for ps in pred_sets:
            label, conf = ps[sid]
            votes.setdefault(label, []).append(float(conf))
        top = max(len(v) for v in votes.values())
        tied = [lab for lab, v in votes.items() if len(v) == top]
        if len(tied) == 1:
            fused[sid] = tied[0]
            continue
        best = max(sum(votes[lab]) / len(votes[lab]) for lab in tied)
        tied = [lab for lab in tied if sum(votes[lab]) / len(votes[lab]) == best]
        fused[sid] = POSITIVE if POSITIVE in tied else sorted(tied)[0]
    return fused


def write_predictions(preds: dict, path) -> None:
    lines = []
    for sid in sorted(preds):
        label, conf = preds[sid]
        lines.append(json.dumps({"id": sid, "label": label, "confidence": round(float(conf), 6)}, sort_keys=True))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_predictions(path) -> dict[str, tuple[str, float]]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            out[str(d["id"])] = (str(d["label"]), float(d.get("confidence", 1.0)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"{path}:{lineno}: bad prediction line: {e}") from e
    return out
