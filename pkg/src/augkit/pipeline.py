"""Corpus-level orchestration: augment a manifest, score divergence, train on
originals and score augmented copies, build cross-validation inputs."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import audio_aug, dsp, text_aug
from .chat import Transcript, load_transcript, save_transcript
from .corpus import Manifest, SampleRecord, resolve, wav_read, wav_write
from .dsp import MelSpectrogram
from .errors import AugkitError, DimensionMismatch, EmptyInput, InvalidParams, SchemaError
from .external import ExtRequest, augment_external
from .metrics import MetricsReport, audio_divergence, label_preservation, text_divergence
from .models import (CVData, Tfidf, decode_label, encode_labels, extract_audio_features,
                     train_model)
from .seeding import derive_seed

MEL_SUFFIX = ".mel"


def _map(fn, items, workers: int):
    """Ordered map; results are independent of scheduling because every item carries its own seed."""
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _tagged(fn, sample_id):
    try:
        return fn()
    except AugkitError as e:
        if e.sample_id is None:
            e.sample_id = sample_id
        raise


def sample_seed(root_seed: int, sample_id: str, method: str) -> int:
    return derive_seed(root_seed, sample_id, method)


def read_record_text(manifest: Manifest, rec: SampleRecord) -> Transcript:
    if rec.transcript_path is None:
        raise SchemaError("record has no transcript", rec.sample_id)
    return load_transcript(resolve(manifest, rec.transcript_path))


def read_record_audio(manifest: Manifest, rec: SampleRecord):
    """AudioSignal for WAV files, MelSpectrogram for ``.mel`` files."""
    if rec.audio_path is None:
        raise SchemaError("record has no audio", rec.sample_id)
    path = resolve(manifest, rec.audio_path)
    if path.suffix == MEL_SUFFIX:
        return dsp.read_mel(path)
    return wav_read(path)


# ---- augmentation -------------------------------------------------------------

def augment_text_manifest(manifest: Manifest, method: str, seed: int, out_dir, params: dict | None = None,
                          thesaurus=None, endpoint: str | None = None, timeout_s: float = 60.0,
                          workers: int = 1) -> Manifest:
    """Write one augmented transcript per text record and return their manifest.

    ``method`` is one of sd/mixup/eda/lexsub/none, or ``external`` to hand
    each transcript to the service at ``endpoint``.
    """
    params = dict(params or {})
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    recs = sorted((r for r in manifest if r.transcript_path is not None), key=lambda r: r.sample_id)
    if not recs:
        raise EmptyInput("manifest has no transcript records")
    originals = [read_record_text(manifest, r) for r in recs]
    for t, r in zip(originals, recs):
        t.sample_id, t.label = r.sample_id, r.label

    if method == "mixup":
        augmented = text_aug.mixup_corpus(originals, seed=seed)
        seeds = [seed] * len(recs)
    elif method == "external":
        if not endpoint:
            raise InvalidParams("external text augmentation needs an endpoint")
        ext_method = str(params.get("ext_method", "paraphrase"))
        seeds = [sample_seed(seed, r.sample_id, method) for r in recs]
        reqs = [ExtRequest(r.sample_id, "text_aug", ext_method, t.text(),
                           {k: v for k, v in params.items() if k != "ext_method"}, s)
                for r, t, s in zip(recs, originals, seeds)]
        responses = augment_external(endpoint, reqs, timeout_s)
        augmented = []
        for r, t in zip(recs, originals):
            resp = responses[r.sample_id]
            if not resp.ok:
                raise AugkitError(f"external augmenter failed: {resp.payload}", r.sample_id)
            augmented.append(Transcript(t.sample_id, t.label, text_aug.split_sentences(str(resp.payload))))
    else:
        seeds = [sample_seed(seed, r.sample_id, method) for r in recs]

        def one(i):
            return _tagged(lambda: text_aug.apply_text(method, originals[i], seeds[i], thesaurus, **params),
                           recs[i].sample_id)

        augmented = _map(one, range(len(recs)), workers)

    out = Manifest()
    out.base_dir = out_dir
    for rec, t, s in zip(recs, augmented, seeds):
        new_id = f"{rec.sample_id}.{method}"
        name = f"{new_id}.json"
        save_transcript(Transcript(new_id, rec.label, t.sentences), out_dir / name)
        out.add(rec.derive(new_id, method, params, s, transcript_path=name, audio_path=None))
    return out


def augment_audio_manifest(manifest: Manifest, method: str, seed: int, out_dir, params: dict | None = None,
                           workers: int = 1) -> Manifest:
    """Augment every audio record; signal outputs are WAV, spectrogram outputs ``.mel``."""
    params = dict(params or {})
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    recs = sorted((r for r in manifest if r.audio_path is not None), key=lambda r: r.sample_id)
    if not recs:
        raise EmptyInput("manifest has no audio records")

    def one(rec):
        def run():
            data = read_record_audio(manifest, rec)
            s = sample_seed(seed, rec.sample_id, method)
            step_params = dict(params)
            if method == "random":
                tset = params.get("transform_set", audio_aug.DEFAULT_RANDOM_SET)
                if isinstance(tset, str):
                    tset = [x for x in tset.split(",") if x]
                sub = {k: v for k, v in params.items() if k != "transform_set"}
                chosen, result = audio_aug.random_strategy(data, rec.sample_id, tset, seed=s,
                                                           params={m: sub.get(m, {}) for m in tset})
                step_params = {"chosen": chosen, "transform_set": list(tset)}
            else:
                result = audio_aug.apply_method(method, data, s, **dict(params))
            return s, step_params, result
        return _tagged(run, rec.sample_id)

    results = _map(one, recs, workers)
    out = Manifest()
    out.base_dir = out_dir
    for rec, (s, step_params, result) in zip(recs, results):
        new_id = f"{rec.sample_id}.{method}"
        if isinstance(result, MelSpectrogram):
            name = new_id + MEL_SUFFIX
            dsp.write_mel(result, out_dir / name)
        else:
            name = new_id + ".wav"
            wav_write(result, out_dir / name)
        out.add(rec.derive(new_id, method, step_params, s, audio_path=name, transcript_path=None))
    return out


# ---- divergence -------------------------------------------------------------------

def pair_records(orig: Manifest, aug: Manifest, attr: str):
    """(original record, augmented record) pairs, matched through provenance, ordered by augmented id."""
    pairs = []
    for rec in sorted(aug, key=lambda r: r.sample_id):
        if getattr(rec, attr) is None:
            continue
        src = rec.root_id if rec.root_id in orig else rec.sample_id
        if src not in orig or getattr(orig[src], attr) is None:
            raise SchemaError(f"no original {attr} for augmented sample", rec.sample_id)
        pairs.append((orig[src], rec))
    return pairs


def load_embeddings(path) -> dict[str, np.ndarray]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            out[str(d["id"])] = np.asarray(d["vec"], dtype=np.float64)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"{path}:{lineno}: bad embedding line: {e}") from e
    return out


def tfidf_svd_embed(texts, dim: int = 64) -> np.ndarray:
    """Fallback sentence embedder: TF-IDF projected on its top singular directions."""
    X = Tfidf().fit_transform(texts)
    if X.shape[1] == 0:
        return np.ones((len(texts), 1))
    U, S, Vt = np.linalg.svd(X, full_matrices=False)
    k = max(1, min(dim, int(np.sum(S > 1e-12))))
    V = Vt[:k]
    # fix each direction's sign so the embedding is reproducible
    signs = np.sign(V[np.arange(k), np.argmax(np.abs(V), axis=1)])
    signs[signs == 0] = 1.0
    E = X @ (V * signs[:, None]).T
    zero = np.linalg.norm(E, axis=1) == 0
    E[zero] = 1e-12
    return E


def mel_features(mel: MelSpectrogram) -> np.ndarray:
    """Mean and std of 13 MFCCs; the descriptor used when only spectrograms exist."""
    c = dsp.mfcc(mel, 13)
    return np.concatenate([c.mean(axis=0), c.std(axis=0)])


def divergence_report(orig: Manifest, aug: Manifest, method_name: str, embeddings=None,
                      mel_params: dict | None = None) -> MetricsReport:
    """Text and/or audio descriptor distances between originals and their augmented copies."""
    report = {}
    text_pairs = pair_records(orig, aug, "transcript_path")
    if text_pairs:
        triples = []
        for o, a in text_pairs:
            triples.append((a.sample_id, read_record_text(orig, o).text(), read_record_text(aug, a).text()))
        if embeddings is not None:
            def embed(texts):
                n = len(text_pairs)
                ids = [o.sample_id for o, _ in text_pairs] + [a.sample_id for _, a in text_pairs]
                missing = [i for i in ids if i not in embeddings]
                if missing:
                    raise SchemaError(f"no embedding for ids {missing[:5]}")
                rows = [embeddings[i] for i in ids]
                if len({r.size for r in rows}) != 1:
                    raise DimensionMismatch("embeddings have different dimensions")
                assert len(rows) == 2 * n
                return np.stack(rows)
        else:
            embed = tfidf_svd_embed
        report.update(text_divergence(triples, embed=embed))

    audio_pairs = pair_records(orig, aug, "audio_path")
    if audio_pairs:
        mp = dict(mel_params or {})
        o_mels, a_mels, o_feat, a_feat = [], [], [], []
        loaded = [(read_record_audio(orig, o), read_record_audio(aug, a)) for o, a in audio_pairs]
        spectral = any(isinstance(x, MelSpectrogram) for pair in loaded for x in pair)
        for o_data, a_data in loaded:
            om = o_data if isinstance(o_data, MelSpectrogram) else dsp.log_mel(o_data, **mp)
            am = a_data if isinstance(a_data, MelSpectrogram) else dsp.log_mel(a_data, **mp)
            o_mels.append(om)
            a_mels.append(am)
            if spectral:
                o_feat.append(mel_features(om))
                a_feat.append(mel_features(am))
            else:
                o_feat.append(extract_audio_features(o_data))
                a_feat.append(extract_audio_features(a_data))
        report.update(audio_divergence(np.array(o_feat), np.array(a_feat), o_mels, a_mels))
    if not report:
        raise EmptyInput("no comparable text or audio pairs between the manifests")
    return MetricsReport(method_name=method_name, **report)


# ---- features for models -----------------------------------------------------------

def _is_mel(rec: SampleRecord) -> bool:
    return rec.audio_path is not None and rec.audio_path.endswith(MEL_SUFFIX)


def _audio_descriptor(data, spectral: bool) -> np.ndarray:
    if spectral:
        return mel_features(data if isinstance(data, MelSpectrogram) else dsp.log_mel(data))
    return extract_audio_features(data)


def record_features(manifest: Manifest, recs, domain: str, spectral: bool | None = None):
    """Documents (text) or one descriptor row per record (audio).

    Audio rows are the 36 signal descriptors, or MFCC statistics when
    ``spectral`` is set (needed as soon as any record is a spectrogram).
    """
    if domain == "text":
        return [read_record_text(manifest, r).text() for r in recs]
    if spectral is None:
        spectral = any(_is_mel(r) for r in recs)
    return np.array([_tagged(lambda r=r: _audio_descriptor(read_record_audio(manifest, r), spectral), r.sample_id)
                     for r in recs])


def infer_domain(manifest: Manifest) -> str:
    if all(r.transcript_path is not None for r in manifest):
        return "text"
    if all(r.audio_path is not None for r in manifest):
        return "audio"
    raise SchemaError("manifest mixes text-only and audio-only records; pass --domain")


def manifest_cv_data(manifest: Manifest, domain: str, records=None) -> CVData:
    recs = sorted(records if records is not None else list(manifest), key=lambda r: r.sample_id)
    X = record_features(manifest, recs, domain)
    return CVData(
        ids=[r.sample_id for r in recs],
        X=X,
        y=encode_labels([r.label for r in recs]),
        groups=[r.recording_id for r in recs],
        roots=[r.root_id for r in recs],
    )


def fit_predict(train: Manifest, test: Manifest, model_kind: str, domain: str, seed: int = 0,
                model_params: dict | None = None) -> dict[str, tuple[str, float]]:
    """Train on every record of ``train`` and predict every record of ``test``."""
    tr = sorted(train, key=lambda r: r.sample_id)
    te = sorted(test, key=lambda r: r.sample_id)
    spectral = any(_is_mel(r) for r in (*tr, *te))
    Xtr = record_features(train, tr, domain, spectral)
    Xte = record_features(test, te, domain, spectral)
    if domain == "text":
        vec = Tfidf().fit(Xtr)
        Xtr, Xte = vec.transform(Xtr), vec.transform(Xte)
    model = train_model(model_kind, Xtr, [r.label for r in tr], seed=seed, **dict(model_params or {}))
    labels, conf = model.predict_with_confidence(Xte)
    return {r.sample_id: (decode_label(lab), float(c)) for r, lab, c in zip(te, labels, conf)}


def label_preservation_report(train: Manifest, aug: Manifest, model_kind: str, domain: str, seed: int = 0,
                              method_name: str = "", preds=None) -> MetricsReport:
    if preds is None:
        preds = fit_predict(train, aug, model_kind, domain, seed)
    truth = {r.sample_id: r.label for r in aug}
    acc, f1 = label_preservation({k: v[0] for k, v in preds.items()}, truth)
    return MetricsReport(method_name=method_name, label_pres_acc=acc, label_pres_f1=f1)


def merge_reports(a: MetricsReport, b: MetricsReport) -> MetricsReport:
    d = a.to_dict()
    for k, v in b.to_dict().items():
        if v is not None and k != "method_name":
            d[k] = v
    return MetricsReport(**d)


def safe_mean(values):
    values = [v for v in values if not math.isnan(v)]
    return math.fsum(values) / len(values) if values else float("nan")
