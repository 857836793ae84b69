"""Command-line front end.

Exit status: 0 on success, 1 on a usage error, 2 when the data is at fault.
Every command that writes files also writes ``run_manifest.json`` beside
them, recording the root seed, the per-sample seeds and all parameters.
"""
from __future__ import annotations

import argparse
import json
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, audio_aug, dsp, pipeline, stub, text_aug
from .chat import participant_transcript, read_chat, save_transcript
from .corpus import Manifest, SampleRecord, chunk_audio, load_manifest, save_manifest, wav_write
from .errors import AugkitError, InvalidParams
from .metrics import reports_to_csv
from .models import CVData, MODEL_KINDS, cross_validate, majority_vote, read_predictions, write_predictions

RUN_MANIFEST = "run_manifest.json"
GLOBAL_DEFAULTS = {"seed": 0, "workers": 1}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---- option helpers -------------------------------------------------------------

def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        pass
    if "," in raw:
        return [_parse_value(p.strip()) for p in raw.split(",") if p.strip()]
    return raw


def parse_params(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--param expects key=value, got {item!r}")
        out[key.strip()] = _parse_value(raw.strip())
    return out


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment line."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from e
    out = {}
    for n, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{n}: expected key = value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _all_parsers(parser):
    yield parser
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                yield from _all_parsers(sub)


def apply_config(parser, config: dict[str, str]) -> dict:
    """Install config values as parser defaults; returns ``param.*`` entries as params."""
    params = {k[len("param."):]: _parse_value(v) for k, v in config.items() if k.startswith("param.")}
    config = {k: v for k, v in config.items() if not k.startswith("param.")}
    known = set()
    for p in _all_parsers(parser):
        for action in p._actions:
            if action.dest not in config:
                continue
            known.add(action.dest)
            value = config[action.dest]
            if action.nargs == 0:
                if value.lower() not in ("true", "false"):
                    raise UsageError(f"config key {action.dest} expects true or false")
                value = value.lower() == "true"
            elif isinstance(action, argparse._AppendAction) or action.nargs in ("+", "*"):
                value = [v.strip() for v in value.split(";") if v.strip()]
            action.default = value
    unknown = sorted(set(config) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return params


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def write_run_manifest(out_dir, args, **extra):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    # output location and thread count do not change artifact contents
    options = {k: _jsonable(v) for k, v in sorted(vars(args).items())
               if k not in ("func", "config_params", "config", "workers", "out_dir", "out")}
    doc = {
        "tool": "augkit",
        "command": args.command_path,
        "root_seed": args.seed,
        "options": options,
        "versions": {
            "augkit": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        **{k: _jsonable(v) for k, v in extra.items()},
    }
    (out_dir / RUN_MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _params(args) -> dict:
    merged = dict(args.config_params)
    merged.update(parse_params(args.param))
    return merged


def _provenance_seeds(manifest: Manifest) -> dict:
    return {r.sample_id: r.provenance[-1]["seed"] for r in manifest if r.provenance}


# ---- commands ---------------------------------------------------------------------

def cmd_parse_chat(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest()
    files = []
    for src in args.inputs:
        p = Path(src)
        files.extend(sorted(p.glob("*.cha")) if p.is_dir() else [p])
    if not files:
        raise UsageError("no .cha files given")
    for path in sorted(files, key=lambda p: p.stem):
        sid = path.stem
        try:
            doc = read_chat(path)
            t = participant_transcript(doc, speaker=args.speaker, label=args.label, sample_id=sid,
                                       keep_fillers=args.keep_fillers)
        except AugkitError as e:
            e.sample_id = e.sample_id or sid
            raise
        name = f"{sid}.json"
        save_transcript(t, out_dir / name)
        manifest.add(SampleRecord(sid, args.label, transcript_path=name))
    save_manifest(manifest, out_dir / "manifest.jsonl")
    write_run_manifest(out_dir, args, samples=manifest.ids())
    print(f"parsed {len(manifest)} transcript(s) into {out_dir}")
    return 0


def _input_manifest(args) -> Manifest:
    if args.manifest:
        return load_manifest(args.manifest)
    if not args.inputs:
        raise UsageError("give --manifest or one or more WAV inputs")
    if args.label is None:
        raise UsageError("--label is required with WAV inputs")
    m = Manifest()
    for p in args.inputs:
        p = Path(p)
        m.add(SampleRecord(p.stem, args.label, audio_path=str(p.resolve())))
    return m


def cmd_chunk(args) -> int:
    src = _input_manifest(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = Manifest()
    for rec in sorted((r for r in src if r.audio_path is not None), key=lambda r: r.sample_id):
        try:
            sig = pipeline.read_record_audio(src, rec)
            if args.rate and sig.sample_rate != args.rate:
                sig = dsp.resample(sig, args.rate)
            chunks = chunk_audio(sig, args.chunk_s, args.stride_s)
        except AugkitError as e:
            e.sample_id = e.sample_id or rec.sample_id
            raise
        for i, c in enumerate(chunks):
            cid = f"{rec.sample_id}.c{i:03d}"
            name = f"{cid}.wav"
            wav_write(c, out_dir / name)
            step = {"method": "chunk", "params": {"index": i, "chunk_s": args.chunk_s, "stride_s": args.stride_s,
                                                   "rate": args.rate}, "seed": 0, "from": rec.sample_id}
            out.add(SampleRecord(cid, rec.label, audio_path=name, provenance=[*rec.provenance, step],
                                 split=rec.split, group=rec.recording_id))
    save_manifest(out, out_dir / "manifest.jsonl")
    write_run_manifest(out_dir, args, chunks=len(out))
    print(f"wrote {len(out)} chunk(s) into {out_dir}")
    return 0


def cmd_aug_text(args) -> int:
    params = _params(args)
    thesaurus = text_aug.load_thesaurus(args.thesaurus) if args.method in ("eda", "lexsub") else None
    if args.method not in (*text_aug.TEXT_METHODS, "none", "external"):
        raise UsageError(f"unknown text method {args.method!r}")
    src = load_manifest(args.manifest)
    out = pipeline.augment_text_manifest(src, args.method, args.seed, args.out_dir, params, thesaurus,
                                         endpoint=args.endpoint, timeout_s=args.timeout, workers=args.workers)
    save_manifest(out, Path(args.out_dir) / "manifest.jsonl")
    write_run_manifest(args.out_dir, args, params=params, sample_seeds=_provenance_seeds(out))
    print(f"{args.method}: wrote {len(out)} augmented transcript(s) into {args.out_dir}")
    return 0


def cmd_aug_audio(args) -> int:
    params = _params(args)
    if args.method not in (*audio_aug.METHODS, "none", "random"):
        raise UsageError(f"unknown audio method {args.method!r}")
    src = _input_manifest(args)
    out = pipeline.augment_audio_manifest(src, args.method, args.seed, args.out_dir, params, workers=args.workers)
    save_manifest(out, Path(args.out_dir) / "manifest.jsonl")
    write_run_manifest(args.out_dir, args, params=params, sample_seeds=_provenance_seeds(out))
    print(f"{args.method}: wrote {len(out)} augmented sample(s) into {args.out_dir}")
    return 0


def _method_name(aug: Manifest) -> str:
    methods = {r.provenance[-1].get("method") for r in aug if r.provenance and r.provenance[-1].get("source")}
    if not methods or methods == {"none"}:
        return "None"
    return methods.pop() if len(methods) == 1 else "mixed"


def _print_report(rep):
    for k, v in rep.to_dict().items():
        if v is not None and k != "method_name":
            print(f"  {k:<20} {v:.4f}")


def cmd_eval_divergence(args) -> int:
    orig, aug = load_manifest(args.orig), load_manifest(args.aug)
    name = args.method_name or _method_name(aug)
    emb = pipeline.load_embeddings(args.embeddings) if args.embeddings else None
    rep = pipeline.divergence_report(orig, aug, name, embeddings=emb)
    if args.model:
        domain = args.domain or pipeline.infer_domain(orig)
        lp = pipeline.label_preservation_report(orig, aug, args.model, domain, seed=args.seed, method_name=name)
        rep = pipeline.merge_reports(rep, lp)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.csv").write_text(reports_to_csv([rep]), encoding="utf-8")
    write_run_manifest(out_dir, args)
    print(f"divergence for {name}:")
    _print_report(rep)
    return 0


def cmd_eval_label_preservation(args) -> int:
    train, aug = load_manifest(args.train), load_manifest(args.aug)
    name = args.method_name or _method_name(aug)
    domain = args.domain or pipeline.infer_domain(train)
    preds = read_predictions(args.preds) if args.preds else pipeline.fit_predict(train, aug, args.model, domain,
                                                                                   seed=args.seed)
    rep = pipeline.label_preservation_report(train, aug, args.model, domain, method_name=name, preds=preds)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_predictions(preds, out_dir / "predictions.jsonl")
    (out_dir / "report.csv").write_text(reports_to_csv([rep]), encoding="utf-8")
    write_run_manifest(out_dir, args)
    print(f"label preservation for {name}:")
    _print_report(rep)
    return 0


def _cv_aug_spec(args, m: Manifest, domain: str, out_dir: Path) -> Manifest:
    """Materialise the augmentation described by a JSON spec file for training folds."""
    try:
        spec = json.loads(Path(args.aug).read_text(encoding="utf-8"))
        method = spec["method"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise UsageError(f"bad augmentation spec {args.aug}: {e}") from e
    params = dict(spec.get("params", {}))
    target = out_dir / "augmented"
    if spec.get("domain", domain) == "text":
        th = text_aug.load_thesaurus(spec.get("thesaurus")) if method in ("eda", "lexsub") else None
        return pipeline.augment_text_manifest(m, method, args.seed, target, params, th,
                                              endpoint=spec.get("endpoint"), workers=args.workers)
    return pipeline.augment_audio_manifest(m, method, args.seed, target, params, workers=args.workers)


def cmd_cv(args) -> int:
    m = load_manifest(args.manifest)
    domain = args.domain or pipeline.infer_domain(m)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = pipeline.manifest_cv_data(m, domain)
    if args.aug_manifest and args.aug:
        raise UsageError("give either --aug-manifest or --aug, not both")
    am = None
    if args.aug_manifest:
        am = load_manifest(args.aug_manifest)
    elif args.aug:
        am = _cv_aug_spec(args, m, domain, out_dir)
        save_manifest(am, out_dir / "augmented" / "manifest.jsonl")
    aug = None
    if am is not None:
        aug = pipeline.manifest_cv_data(am, domain)
        # recordings of augmented rows are those of their originals
        aug = CVData(aug.ids, aug.X, aug.y, groups=[m[r].recording_id if r in m else g
                                                      for r, g in zip(aug.roots, aug.groups)], roots=aug.roots)
    res = cross_validate(data, args.model, k=args.k, n_seeds=args.n_seeds, augmented=aug, seed=args.seed)
    doc = {
        "mean_acc": res.mean_acc,
        "std_acc": res.std_acc,
        "mean_sensitivity": res.mean_sensitivity,
        "folds": [{"seed_index": f.seed_index, "fold": f.fold, "accuracy": f.accuracy,
                   "sensitivity": None if f.sensitivity != f.sensitivity else f.sensitivity,
                   "val_ids": f.val_ids, "train_ids": f.train_ids} for f in res.folds],
    }
    (out_dir / "cv_result.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_run_manifest(out_dir, args)
    print(f"{args.model} {args.k}-fold x {args.n_seeds} seeds: acc {res.mean_acc:.4f} "
          f"(std {res.std_acc:.4f}), sensitivity {res.mean_sensitivity:.4f}")
    return 0


def cmd_fuse(args) -> int:
    sets = [read_predictions(p) for p in args.preds]
    fused = majority_vote(sets)
    out = {}
    for sid, label in fused.items():
        agree = [s[sid][1] for s in sets if s[sid][0] == label]
        out[sid] = (label, len(agree) / len(sets))
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(out, out_path)
    write_run_manifest(out_path.parent, args)
    n_ad = sum(1 for v in fused.values() if v == "AD")
    print(f"fused {len(sets)} predictor(s) over {len(fused)} sample(s): {n_ad} AD, {len(fused) - n_ad} HC")
    return 0


# ---- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    # SUPPRESS keeps a subcommand from resetting a value given before it
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="root seed for per-sample seed derivation (default 0)")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="sample-level worker threads")
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="flat key = value file; command-line flags take precedence")

    p = _Parser(prog="augkit", description="Augment and evaluate paired speech/transcript corpora.",
                parents=[common])
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    def add(subparsers, name, func, help_):
        sp = subparsers.add_parser(name, help=help_, parents=[common], description=help_)
        sp.set_defaults(func=func)
        return sp

    def audio_inputs(sp):
        sp.add_argument("inputs", nargs="*", help="WAV files (alternative to --manifest)")
        sp.add_argument("--manifest")
        sp.add_argument("--label", choices=("AD", "HC"), help="label for WAV inputs")

    sp = add(sub, "parse-chat", cmd_parse_chat, "extract participant transcripts from CHAT files")
    sp.add_argument("inputs", nargs="+", help=".cha files or directories")
    sp.add_argument("--label", required=True, choices=("AD", "HC"))
    sp.add_argument("--speaker", default="PAR")
    sp.add_argument("--keep-fillers", action="store_true")
    sp.add_argument("--out-dir", required=True)

    sp = add(sub, "chunk", cmd_chunk, "cut recordings into fixed-length overlapping chunks")
    audio_inputs(sp)
    sp.add_argument("--chunk-s", type=float, default=10.0)
    sp.add_argument("--stride-s", type=float, default=2.0)
    sp.add_argument("--rate", type=int, default=dsp.WORK_RATE, help="resample first (0 keeps the input rate)")
    sp.add_argument("--out-dir", required=True)

    aug = sub.add_parser("aug", help="augment a corpus", parents=[common])
    aug_sub = aug.add_subparsers(dest="domain_command", metavar="DOMAIN")
    sp = add(aug_sub, "text", cmd_aug_text, "augment transcripts")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--method", required=True, help="sd, mixup, eda, lexsub, none or external")
    sp.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
    sp.add_argument("--thesaurus", help="word<TAB>alt,alt file (defaults to the bundled one)")
    sp.add_argument("--endpoint", help="exec:<command> or http:<url> for --method external")
    sp.add_argument("--timeout", type=float, default=60.0)
    sp.add_argument("--out-dir", required=True)
    sp = add(aug_sub, "audio", cmd_aug_audio, "augment recordings or spectrograms")
    audio_inputs(sp)
    sp.add_argument("--method", required=True, help=", ".join([*audio_aug.METHODS, "random", "none"]))
    sp.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
    sp.add_argument("--out-dir", required=True)

    ev = sub.add_parser("eval", help="evaluate augmented data", parents=[common])
    ev_sub = ev.add_subparsers(dest="eval_command", metavar="WHAT")
    sp = add(ev_sub, "divergence", cmd_eval_divergence, "distances between originals and augmented copies")
    sp.add_argument("--orig", required=True)
    sp.add_argument("--aug", required=True)
    sp.add_argument("--embeddings", help='JSONL of {"id", "vec"}; TF-IDF+SVD is used otherwise')
    sp.add_argument("--model", choices=sorted(MODEL_KINDS), help="also score label preservation")
    sp.add_argument("--domain", choices=("text", "audio"))
    sp.add_argument("--method-name")
    sp.add_argument("--out-dir", required=True)
    sp = add(ev_sub, "label-preservation", cmd_eval_label_preservation,
             "train on originals, score augmented copies")
    sp.add_argument("--train", required=True)
    sp.add_argument("--aug", required=True)
    sp.add_argument("--model", default="linear", choices=sorted(MODEL_KINDS))
    sp.add_argument("--domain", choices=("text", "audio"))
    sp.add_argument("--preds", help="use these predictions instead of training a model")
    sp.add_argument("--method-name")
    sp.add_argument("--out-dir", required=True)

    sp = add(sub, "cv", cmd_cv, "grouped stratified k-fold cross-validation")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--aug-manifest", help="augmented copies added to training folds only")
    sp.add_argument("--aug", metavar="SPEC_JSON",
                    help='augmentation applied for training folds: {"domain", "method", "params"}')
    sp.add_argument("--model", default="linear", choices=sorted(MODEL_KINDS))
    sp.add_argument("--domain", choices=("text", "audio"))
    sp.add_argument("-k", "--k", dest="k", type=int, default=10)
    sp.add_argument("--seeds", "--n-seeds", dest="n_seeds", type=int, default=5)
    sp.add_argument("--out-dir", required=True)

    sp = add(sub, "fuse", cmd_fuse, "majority vote over prediction files")
    sp.add_argument("preds", nargs="+", help="prediction JSONL files")
    sp.add_argument("--out", required=True)

    sp = add(sub, "protocol-stub", lambda a: stub.run(a), "reference echo server for the external protocol")
    stub.add_arguments(sp)
    return p


def _command_path(args) -> list[str]:
    return [x for x in (args.command, getattr(args, "domain_command", None),
                        getattr(args, "eval_command", None)) if x]


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        config_path = _find_config(argv)
        config = read_config(config_path) if config_path else {}
        globals_ = {k: config.pop(k) for k in list(config) if k in GLOBAL_DEFAULTS}
        config_params = apply_config(parser, config)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"augkit: error: {e}", file=sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        print("augkit: error: a complete subcommand is required", file=sys.stderr)
        return 1
    try:
        for key, default in GLOBAL_DEFAULTS.items():
            if not hasattr(args, key):
                setattr(args, key, int(globals_.get(key, default)))
    except ValueError as e:
        print(f"augkit: error: bad config value: {e}", file=sys.stderr)
        return 1
    args.config = config_path
    args.config_params = config_params
    args.command_path = _command_path(args)
    try:
        return args.func(args)
    except (UsageError, InvalidParams) as e:
        print(f"augkit: error: {e}", file=sys.stderr)
        return 1
    except (AugkitError, OSError, ValueError) as e:
        print(f"augkit: data error: {e}", file=sys.stderr)
        return 2


def _find_config(argv) -> str | None:
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def main(argv=None) -> int:
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
