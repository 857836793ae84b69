"""Non-neural transcript augmentations: sentence deletion, half-swap Mixup,
EDA and thesaurus substitution."""
from __future__ import annotations

import math
import re
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .chat import Transcript
from .errors import EmptyThesaurus, InvalidParams, LabelMismatch, TooShort, reject_unknown_params
from .seeding import derive_seed, make_rng

# classic 127-word English stopword list used by EDA
STOPWORDS = frozenset("""
i me my myself we our ours ourselves you your yours yourself yourselves he
him his himself she her hers herself it its itself they them their theirs
themselves what which who whom this that these those am is are was were be
been being have has had having do does did doing a an the and but if or
because as until while of at by for with about against between into through
during before after above below to from up down in out on off over under
again further then once here there when where why how all any both each few
more most other some such no nor not only own same so than too very s t can
will just don should now
""".split())

EDA_OPS = ("SR", "RI", "RS", "RD")
_SENTENCE_BREAK = re.compile(r"(?<=[.?!])(?:\s+|$)")
_HAS_WORD = re.compile(r"\w")


class Thesaurus:
    """Case-insensitive word -> ordered alternatives."""

    def __init__(self, entries: dict[str, list[str]] | None = None):
        self._map: dict[str, list[str]] = {}
        for word, alts in (entries or {}).items():
            self.add(word, alts)

    def add(self, word: str, alts):
        key = word.strip().lower()
        clean = []
        for a in alts:
            a = a.strip()
            if a and a.lower() != key and a not in clean:
                clean.append(a)
        if key and clean:
            self._map.setdefault(key, [])
            self._map[key].extend(a for a in clean if a not in self._map[key])

    def get(self, word: str) -> list[str]:
        return self._map.get(word.lower(), [])

    def __contains__(self, word):
        return word.lower() in self._map

    def __len__(self):
        return len(self._map)

    def items(self):
        return self._map.items()


def parse_thesaurus(text: str) -> Thesaurus:
    th = Thesaurus()
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        word, _, rest = line.partition("\t")
        th.add(word, rest.split(","))
    return th


def load_thesaurus(path=None) -> Thesaurus:
    """Load a ``word<TAB>alt1,alt2`` file; the bundled starter list when ``path`` is None."""
    if path is None:
        text = resources.files("augkit").joinpath("data/thesaurus.tsv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_thesaurus(text)


def split_sentences(text: str) -> list[str]:
    """Split after ``.``, ``?`` or ``!`` when followed by whitespace or the end."""
    return [s.strip() for s in _SENTENCE_BREAK.split(text) if s.strip()]


def tokenize(sentence: str) -> list[str]:
    return sentence.split()


def _core(token: str) -> tuple[str, str, str]:
    stripped = token.strip(string.punctuation)
    if not stripped:
        return token, "", ""
    start = token.index(stripped)
    return token[:start], stripped, token[start + len(stripped):]


def _is_word(token: str) -> bool:
    return bool(_HAS_WORD.search(token))


def _flatten(t: Transcript) -> list[tuple[int, str]]:
    return [(i, tok) for i, s in enumerate(t.sentences) for tok in tokenize(s)]


def _rebuild(t: Transcript, flat: list[tuple[int, str]]) -> Transcript:
    groups: dict[int, list[str]] = {}
    for i, tok in flat:
        groups.setdefault(i, []).append(tok)
    sentences = [" ".join(toks) for _, toks in sorted(groups.items()) if any(_is_word(x) for x in toks)]
    return Transcript(t.sample_id, t.label, sentences)


def sentence_delete(t: Transcript, n_range=(1, 4), seed: int = 0, weights=None) -> Transcript:
    """Drop n ~ U{n_range} randomly chosen sentences, keeping at least one."""
    if len(t.sentences) < 2:
        raise TooShort(f"sentence deletion needs >= 2 sentences, got {len(t.sentences)}", t.sample_id)
    lo, hi = int(n_range[0]), int(n_range[1])
    if lo < 0 or lo > hi:
        raise InvalidParams(f"bad n_range {n_range}")
    rng = make_rng(seed)
    choices = np.arange(lo, hi + 1)
    if weights is None:
        n = int(rng.choice(choices))
    else:
        w = np.asarray(weights, dtype=np.float64)
        n = int(rng.choice(choices, p=w / w.sum()))
    n = min(n, len(t.sentences) - 1)
    drop = set(rng.choice(len(t.sentences), size=n, replace=False).tolist())
    kept = [s for i, s in enumerate(t.sentences) if i not in drop]
    return Transcript(t.sample_id, t.label, kept)


def mixup_swap(a: Transcript, b: Transcript) -> tuple[Transcript, Transcript]:
    """Exchange second halves of two same-class transcripts (split at ceil(len/2))."""
    if a.label != b.label:
        raise LabelMismatch(f"cannot mix {a.label} with {b.label}", a.sample_id)
    for t in (a, b):
        if len(t.sentences) < 2:
            raise TooShort("mixup needs >= 2 sentences", t.sample_id)
    sa, sb = math.ceil(len(a.sentences) / 2), math.ceil(len(b.sentences) / 2)
    a2 = Transcript(a.sample_id, a.label, a.sentences[:sa] + b.sentences[sb:])
    b2 = Transcript(b.sample_id, b.label, b.sentences[:sb] + a.sentences[sa:])
    return a2, b2


def mixup_pairs(transcripts: list[Transcript], seed: int = 0) -> list[int]:
    """Partner index for each transcript: a within-class random derangement.

    A transcript is paired with itself only when it is alone in its class.
    """
    rng = make_rng(derive_seed(seed, "mixup-pairs"))
    partner = list(range(len(transcripts)))
    by_label: dict[str, list[int]] = {}
    for i, t in enumerate(transcripts):
        by_label.setdefault(t.label, []).append(i)
    for label in sorted(by_label):
        idx = by_label[label]
        if len(idx) < 2:
            continue
        # random cyclic shift of a shuffled order is a derangement
        order = [idx[j] for j in rng.permutation(len(idx))]
        for k, i in enumerate(order):
            partner[i] = order[(k + 1) % len(order)]
    return partner


def mixup_corpus(transcripts: list[Transcript], seed: int = 0) -> list[Transcript]:
    """One augmented transcript per input: its first half + its partner's second half."""
    partner = mixup_pairs(transcripts, seed)
    out = []
    for i, t in enumerate(transcripts):
        out.append(mixup_swap(t, transcripts[partner[i]])[0])
    return out


def eda_budget(word_count: int, alpha: float) -> int:
    return max(1, int(math.floor(alpha * word_count + 0.5)))


def synonym_replacement(flat, n, thesaurus: Thesaurus, rng) -> tuple[list, int]:
    """Replace up to ``n`` distinct non-stopword positions; returns (tokens, replacements made)."""
    candidates = []
    for pos, (_, tok) in enumerate(flat):
        _, core, _ = _core(tok)
        if core and core.lower() not in STOPWORDS and thesaurus.get(core):
            candidates.append(pos)
    out = list(flat)
    chosen = [candidates[j] for j in rng.permutation(len(candidates))[:n]]
    for pos in chosen:
        i, tok = out[pos]
        pre, core, post = _core(tok)
        alts = thesaurus.get(core)
        out[pos] = (i, pre + alts[int(rng.integers(0, len(alts)))] + post)
    return out, len(chosen)


def random_insertion(flat, n, thesaurus: Thesaurus, rng) -> list:
    out = list(flat)
    words = [_core(tok)[1] for _, tok in flat]
    pool = [w for w in words if w and thesaurus.get(w)]
    if not pool:
        return out
    for _ in range(n):
        w = pool[int(rng.integers(0, len(pool)))]
        alts = thesaurus.get(w)
        new = alts[int(rng.integers(0, len(alts)))]
        pos = int(rng.integers(0, len(out)))
        out.insert(pos, (out[pos][0], new))
    return out


def random_swap(flat, n, rng) -> list:
    out = list(flat)
    words = [p for p, (_, tok) in enumerate(out) if _is_word(tok)]
    if len(words) < 2:
        return out
    for _ in range(n):
        a, b = rng.choice(len(words), size=2, replace=False)
        pa, pb = words[int(a)], words[int(b)]
        (ia, ta), (ib, tb) = out[pa], out[pb]
        out[pa], out[pb] = (ia, tb), (ib, ta)
    return out


def random_deletion(flat, p, rng) -> list:
    word_pos = [k for k, (_, tok) in enumerate(flat) if _is_word(tok)]
    if len(word_pos) <= 1:
        return list(flat)
    draws = rng.random(len(word_pos))
    deleted = {k for k, r in zip(word_pos, draws) if r < p}
    if len(deleted) == len(word_pos):
        deleted.discard(word_pos[int(rng.integers(0, len(word_pos)))])
    return [x for k, x in enumerate(flat) if k not in deleted]


def eda(t: Transcript, thesaurus: Thesaurus | None = None, alpha: float = 0.05, ops=EDA_OPS,
        seed: int = 0) -> Transcript:
    """One EDA operation drawn uniformly from ``ops``, budgeted by ``alpha``."""
    ops = [op.upper() for op in ops]
    bad = [op for op in ops if op not in EDA_OPS]
    if bad or not ops:
        raise InvalidParams(f"ops must be a non-empty subset of {EDA_OPS}, got {ops}")
    if not 0 <= alpha <= 1:
        raise InvalidParams(f"alpha must be in [0, 1], got {alpha}")
    rng = make_rng(seed)
    op = ops[int(rng.integers(0, len(ops)))]
    if op in ("SR", "RI") and (thesaurus is None or len(thesaurus) == 0):
        raise EmptyThesaurus(f"{op} needs a non-empty thesaurus", t.sample_id)
    flat = _flatten(t)
    n = eda_budget(sum(1 for _, tok in flat if _is_word(tok)), alpha)
    if op == "SR":
        flat, _ = synonym_replacement(flat, n, thesaurus, rng)
    elif op == "RI":
        flat = random_insertion(flat, n, thesaurus, rng)
    elif op == "RS":
        flat = random_swap(flat, n, rng)
    else:
        flat = random_deletion(flat, alpha, rng)
    return _rebuild(t, flat)


def lexical_substitute(t: Transcript, thesaurus: Thesaurus, p: float = 0.1, top_k: int = 20,
                       seed: int = 0) -> Transcript:
    """Select each word with probability p; replace it by one of its first top_k alternatives."""
    if not 0 <= p <= 1 or top_k < 1:
        raise InvalidParams(f"need 0 <= p <= 1 and top_k >= 1, got p={p}, top_k={top_k}")
    rng = make_rng(seed)
    out = []
    for i, tok in _flatten(t):
        if _is_word(tok) and rng.random() < p:
            pre, core, post = _core(tok)
            alts = thesaurus.get(core)[:top_k]
            if alts:
                tok = pre + alts[int(rng.integers(0, len(alts)))] + post
        out.append((i, tok))
    return _rebuild(t, out)


TEXT_METHODS = ("sd", "mixup", "eda", "lexsub")


@dataclass
class TextAugSpec:
    method: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.method not in TEXT_METHODS and self.method != "none":
            raise InvalidParams(f"unknown text method {self.method!r}")

    def to_dict(self):
        return {"method": self.method, "params": self.params, "seed": self.seed}


def apply_text(method: str, t: Transcript, seed: int, thesaurus: Thesaurus | None = None, **params) -> Transcript:
    """Per-document dispatch (Mixup needs a corpus; see :func:`mixup_corpus`)."""
    if method == "none":
        return Transcript(t.sample_id, t.label, list(t.sentences))
    fn = {"sd": sentence_delete, "eda": eda, "lexsub": lexical_substitute}.get(method)
    if fn is not None:
        reject_unknown_params(fn, params, method)
    if method == "sd":
        if "n_range" in params:
            params["n_range"] = tuple(params["n_range"])
        return sentence_delete(t, seed=seed, **params)
    if method == "eda":
        return eda(t, thesaurus, seed=seed, **params)
    if method == "lexsub":
        return lexical_substitute(t, thesaurus if thesaurus is not None else Thesaurus(), seed=seed, **params)
    raise InvalidParams(f"method {method!r} is not a per-document transform")
