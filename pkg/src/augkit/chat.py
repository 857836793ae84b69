"""Reader for the subset of the CHAT transcription format used by
picture-description corpora, plus participant-utterance cleaning.

Only a fixed marker subset is understood. Anything outside it is either
passed through verbatim (plain words) or dropped together with its
brackets (unknown ``[...]`` codes).
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EmptyDocument, MalformedLine, UnknownSpeaker

LABELS = ("AD", "HC")

_UTTERANCE = re.compile(r"^\*([A-Za-z]{3}):[ \t]?(.*)$")
_DEPENDENT = re.compile(r"^%([A-Za-z0-9]+):[ \t]?(.*)$")
_HEADER = re.compile(r"^@([^:\t]+)(?::[ \t]*(.*))?$")

_BULLET = re.compile(r"\x15[^\x15]*\x15")
_PAUSE = re.compile(r"\(\.{1,3}\)")
_RETRACE = re.compile(r"\[/{1,2}\]")
_OTHER_CODE = re.compile(r"\[[^\]]*\]")
_SHORTENING = re.compile(r"\((\w+)\)")
# CHAT special terminators such as +... +/. +//? collapse to their final mark
_SPECIAL_TERMINATOR = re.compile(r"^\+\S*([.?!])$")
_SENTENCE = re.compile(r"[^.?!]*[.?!]|[^.?!]+$")
_WORD = re.compile(r"\w")


@dataclass
class ChatDocument:
    utterances: list[tuple[str, str]]
    metadata: dict[str, str] = field(default_factory=dict)
    # (index of owning utterance, tier name, text); only filled when requested
    dependent_tiers: list[tuple[int, str, str]] = field(default_factory=list)

    def speakers(self):
        return sorted({spk for spk, _ in self.utterances})


@dataclass
class Transcript:
    sample_id: str
    label: str
    sentences: list[str]

    def to_dict(self):
        return {"sample_id": self.sample_id, "label": self.label, "sentences": list(self.sentences)}

    @classmethod
    def from_dict(cls, d):
        return cls(sample_id=str(d["sample_id"]), label=str(d["label"]), sentences=list(d["sentences"]))

    def text(self):
        return " ".join(self.sentences)


def parse_chat(text: str, keep_tiers: bool = False) -> ChatDocument:
    """Split CHAT text into speaker utterances and header metadata.

    Lines beginning with a tab continue the previous tier. ``%`` tiers are
    dropped unless ``keep_tiers`` is set, in which case they are recorded
    against the utterance they follow.
    """
    utterances: list[list[str]] = []
    metadata: dict[str, str] = {}
    tiers: list[list] = []
    last = None  # ("utt" | "meta" | "tier", handle)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        if line.startswith("\t"):
            cont = line.strip()
            if last is None:
                continue
            kind, handle = last
            if kind == "utt":
                utterances[handle][1] = (utterances[handle][1] + " " + cont).strip()
            elif kind == "meta":
                metadata[handle] = (metadata[handle] + " " + cont).strip()
            elif kind == "tier" and handle is not None:
                tiers[handle][2] = (tiers[handle][2] + " " + cont).strip()
            continue
        if line.startswith("*"):
            m = _UTTERANCE.match(line)
            if m is None:
                raise MalformedLine(f"line {lineno}: speaker tier needs a 3-letter code and colon: {line!r}")
            utterances.append([m.group(1), m.group(2).strip()])
            last = ("utt", len(utterances) - 1)
        elif line.startswith("%"):
            m = _DEPENDENT.match(line)
            if keep_tiers and m is not None and utterances:
                tiers.append([len(utterances) - 1, m.group(1), m.group(2).strip()])
                last = ("tier", len(tiers) - 1)
            else:
                last = ("tier", None)
        elif line.startswith("@"):
            m = _HEADER.match(line)
            key = m.group(1).strip() if m else line[1:].strip()
            value = (m.group(2) or "").strip() if m else ""
            if key in metadata and value:
                metadata[key] = metadata[key] + "\n" + value if metadata[key] else value
            else:
                metadata.setdefault(key, value)
            last = ("meta", key)
        else:
            last = None

    if not utterances:
        raise EmptyDocument("no speaker tiers found")
    return ChatDocument(
        utterances=[(spk, txt) for spk, txt in utterances],
        metadata=metadata,
        dependent_tiers=[(i, name, txt) for i, name, txt in tiers],
    )


def read_chat(path, keep_tiers: bool = False) -> ChatDocument:
    return parse_chat(Path(path).read_text(encoding="utf-8"), keep_tiers=keep_tiers)


def serialize_chat(doc: ChatDocument) -> str:
    lines = []
    for key, value in doc.metadata.items():
        if key == "End":
            continue
        for v in (value.split("\n") if value else [""]):
            lines.append(f"@{key}:\t{v}" if v else f"@{key}")
    for spk, txt in doc.utterances:
        lines.append(f"*{spk}:\t{txt}")
    if "End" in doc.metadata:
        lines.append("@End")
    return "\n".join(lines) + "\n"


def _retrace_scope(tokens: list[str], pos: int) -> int:
    # Without an explicit <...> group the scope is the longest run before the
    # marker that is repeated right after it; at least one word.
    best = 1
    for k in range(1, pos + 1):
        before = [t.lower() for t in tokens[pos - k:pos]]
        after = [t.lower() for t in tokens[pos + 1:pos + 1 + k]]
        if before == after:
            best = k
    return min(best, pos)


def clean_utterance(text: str, keep_fillers: bool = False) -> str:
    """Strip the supported CHAT annotation subset from one utterance."""
    text = _BULLET.sub(" ", text)
    text = _PAUSE.sub(" ", text)
    # isolate markers and angle groups so they tokenize on their own
    text = re.sub(r"(\[[^\]]*\])", r" \1 ", text)
    text = text.replace("<", " < ").replace(">", " > ")

    # bracket codes contain spaces, so tokenize around them
    tokens: list[str] = []
    for piece in re.split(r"(\[[^\]]*\])", text):
        if _OTHER_CODE.fullmatch(piece.strip() or "x"):
            tokens.append(piece.strip())
        else:
            tokens.extend(piece.split())

    out: list[str] = []
    group_starts: list[int] = []  # indices into `out` where open <...> groups begin
    last_group = None  # (start, end) of the most recent closed group in `out`
    for i, tok in enumerate(tokens):
        if tok == "<":
            group_starts.append(len(out))
            continue
        if tok == ">":
            if group_starts:
                last_group = (group_starts.pop(), len(out))
            continue
        if _RETRACE.fullmatch(tok):
            if last_group is not None and last_group[1] == len(out):
                del out[last_group[0]:]
            elif out:
                del out[len(out) - _retrace_scope(out + tokens[i:], len(out)):]
            last_group = None
            continue
        if _OTHER_CODE.fullmatch(tok):
            last_group = None
            continue
        if tok.startswith("&"):
            if keep_fillers and not tok.startswith("&="):
                word = tok.lstrip("&+-")
                if word:
                    out.append(word)
            continue
        m = _SPECIAL_TERMINATOR.match(tok)
        if m:
            tok = m.group(1)
        tok = _SHORTENING.sub(r"\1", tok)
        if tok:
            out.append(tok)
    return " ".join(out)


def split_clean_sentences(text: str) -> list[str]:
    """Break a cleaned utterance stream after each terminal mark.

    Fragments without any word character are dropped.
    """
    sentences = []
    for m in _SENTENCE.finditer(text):
        s = " ".join(m.group(0).split())
        if s and _WORD.search(s):
            sentences.append(s)
    return sentences


def participant_transcript(
    doc: ChatDocument,
    speaker: str = "PAR",
    label: str = "AD",
    sample_id: str = "",
    keep_fillers: bool = False,
) -> Transcript:
    if not any(spk == speaker for spk, _ in doc.utterances):
        raise UnknownSpeaker(f"speaker {speaker!r} not in document (have {doc.speakers()})", sample_id or None)
    if label not in LABELS:
        raise ValueError(f"label must be one of {LABELS}, got {label!r}")
    cleaned = (clean_utterance(txt, keep_fillers=keep_fillers) for spk, txt in doc.utterances if spk == speaker)
    # an utterance made only of markers leaves a bare terminator behind; skip it
    stream = " ".join(c for c in cleaned if _WORD.search(c))
    return Transcript(sample_id=sample_id, label=label, sentences=split_clean_sentences(stream))


def load_transcript(path) -> Transcript:
    return Transcript.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_transcript(t: Transcript, path) -> None:
    Path(path).write_text(json.dumps(t.to_dict(), ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")
