"""Client for out-of-process augmenters, embedders and predictors.

Requests and responses are single-line JSON objects. An endpoint is either
``exec:<command>`` (requests on stdin, responses on stdout, one per line) or
``http:<url>`` (the whole batch POSTed as newline-delimited JSON, the body of
the reply holding the responses the same way).
"""
from __future__ import annotations

import json
import shlex
import subprocess
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass, field
from typing import Any

from .errors import ExtTimeout, IdMismatch, InvalidParams, ProtocolError

KINDS = ("text_aug", "audio_aug", "embed", "predict")


@dataclass
class ExtRequest:
    id: str
    kind: str
    method_name: str
    payload: Any
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParams(f"request kind must be one of {KINDS}, got {self.kind!r}")

    def to_line(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, ensure_ascii=False)


@dataclass
class ExtResponse:
    id: str
    status: str
    payload: Any = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_line(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, ensure_ascii=False)


def _parse_responses(text: str, pending: dict) -> dict[str, ExtResponse]:
    out: dict[str, ExtResponse] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            resp = ExtResponse(id=str(d["id"]), status=str(d["status"]), payload=d.get("payload"))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ProtocolError(f"unparseable response line {line[:80]!r}: {e}") from e
        if resp.id not in pending:
            raise IdMismatch(f"response for unknown request id {resp.id!r}")
        if resp.id in out:
            raise ProtocolError(f"duplicate response for id {resp.id!r}")
        out[resp.id] = resp
    return out


def _run_exec(command: str, body: str, timeout_s: float) -> tuple[str, bool]:
    proc = subprocess.Popen(shlex.split(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                            stderr=subprocess.DEVNULL, text=True, encoding="utf-8")
    try:
        out, _ = proc.communicate(body, timeout=timeout_s)
        return out, False
    except subprocess.TimeoutExpired:
        proc.kill()
        out, _ = proc.communicate()
        return out or "", True


def _run_http(url: str, body: str, timeout_s: float) -> tuple[str, bool]:
    req = urllib.request.Request(url, data=body.encode("utf-8"), method="POST",
                                 headers={"Content-Type": "application/x-ndjson"})
    try:
        with urllib.request.urlopen(req, timeout=timeout_s) as resp:
            return resp.read().decode("utf-8"), False
    except TimeoutError:
        return "", True
    except urllib.error.URLError as e:
        if isinstance(e.reason, TimeoutError):
            return "", True
        raise ProtocolError(f"HTTP endpoint {url} failed: {e}") from e


def augment_external(endpoint: str, requests, timeout_s: float = 60.0) -> dict[str, ExtResponse]:
    """Send one batch and return responses keyed by request id.

    Answers may arrive in any order. A request the server answers with an
    error status is returned as such; a request it never answers becomes an
    ``error`` response unless the batch timed out, which raises
    :class:`ExtTimeout` naming the unanswered ids.
    """
    requests = list(requests)
    pending = {r.id: r for r in requests}
    if len(pending) != len(requests):
        raise InvalidParams("request ids must be unique within a batch")
    body = "".join(r.to_line() + "\n" for r in requests)
    scheme, _, target = endpoint.partition(":")
    if scheme == "exec":
        text, timed_out = _run_exec(target, body, timeout_s)
    elif scheme in ("http", "https"):
        # both http:<url> and a bare http(s):// url are accepted
        url = endpoint if target.startswith("//") else target
        text, timed_out = _run_http(url, body, timeout_s)
    else:
        raise InvalidParams(f"endpoint must start with exec: or http:, got {endpoint!r}")
    responses = _parse_responses(text, pending)
    missing = [rid for rid in pending if rid not in responses]
    if timed_out and missing:
        raise ExtTimeout(f"{len(missing)} request(s) unanswered after {timeout_s}s: {missing[:5]}", missing)
    for rid in missing:
        responses[rid] = ExtResponse(rid, "error", {"error": "no response"})
    return {rid: responses[rid] for rid in pending}
