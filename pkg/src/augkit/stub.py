"""Reference echo server for the external-augmenter protocol.

Each request is answered with ``status: ok`` and its payload unchanged.
Flags let tests provoke the failure modes: a wrong id, a delay, a broken
line, or reversed answer order.
"""
from __future__ import annotations

import argparse
import json
import sys
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


def respond(lines, wrong_id=False, garbage=False, reverse=False, sleep_s=0.0, write=None):
    """Answer each JSON request line; ``write`` receives each response line as it is produced."""
    out = []
    reqs = [json.loads(line) for line in lines if line.strip()]
    if reverse:
        reqs = reqs[::-1]
    for req in reqs:
        if sleep_s:
            time.sleep(sleep_s)
        if garbage:
            line = "this is not json"
        else:
            rid = f"{req['id']}-bogus" if wrong_id else req["id"]
            line = json.dumps({"id": rid, "status": "ok", "payload": req.get("payload")}, sort_keys=True)
        out.append(line)
        if write is not None:
            write(line)
    return out


def serve_http(port: int, **opts):
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            n = int(self.headers.get("Content-Length", 0))
            lines = self.rfile.read(n).decode("utf-8").splitlines()
            body = "".join(line + "\n" for line in respond(lines, **opts)).encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/x-ndjson")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", port), Handler)
    return server


def start_http_stub(**opts):
    """Run the stub on a free local port in a daemon thread; returns (server, url)."""
    server = serve_http(0, **opts)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    host, port = server.server_address[:2]
    return server, f"http://{host}:{port}/"


def add_arguments(p: argparse.ArgumentParser):
    p.add_argument("--http", type=int, metavar="PORT", help="serve over HTTP instead of stdin/stdout")
    p.add_argument("--wrong-id", action="store_true")
    p.add_argument("--garbage", action="store_true")
    p.add_argument("--reverse", action="store_true")
    p.add_argument("--sleep", type=float, default=0.0, help="seconds to wait before each answer")


def run(args) -> int:
    opts = dict(wrong_id=args.wrong_id, garbage=args.garbage, reverse=args.reverse, sleep_s=args.sleep)
    if args.http is not None:
        server = serve_http(args.http, **opts)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        return 0

    def write(line):
        sys.stdout.write(line + "\n")
        sys.stdout.flush()

    respond(sys.stdin.read().splitlines(), write=write, **opts)
    return 0


def main(argv=None):
    p = argparse.ArgumentParser(prog="python -m augkit.stub", description=__doc__.splitlines()[0])
    add_arguments(p)
    return run(p.parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
