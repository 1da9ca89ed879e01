"""Network front ends for a :class:`Gateway`.

* ingest: length-prefixed frames over TCP, one 5-byte reply per frame
  (``0x06 u16 accepted u16 inserted`` or ``0x15 u16 error_code``);
* query: a small HTTP/JSON API over the same store.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import struct
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from io import StringIO
from urllib.parse import parse_qs, urlparse

from ..csvio import iso, parse_time
from ..device import FrameError, StreamDecoder, length_prefixed
from .store import AGGREGATIONS, Ack, Gateway, NotFound, QueryRequest

log = logging.getLogger(__name__)

ACK = 0x06
NAK = 0x15
REPLY = struct.Struct("<BHH")
ERROR_CODES = {"truncated": 1, "bad_magic": 2, "bad_version": 3, "bad_length": 4, "bad_crc": 5, "oversize": 6}
ERROR_NAMES = {v: k for k, v in ERROR_CODES.items()}


def encode_reply(ack: Ack) -> bytes:
    if ack.ok:
        return REPLY.pack(ACK, ack.accepted, ack.inserted)
    return REPLY.pack(NAK, ERROR_CODES.get(ack.error, 0), 0)


def decode_reply(data: bytes) -> Ack:
    status, a, b = REPLY.unpack(data)
    if status == ACK:
        return Ack(ok=True, accepted=a, inserted=b)
    return Ack(ok=False, error=ERROR_NAMES.get(a, "unknown"))


class _IngestHandler(socketserver.BaseRequestHandler):
    def handle(self):
        gw: Gateway = self.server.gateway
        decoder = StreamDecoder()
        while True:
            data = self.request.recv(65536)
            if not data:
                return
            try:
                frames = decoder.feed(data)
            except FrameError as exc:
                # the length prefix itself is garbage; resync is impossible
                log.warning("dropping connection: %s", exc)
                self.request.sendall(encode_reply(Ack(ok=False, error=exc.reason)))
                return
            for frame in frames:
                self.request.sendall(encode_reply(gw.handle_frame(frame)))


class IngestServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, gateway: Gateway):
        self.gateway = gateway
        super().__init__(address, _IngestHandler)


class IngestClient:
    """Blocking client: sends one frame, waits for its reply."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)

    def send(self, frame: bytes) -> Ack:
        self.sock.sendall(length_prefixed(frame))
        buf = b""
        while len(buf) < REPLY.size:
            chunk = self.sock.recv(REPLY.size - len(buf))
            if not chunk:
                raise ConnectionError("gateway closed the connection")
            buf += chunk
        return decode_reply(buf)

    def close(self):
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def series_json(device_id: int, req: QueryRequest, rows) -> dict:
    return {
        "device_id": device_id,
        "from": req.start,
        "to": req.end,
        "agg": req.aggregation,
        "points": [{"t": iso(r.created_at), "created_at": r.created_at, "n": r.count,
                    "pm10": r.pm10, "pm25": r.pm25, "temp": r.temp, "rh": r.rh} for r in rows],
    }


def devices_json(gw: Gateway) -> dict:
    return {"devices": [{"device_id": i, "readings": len(gw.channels[i]), **gw.channels[i].meta}
                        for i in gw.device_ids()]}


class _ApiHandler(BaseHTTPRequestHandler):
    server_version = "pmnet-gateway/0.1"

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)

    def _send(self, status: int, body: str, ctype: str):
        data = body.encode()
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _json(self, status: int, obj):
        self._send(status, json.dumps(obj, sort_keys=True), "application/json")

    def do_GET(self):
        gw: Gateway = self.server.gateway
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        q = {k: v[-1] for k, v in parse_qs(url.query).items()}
        try:
            if parts == ["devices"]:
                return self._json(HTTPStatus.OK, devices_json(gw))
            if len(parts) == 3 and parts[0] == "devices":
                device_id = int(parts[1])
                start = parse_time(q["from"]) if "from" in q else 0
                end = parse_time(q["to"]) if "to" in q else 2**63 - 1
                if parts[2] == "series":
                    req = QueryRequest(device_id, start, end, q.get("agg", "raw"))
                    rows = gw.query_series(req)[device_id]
                    return self._json(HTTPStatus.OK, series_json(device_id, req, rows))
                if parts[2] == "export.csv":
                    buf = StringIO()
                    gw.export_csv(device_id, buf, start if "from" in q else None, end if "to" in q else None)
                    return self._send(HTTPStatus.OK, buf.getvalue(), "text/csv")
            return self._json(HTTPStatus.NOT_FOUND, {"error": "no such endpoint"})
        except NotFound:
            return self._json(HTTPStatus.NOT_FOUND, {"error": "unknown device"})
        except ValueError as exc:
            return self._json(HTTPStatus.BAD_REQUEST, {"error": str(exc),
                                                       "aggregations": sorted(AGGREGATIONS)})


class ApiServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, gateway: Gateway):
        self.gateway = gateway
        super().__init__(address, _ApiHandler)


def start_background(gateway: Gateway, host: str = "127.0.0.1", ingest_port: int = 0, api_port: int = 0):
    """Start both servers on daemon threads; returns ``(ingest, api)``."""
    ingest = IngestServer((host, ingest_port), gateway)
    api = ApiServer((host, api_port), gateway)
    for srv in (ingest, api):
        threading.Thread(target=srv.serve_forever, daemon=True).start()
    return ingest, api
