"""TCP front end for the frame protocol: newline-delimited JSON over a
stream socket. One thread per connection; the wrapped handler provides its
own locking. The transport side opens one connection per call, which is
plenty at desk scale and keeps failure handling trivial."""

from __future__ import annotations

import logging
import socket
import socketserver
import threading

from .errors import TIMEOUT, UNREACHABLE, ServiceError
from .frames import decode_frame, encode_frame

log = logging.getLogger(__name__)


def parse_addr(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep:
        raise ValueError(f"bad address {addr!r}, expected host:port")
    return host or "127.0.0.1", int(port)


class FrameServer:
    """Serves ``handler(frame) -> frame`` over TCP until shut down."""

    def __init__(self, addr: str, handler):
        host, port = parse_addr(addr)
        outer = self

        class _Handler(socketserver.StreamRequestHandler):
            def handle(self):
                for line in self.rfile:
                    if not line.strip():
                        continue
                    try:
                        frame = decode_frame(line)
                        reply = outer.handler(frame)
                    except ServiceError as exc:
                        reply = {"type": "ERROR", "request_id": "", "payload": exc.to_payload()}
                    except Exception:
                        log.exception("handler failed")
                        break
                    try:
                        self.wfile.write(encode_frame(reply))
                        self.wfile.flush()
                    except (BrokenPipeError, ConnectionResetError):
                        break

        class _Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self.handler = handler
        self._server = _Server((host, port), _Handler)
        self.addr = f"{self._server.server_address[0]}:{self._server.server_address[1]}"
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    def start(self) -> "FrameServer":
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def shutdown(self) -> None:
        self._server.shutdown()
        self._server.server_close()


class TcpTransport:
    """Coordinator-facing transport: ``call(dst, frame, timeout) -> reply``."""

    def call(self, dst: str, frame: dict, timeout: float = 5.0) -> dict:
        host, port = parse_addr(dst)
        try:
            with socket.create_connection((host, port), timeout=timeout) as conn:
                conn.sendall(encode_frame(frame))
                with conn.makefile("rb") as fh:
                    line = fh.readline()
            if not line:
                raise ServiceError(UNREACHABLE, f"{dst} closed the connection")
            return decode_frame(line)
        except socket.timeout as exc:
            raise ServiceError(TIMEOUT, f"{dst} timed out") from exc
        except OSError as exc:
            raise ServiceError(UNREACHABLE, f"cannot reach {dst}: {exc}") from exc


class FrameClient:
    """Persistent client connection with automatic request ids."""

    def __init__(self, addr: str, timeout: float = 5.0):
        host, port = parse_addr(addr)
        try:
            self._conn = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ServiceError(UNREACHABLE, f"cannot reach {addr}: {exc}") from exc
        self._file = self._conn.makefile("rb")
        self._seq = 0

    def request(self, ftype: str, payload: dict) -> dict:
        self._seq += 1
        frame = {"type": ftype, "request_id": f"r{self._seq}", "payload": payload}
        try:
            self._conn.sendall(encode_frame(frame))
            line = self._file.readline()
        except socket.timeout as exc:
            raise ServiceError(TIMEOUT, "server timed out") from exc
        except OSError as exc:
            raise ServiceError(UNREACHABLE, f"connection failed: {exc}") from exc
        if not line:
            raise ServiceError(UNREACHABLE, "server closed the connection")
        return decode_frame(line)

    def close(self) -> None:
        try:
            self._file.close()
            self._conn.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
