"""TCP network: one long-lived connection per directed party pair.

Each party listens on its own address and dials every peer for its outgoing
link, in ascending party-id order.  The dialer announces itself with a single
byte carrying its party id; a reader thread per incoming connection splits the
stream into frames and queues them by sender.
"""

from __future__ import annotations

import queue
import socket
import threading
import time

from ..errors import TransportError
from .wire import LENGTH

_EOF = object()


def parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {text!r}")
    return host, int(port)


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf.extend(chunk)
    return bytes(buf)


class TcpEndpoint:
    def __init__(self, pid: int, listen: tuple[str, int], peers: dict[int, tuple[str, int]], timeout: float = 30.0):
        if set(peers) != {0, 1, 2} - {pid}:
            raise ValueError("party mode needs exactly the two other parties' addresses")
        self.pid = pid
        self.listen_addr = listen
        self.peers = peers
        self.timeout = timeout
        self.inbox = {j: queue.Queue() for j in peers}
        self.out: dict[int, socket.socket] = {}
        self._server: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._incoming: list[socket.socket] = []

    def connect(self) -> None:
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind(self.listen_addr)
        srv.listen(4)
        srv.settimeout(self.timeout)
        self._server = srv
        acceptor = threading.Thread(target=self._accept_loop, daemon=True)
        acceptor.start()

        deadline = time.monotonic() + self.timeout
        for j in sorted(self.peers):
            while True:
                try:
                    s = socket.create_connection(self.peers[j], timeout=self.timeout)
                    break
                except OSError:
                    if time.monotonic() > deadline:
                        raise TransportError(f"P{j} unreachable at {self.peers[j]}") from None
                    time.sleep(0.05)
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            s.settimeout(None)
            s.sendall(bytes([self.pid]))
            self.out[j] = s

        acceptor.join(max(0.0, deadline - time.monotonic()))
        if acceptor.is_alive() or len(self._incoming) != len(self.peers):
            raise TransportError("peers did not connect back in time")

    def _accept_loop(self) -> None:
        seen = set()
        while len(seen) < len(self.peers):
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            conn.settimeout(self.timeout)
            hello = _recv_exact(conn, 1)
            if hello is None or hello[0] not in self.peers or hello[0] in seen:
                conn.close()
                continue
            conn.settimeout(None)
            j = hello[0]
            seen.add(j)
            self._incoming.append(conn)
            t = threading.Thread(target=self._reader, args=(j, conn), daemon=True)
            t.start()
            self._threads.append(t)

    def _reader(self, j: int, conn: socket.socket) -> None:
        try:
            while True:
                head = _recv_exact(conn, LENGTH.size)
                if head is None:
                    break
                (length,) = LENGTH.unpack(head)
                body = _recv_exact(conn, length)
                if body is None:
                    break
                self.inbox[j].put(head + body)
        except OSError:
            pass
        self.inbox[j].put(_EOF)

    def send_frame(self, to: int, frame: bytes) -> None:
        try:
            self.out[to].sendall(frame)
        except OSError as exc:
            raise TransportError(f"lost connection to P{to}: {exc}") from exc

    def recv_frame(self, frm: int) -> bytes:
        try:
            item = self.inbox[frm].get(timeout=self.timeout)
        except queue.Empty:
            raise TransportError(f"timed out waiting for P{frm}") from None
        if item is _EOF:
            self.inbox[frm].put(_EOF)
            raise TransportError(f"P{frm} disconnected")
        return item

    def close(self) -> None:
        for s in self.out.values():
            try:
                s.shutdown(socket.SHUT_WR)
            except OSError:
                pass
            s.close()
        for s in self._incoming:
            s.close()
        if self._server is not None:
            self._server.close()
