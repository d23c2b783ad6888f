"""In-memory network: one FIFO queue per directed link."""

from __future__ import annotations

import queue
import threading

from ..errors import TransportError

_POLL = 0.05


class LocalHub:
    def __init__(self):
        self.queues = {(a, b): queue.Queue() for a in range(3) for b in range(3) if a != b}
        self.abort = threading.Event()

    def endpoint(self, pid: int) -> LocalEndpoint:
        return LocalEndpoint(self, pid)


class LocalEndpoint:
    def __init__(self, hub: LocalHub, pid: int, timeout: float = 120.0):
        self.hub = hub
        self.pid = pid
        self.timeout = timeout

    def send_frame(self, to: int, frame: bytes) -> None:
        if self.hub.abort.is_set():
            raise TransportError("session aborted by another party")
        self.hub.queues[(self.pid, to)].put(frame)

    def recv_frame(self, frm: int) -> bytes:
        q = self.hub.queues[(frm, self.pid)]
        waited = 0.0
        while True:
            try:
                return q.get(timeout=_POLL)
            except queue.Empty:
                if self.hub.abort.is_set():
                    raise TransportError(f"P{frm} aborted the session") from None
                waited += _POLL
                if waited >= self.timeout:
                    raise TransportError(f"timed out waiting for P{frm}") from None

    def close(self) -> None:
        pass
