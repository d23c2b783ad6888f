"""Party runtime: the object every protocol function receives as ``ctx``.

All three parties run the same program.  Code branches on ``ctx.id`` where roles
differ, but every party enters the same sequence of ``ctx.round()`` blocks, so
each party's round counter equals the session's.
"""

from __future__ import annotations

import contextlib
import hashlib
import threading
from typing import Callable, Sequence

from ..errors import IntegrityError, ProtocolDesyncError, StateError, StructuralError, TransportError
from ..ring import RingArray
from ..sharing import AdditiveShare, SeedPair, derive_seed
from . import tags
from .local import LocalHub
from .stats import CommStats
from .wire import FRAME_OVERHEAD, decode_frame, encode_frame, pack_segments, unpack_segments

PARTY_ROLES = {0: "model owner (dealer)", 1: "data owner", 2: "computing assistant"}


def neighbors(pid: int) -> tuple[int, int]:
    """(next, previous) party modulo 3."""
    return (pid + 1) % 3, (pid - 1) % 3


def session_id_for(seed: int | bytes) -> int:
    return int.from_bytes(derive_seed(seed, "session-id")[:2], "little")


class PartyContext:
    def __init__(self, pid: int, endpoint, seed: int | bytes, session: int | None = None):
        if pid not in (0, 1, 2):
            raise StructuralError(f"party id must be 0, 1 or 2, got {pid}")
        self.id = pid
        self.endpoint = endpoint
        self.session = session_id_for(seed) if session is None else session
        self.stats = CommStats()
        self.phase: str | None = None
        self._online_started = False
        self._pair_seeds = {
            peer: derive_seed(seed, f"pair-{min(pid, peer)}{max(pid, peer)}") for peer in (0, 1, 2) if peer != pid
        }
        self._private_seed = derive_seed(seed, f"private-{pid}")
        self._streams: dict[tuple, SeedPair] = {}
        self._send_seq = {peer: 0 for peer in self._pair_seeds}
        self._recv_seq = {peer: 0 for peer in self._pair_seeds}
        self._round_depth = 0
        self._received_in_round = False
        self.trace: dict[str, object] = {}
        self.opened: list[tuple[str, RingArray]] = []  # view log of opened values (this party)
        self.record_opened = False

    # -- session setup ----------------------------------------------------
    def handshake(self) -> None:
        """Exchange seed commitments with both peers; mismatches raise IntegrityError."""
        for peer in sorted(self._pair_seeds):
            self._send_raw(peer, tags.CONTROL_HELLO, SeedPair(self._pair_seeds[peer]).digest())
        for peer in sorted(self._pair_seeds):
            theirs = self._recv_raw(peer, tags.CONTROL_HELLO)
            if theirs != SeedPair(self._pair_seeds[peer]).digest():
                raise IntegrityError(f"P{self.id} and P{peer} hold different pairwise seeds")

    def goodbye(self) -> None:
        """Confirm with both peers that everyone finished; a failed peer surfaces here as TransportError."""
        for peer in sorted(self._pair_seeds):
            self._send_raw(peer, tags.CONTROL_BYE, b"")
        for peer in sorted(self._pair_seeds):
            self._recv_raw(peer, tags.CONTROL_BYE)

    def set_phase(self, phase: str) -> None:
        if phase not in ("offline", "online"):
            raise StructuralError(f"unknown phase {phase!r}")
        if phase == "offline" and self._online_started:
            raise StateError("cannot return to the offline phase once the online phase began")
        if phase == "online":
            self._online_started = True
        self.phase = phase

    def comm_stats(self) -> CommStats:
        return self.stats.snapshot()

    # -- randomness ---------------------------------------------------------
    def prg(self, peer: int, purpose: str) -> SeedPair:
        """Stream shared with ``peer`` (both sides get the same elements)."""
        key = ("pair", peer, purpose)
        if key not in self._streams:
            if peer not in self._pair_seeds:
                raise StructuralError(f"P{self.id} shares no seed with P{peer}")
            self._streams[key] = SeedPair(self._pair_seeds[peer], purpose)
        return self._streams[key]

    def private(self, purpose: str) -> SeedPair:
        key = ("private", purpose)
        if key not in self._streams:
            self._streams[key] = SeedPair(self._private_seed, purpose)
        return self._streams[key]

    # -- rounds ---------------------------------------------------------------
    @contextlib.contextmanager
    def round(self):
        """A batch of mutually independent messages.  Nested blocks join the outer round."""
        if self._round_depth == 0:
            if self.phase is None:
                raise StateError("set a phase before communicating")
            self.stats.record_round(self.phase)
            self._received_in_round = False
        self._round_depth += 1
        try:
            yield
        finally:
            self._round_depth -= 1

    # -- messaging ------------------------------------------------------------
    def _send_raw(self, to: int, tag: int, payload: bytes) -> None:
        seq = self._send_seq[to]
        self._send_seq[to] = seq + 1
        frame = encode_frame(self.session, tag, seq, payload)
        self.stats.record_send(self.phase or "", self.id, to, tag, len(payload), FRAME_OVERHEAD)
        self.endpoint.send_frame(to, frame)

    def _recv_raw(self, frm: int, tag: int) -> bytes:
        frame = self.endpoint.recv_frame(frm)
        session, got_tag, seq, payload = decode_frame(frame)
        if session != self.session:
            raise IntegrityError(f"frame from P{frm} belongs to session {session}, expected {self.session}")
        if got_tag != tag or seq != self._recv_seq[frm]:
            raise ProtocolDesyncError(
                f"P{self.id} expected tag {tags.NAMES.get(tag, tag)} seq {self._recv_seq[frm]} from P{frm}, "
                f"got tag {tags.NAMES.get(got_tag, got_tag)} seq {seq}"
            )
        self._recv_seq[frm] += 1
        return payload

    def send(self, to: int, tag: int, arrays: Sequence[RingArray]) -> None:
        if self._round_depth == 0:
            raise StateError("messages must be sent inside ctx.round()")
        if self._received_in_round:
            raise StateError("a send that depends on a receive belongs to the next round")
        if self.phase == "online" and tag not in tags.ONLINE_ALLOWLIST:
            raise StateError(f"tag {tags.NAMES.get(tag, tag)} is not allowed online")
        self._send_raw(to, tag, pack_segments(arrays))

    def recv(self, frm: int, tag: int, layout: Sequence[tuple[tuple[int, ...], int]]) -> list[RingArray]:
        if self._round_depth == 0:
            raise StateError("messages must be received inside ctx.round()")
        self._received_in_round = True
        return unpack_segments(self._recv_raw(frm, tag), layout)

    # -- two-party opening ---------------------------------------------------
    def open(self, shares: Sequence[AdditiveShare | None], layout: Sequence[tuple[tuple[int, ...], int]],
             label: str = "open") -> list[RingArray] | None:
        """Reveal a batch of P1/P2 additive sharings to both holders in one round.

        ``layout`` gives (shape, width) of each value so that P0, which holds no
        share, can follow the round schedule.  P0 gets ``None``.
        """
        with self.round():
            if self.id == 0:
                return None
            peer = 2 if self.id == 1 else 1
            mine = [s.component for s in shares]
            self.send(peer, tags.OPEN, mine)
            theirs = self.recv(peer, tags.OPEN, layout)
        values = [a + b for a, b in zip(mine, theirs)]
        if self.record_opened:
            self.opened.extend((label, v) for v in values)
        return values

    def close(self) -> None:
        self.endpoint.close()


def open_between(ctx: PartyContext, share: AdditiveShare | None, shape=(), width: int | None = None) -> RingArray | None:
    """Open one P1/P2 sharing; both holders learn the value, P0 gets None."""
    if width is None:
        if share is None:
            raise StructuralError("P0 must pass the width of the value being opened")
        width = share.width
        shape = share.shape
    out = ctx.open([share], [(tuple(shape), width)])
    return None if out is None else out[0]


def run_local(program: Callable, seed: int | bytes, *args, handshake: bool = True, **kwargs):
    """Run ``program(ctx, *args, **kwargs)`` for all three parties over the in-memory hub.

    Returns ``(results, stats, contexts)`` with results indexed by party id and
    stats merged across parties.
    """
    hub = LocalHub()
    ctxs = [PartyContext(pid, hub.endpoint(pid), seed) for pid in range(3)]
    results: list = [None, None, None]
    errors: list = []  # in the order they occurred; the first is the root cause
    lock = threading.Lock()

    def worker(pid: int) -> None:
        try:
            if handshake:
                ctxs[pid].handshake()
            results[pid] = program(ctxs[pid], *args, **kwargs)
            if handshake:
                ctxs[pid].goodbye()
        except BaseException as exc:  # noqa: BLE001 - re-raised in the caller thread
            with lock:
                errors.append(exc)
            hub.abort.set()

    threads = [threading.Thread(target=worker, args=(pid,), name=f"P{pid}") for pid in range(3)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return results, CommStats.merge(c.stats for c in ctxs), ctxs


def transcript_digest(stats: CommStats) -> str:
    h = hashlib.sha256()
    for rec in stats.log:
        h.update(f"{rec.phase},{rec.src},{rec.dst},{rec.tag},{rec.nbytes};".encode())
    return h.hexdigest()
