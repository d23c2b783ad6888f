"""Per-session communication counters."""

from __future__ import annotations

import threading
from collections import Counter
from dataclasses import dataclass, field

from . import tags

PHASES = ("offline", "online")
LINKS = tuple((a, b) for a in range(3) for b in range(3) if a != b)


@dataclass
class MessageRecord:
    phase: str
    src: int
    dst: int
    tag: int
    nbytes: int


@dataclass
class CommStats:
    """Payload bytes per directed link and phase, plus round counts per phase.

    Frame headers and session-control traffic are tracked separately and never
    enter the protocol-cost figures.
    """

    bytes: Counter = field(default_factory=Counter)  # (phase, src, dst) -> payload bytes
    messages: Counter = field(default_factory=Counter)  # (phase, src, dst) -> frames
    rounds: Counter = field(default_factory=Counter)  # phase -> rounds
    header_bytes: int = 0
    control_bytes: int = 0
    log: list = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record_send(self, phase: str, src: int, dst: int, tag: int, nbytes: int, overhead: int) -> None:
        with self._lock:
            self.header_bytes += overhead
            if tag in tags.CONTROL_TAGS:
                self.control_bytes += nbytes
                return
            self.bytes[(phase, src, dst)] += nbytes
            self.messages[(phase, src, dst)] += 1
            self.log.append(MessageRecord(phase, src, dst, tag, nbytes))

    def record_round(self, phase: str) -> None:
        with self._lock:
            self.rounds[phase] += 1

    def snapshot(self) -> CommStats:
        with self._lock:
            return CommStats(
                Counter(self.bytes), Counter(self.messages), Counter(self.rounds),
                self.header_bytes, self.control_bytes, list(self.log),
            )

    # -- aggregate views ----------------------------------------------------
    def phase_bytes(self, phase: str) -> int:
        return sum(v for (p, _, _), v in self.bytes.items() if p == phase)

    def phase_messages(self, phase: str) -> int:
        return sum(v for (p, _, _), v in self.messages.items() if p == phase)

    def link_bytes(self, phase: str, src: int, dst: int) -> int:
        return self.bytes[(phase, src, dst)]

    def sent_by(self, phase: str, src: int) -> int:
        return sum(v for (p, s, _), v in self.bytes.items() if p == phase and s == src)

    @staticmethod
    def merge(parts) -> CommStats:
        """Combine the send-side views of the three parties into session totals.

        Every party runs the same round schedule, so rounds are taken from the
        maximum rather than summed.
        """
        out = CommStats()
        for s in parts:
            s = s.snapshot()
            out.bytes.update(s.bytes)
            out.messages.update(s.messages)
            out.header_bytes += s.header_bytes
            out.control_bytes += s.control_bytes
            out.log.extend(s.log)
            for ph, r in s.rounds.items():
                out.rounds[ph] = max(out.rounds[ph], r)
        return out

    def report_lines(self) -> list[str]:
        lines = []
        for ph in PHASES:
            lines.append(f"{ph}.bytes={self.phase_bytes(ph)}")
            lines.append(f"{ph}.messages={self.phase_messages(ph)}")
            lines.append(f"{ph}.rounds={self.rounds[ph]}")
            for a, b in LINKS:
                lines.append(f"{ph}.link.{a}->{b}={self.bytes[(ph, a, b)]}")
        lines.append(f"header_bytes={self.header_bytes}")
        lines.append(f"control_bytes={self.control_bytes}")
        return lines

    def to_report(self) -> str:
        return "\n".join(self.report_lines()) + "\n"

    @classmethod
    def from_report(cls, text: str) -> CommStats:
        out = cls()
        for line in text.splitlines():
            if "=" not in line:
                continue
            key, value = line.strip().split("=", 1)
            parts = key.split(".")
            if len(parts) == 3 and parts[1] == "link":
                a, b = parts[2].split("->")
                out.bytes[(parts[0], int(a), int(b))] = int(value)
            elif len(parts) == 2 and parts[1] == "rounds":
                out.rounds[parts[0]] = int(value)
            elif len(parts) == 2 and parts[1] == "messages":
                # per-link message counts are not reported; keep the total under a pseudo-link
                out.messages[(parts[0], -1, -1)] = int(value)
            elif key == "header_bytes":
                out.header_bytes = int(value)
            elif key == "control_bytes":
                out.control_bytes = int(value)
        return out

    def summary(self) -> dict:
        return {
            "offline_bytes": self.phase_bytes("offline"),
            "online_bytes": self.phase_bytes("online"),
            "offline_rounds": self.rounds["offline"],
            "online_rounds": self.rounds["online"],
        }
