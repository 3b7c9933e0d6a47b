"""Two-party message channel with framing and byte/round accounting.

Frames are `length u32 | msg_type u16 | session_id u16 | payload`.  Every
endpoint keeps monotone counters (messages, bytes, per-type bytes,
rounds, virtual time) plus a running digest of its sent byte stream, so
a protocol run can be audited against the analytical cost model and
compared byte-for-byte between loopback and TCP modes.

The virtual clock charges T_bc + payload_bits / Rt_bw per message; it is
what the model-validation tests assert against, wall-clock is never
used for correctness.
"""

from __future__ import annotations

import hashlib
import os
import queue
import socket
import struct
import threading
from dataclasses import dataclass, field
from enum import IntEnum


class ProtocolAbort(RuntimeError):
    """Channel failure or protocol-level violation; maps to exit code 2."""


class MsgType(IntEnum):
    SETUP = 1
    INPUT_SHARE = 2
    WEIGHT_SHARE = 3
    OUTPUT_SHARE = 4
    MUL_OPEN = 10
    SQ_OPEN = 11
    TRUNC_OPEN = 12
    CMP_STEP1 = 20
    CMP_STEP2 = 21
    CMP_STEP3 = 22
    CMP_STEP4 = 23
    CMP_COMBINE = 24


#: message types that belong to the OT comparison flow proper (steps 1-4)
OT_FLOW_TYPES = (MsgType.CMP_STEP1, MsgType.CMP_STEP2, MsgType.CMP_STEP3, MsgType.CMP_STEP4)

_HEADER = struct.Struct("<IHH")
HEADER_BYTES = _HEADER.size


@dataclass(frozen=True)
class SimParams:
    """Simulated link: per-message base latency and bandwidth."""

    t_bc: float = 50e-6
    rt_bw: float = 8e9

    @classmethod
    def from_env(cls, t_bc: float = 50e-6, rt_bw: float = 8e9) -> "SimParams":
        return cls(
            t_bc=float(os.environ.get("SECNN_T_BC", t_bc)),
            rt_bw=float(os.environ.get("SECNN_RT_BW", rt_bw)),
        )


@dataclass
class Counters:
    messages_sent: int = 0
    bytes_sent: int = 0
    n_exchanges: int = 0
    n_oneway_sent: int = 0
    n_oneway_recv: int = 0
    virtual_time: float = 0.0
    bytes_by_type: dict = field(default_factory=dict)
    msgs_by_type: dict = field(default_factory=dict)

    @property
    def rounds(self) -> int:
        """Pair-level round count as seen from this endpoint.

        Each one-way message is a round (the peer blocks on it); a
        simultaneous exchange counts once.
        """
        return self.n_exchanges + self.n_oneway_sent + self.n_oneway_recv


class Channel:
    """Base endpoint; subclasses provide the raw frame transport."""

    def __init__(self, sim: SimParams | None = None, session_id: int = 0, initiator: bool = False):
        self.sim = sim or SimParams()
        self.session_id = session_id
        self.initiator = initiator
        self.counters = Counters()
        self._digest = hashlib.sha256()

    # raw transport hooks
    def _put(self, frame: bytes) -> None:
        raise NotImplementedError

    def _get(self) -> bytes:
        raise NotImplementedError

    def _record_send(self, msg_type: MsgType, payload: bytes) -> None:
        c = self.counters
        c.messages_sent += 1
        c.bytes_sent += HEADER_BYTES + len(payload)
        c.bytes_by_type[int(msg_type)] = (
            c.bytes_by_type.get(int(msg_type), 0) + HEADER_BYTES + len(payload)
        )
        c.msgs_by_type[int(msg_type)] = c.msgs_by_type.get(int(msg_type), 0) + 1
        c.virtual_time += self.sim.t_bc + 8 * len(payload) / self.sim.rt_bw

    def _send_frame(self, msg_type: MsgType, payload: bytes) -> None:
        frame = _HEADER.pack(len(payload), int(msg_type), self.session_id) + payload
        self._digest.update(frame)
        self._record_send(msg_type, payload)
        self._put(frame)

    def _recv_frame(self, expected: MsgType) -> bytes:
        frame = self._get()
        length, msg_type, session = _HEADER.unpack_from(frame)
        payload = frame[HEADER_BYTES:]
        if length != len(payload):
            raise ProtocolAbort(f"frame length mismatch: header {length}, got {len(payload)}")
        if msg_type != int(expected):
            raise ProtocolAbort(f"expected msg_type {expected!r}, got {msg_type}")
        if session != self.session_id:
            raise ProtocolAbort(f"session id mismatch: {session} != {self.session_id}")
        return payload

    # protocol-facing API
    def send(self, msg_type: MsgType, payload: bytes) -> None:
        self.counters.n_oneway_sent += 1
        self._send_frame(msg_type, payload)

    def recv(self, expected: MsgType) -> bytes:
        self.counters.n_oneway_recv += 1
        return self._recv_frame(expected)

    def exchange(self, msg_type: MsgType, payload: bytes) -> bytes:
        """Send our half and receive the peer's; one communication round.

        The initiator sends first; the responder receives first.  The
        ordering only serializes the underlying transport, the byte
        streams are identical either way.
        """
        self.counters.n_exchanges += 1
        if self.initiator:
            self._send_frame(msg_type, payload)
            return self._recv_frame(msg_type)
        peer = self._recv_frame(msg_type)
        self._send_frame(msg_type, payload)
        return peer

    def sent_digest(self) -> str:
        return self._digest.hexdigest()

    def close(self) -> None:
        pass


class LoopbackChannel(Channel):
    def __init__(self, sim, session_id, initiator, outbox: queue.Queue, inbox: queue.Queue):
        super().__init__(sim, session_id, initiator)
        self._outbox = outbox
        self._inbox = inbox

    def _put(self, frame: bytes) -> None:
        self._outbox.put(frame)

    def _get(self) -> bytes:
        frame = self._inbox.get(timeout=120)
        if frame is None:
            raise ProtocolAbort("peer closed channel")
        return frame


def loopback_pair(sim: SimParams | None = None, session_id: int = 0) -> tuple[Channel, Channel]:
    a, b = queue.Queue(), queue.Queue()
    return (
        LoopbackChannel(sim, session_id, True, a, b),
        LoopbackChannel(sim, session_id, False, b, a),
    )


class TcpChannel(Channel):
    def __init__(self, sock: socket.socket, sim=None, session_id=0, initiator=False):
        super().__init__(sim, session_id, initiator)
        self._sock = sock
        self._buf = b""

    @classmethod
    def listen(cls, host: str, port: int, sim=None, session_id=0) -> "TcpChannel":
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((host, port))
        srv.listen(1)
        conn, _ = srv.accept()
        srv.close()
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return cls(conn, sim, session_id, initiator=True)

    @classmethod
    def connect(cls, host: str, port: int, sim=None, session_id=0, retries: int = 50) -> "TcpChannel":
        last = None
        for _ in range(retries):
            try:
                sock = socket.create_connection((host, port), timeout=10)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                return cls(sock, sim, session_id, initiator=False)
            except OSError as exc:  # server may not be up yet
                last = exc
                import time

                time.sleep(0.1)
        raise ProtocolAbort(f"could not connect to {host}:{port}: {last}")

    def _put(self, frame: bytes) -> None:
        try:
            self._sock.sendall(frame)
        except OSError as exc:
            raise ProtocolAbort(f"send failed: {exc}") from exc

    def _read_exact(self, n: int) -> bytes:
        while len(self._buf) < n:
            try:
                chunk = self._sock.recv(min(1 << 20, max(4096, n - len(self._buf))))
            except OSError as exc:
                raise ProtocolAbort(f"recv failed: {exc}") from exc
            if not chunk:
                raise ProtocolAbort("peer disconnected")
            self._buf += chunk
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def _get(self) -> bytes:
        head = self._read_exact(HEADER_BYTES)
        (length,) = struct.unpack_from("<I", head)
        return head + self._read_exact(length)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


def transcript_report(ch: Channel) -> dict:
    """Snapshot of one endpoint's counters."""
    c = ch.counters
    return {
        "messages": c.messages_sent,
        "bytes": c.bytes_sent,
        "rounds": c.rounds,
        "virtual_time": c.virtual_time,
        "bytes_by_type": dict(c.bytes_by_type),
        "sent_digest": ch.sent_digest(),
    }


def combined_report(ch0: Channel, ch1: Channel) -> dict:
    """Pair view: totals over both directions."""
    r0, r1 = transcript_report(ch0), transcript_report(ch1)
    by_type = dict(r0["bytes_by_type"])
    for k, v in r1["bytes_by_type"].items():
        by_type[k] = by_type.get(k, 0) + v
    return {
        "messages": r0["messages"] + r1["messages"],
        "bytes": r0["bytes"] + r1["bytes"],
        "rounds": r0["rounds"],  # symmetric between endpoints
        "virtual_time": r0["virtual_time"] + r1["virtual_time"],
        "bytes_by_type": by_type,
        "sent_digests": [r0["sent_digest"], r1["sent_digest"]],
    }


def run_pair(f0, f1, sim: SimParams | None = None):
    """Run two party functions over a loopback pair in two threads.

    Each function receives its Channel endpoint; returns their results
    and the pair of channels for transcript inspection.
    """
    ch0, ch1 = loopback_pair(sim)
    results: list = [None, None]
    errors: list = [None, None]

    def wrap(idx, fn, ch):
        try:
            results[idx] = fn(ch)
        except BaseException as exc:  # re-raised in caller
            errors[idx] = exc
            # unblock the peer if it is waiting
            (ch._outbox if isinstance(ch, LoopbackChannel) else None) and ch._outbox.put(None)

    t0 = threading.Thread(target=wrap, args=(0, f0, ch0))
    t1 = threading.Thread(target=wrap, args=(1, f1, ch1))
    t0.start(), t1.start()
    t0.join(), t1.join()
    for err in errors:
        if err is not None:
            raise err
    return results[0], results[1], ch0, ch1
