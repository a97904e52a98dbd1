"""Framed wire protocol used on every connection (client or inter-server).

Frame: 4-byte magic ``OCT1``, 1-byte message type, 4-byte big-endian
payload length, payload. The same framing runs over TCP sockets and over
the in-memory duplex channels the tests and benchmarks use.
"""

from __future__ import annotations

import queue
import socket
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Tuple

MAGIC = b"OCT1"
HEADER_LEN = 9
MAX_PAYLOAD = 1 << 28


class WireError(Exception):
    pass


class ChannelClosed(WireError):
    pass


class MsgType(IntEnum):
    QUERY_ENVELOPE = 0x01
    SHARE_RESPONSE = 0x02
    REJECT = 0x03
    # inter-server 2PC rounds
    GC_INSTANCE = 0x10  # garbled tables + decode bits
    GC_GARBLER_INPUTS = 0x11
    OT_ROUND = 0x12  # batched OT traffic (setup/choice/transfer/derand)
    GC_OUTPUT_RETURN = 0x13
    PADDED_STATE = 0x14
    MASK_REVEAL = 0x15
    BATCH_COMMIT = 0x16
    POOL_FILL = 0x17
    HANDSHAKE = 0x18
    SESSION_ABORT = 0x19
    BATCH_EPOCH_SYNC = 0x20


@dataclass(frozen=True)
class Frame:
    msg_type: int
    payload: bytes

    def encode(self) -> bytes:
        if len(self.payload) > MAX_PAYLOAD:
            raise WireError("payload too large")
        return MAGIC + struct.pack(">BI", self.msg_type, len(self.payload)) + self.payload


def decode_header(header: bytes) -> Tuple[int, int]:
    if len(header) != HEADER_LEN:
        raise WireError("short header")
    if header[:4] != MAGIC:
        raise WireError("bad magic")
    msg_type, length = struct.unpack(">BI", header[4:])
    if length > MAX_PAYLOAD:
        raise WireError("oversized frame")
    return msg_type, length


class FramedChannel:
    """Duplex frame transport. Subclasses supply raw byte I/O."""

    def send(self, msg_type: int, payload: bytes = b"") -> None:
        self._write(Frame(msg_type, payload).encode())

    def recv(self, timeout: Optional[float] = None) -> Frame:
        header = self._read(HEADER_LEN, timeout)
        msg_type, length = decode_header(header)
        payload = self._read(length, timeout) if length else b""
        return Frame(msg_type, payload)

    def expect(self, msg_type: int, timeout: Optional[float] = None) -> bytes:
        frame = self.recv(timeout)
        if frame.msg_type != msg_type:
            if frame.msg_type == MsgType.SESSION_ABORT:
                raise WireError(f"peer aborted: {frame.payload[:200]!r}")
            raise WireError(f"expected message type {msg_type:#x}, got {frame.msg_type:#x}")
        return frame.payload

    def close(self) -> None:
        raise NotImplementedError

    def _write(self, data: bytes) -> None:
        raise NotImplementedError

    def _read(self, n: int, timeout: Optional[float]) -> bytes:
        raise NotImplementedError


class MemoryChannel(FramedChannel):
    """One endpoint of an in-process duplex byte stream."""

    def __init__(self, rx: "queue.Queue", tx: "queue.Queue"):
        self._rx = rx
        self._tx = tx
        self._buf = bytearray()
        self._closed = False

    def _write(self, data: bytes) -> None:
        if self._closed:
            raise ChannelClosed("channel closed")
        self._tx.put(bytes(data))

    def _read(self, n: int, timeout: Optional[float]) -> bytes:
        while len(self._buf) < n:
            try:
                chunk = self._rx.get(timeout=timeout)
            except queue.Empty:
                raise WireError("recv timeout") from None
            if chunk is None:
                raise ChannelClosed("peer closed")
            self._buf += chunk
        out = bytes(self._buf[:n])
        del self._buf[:n]
        return out

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._tx.put(None)


def channel_pair() -> Tuple[MemoryChannel, MemoryChannel]:
    a_to_b: "queue.Queue" = queue.Queue()
    b_to_a: "queue.Queue" = queue.Queue()
    return MemoryChannel(b_to_a, a_to_b), MemoryChannel(a_to_b, b_to_a)


class SocketChannel(FramedChannel):
    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def _write(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as e:
            raise ChannelClosed(str(e)) from None

    def _read(self, n: int, timeout: Optional[float]) -> bytes:
        self._sock.settimeout(timeout)
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self._sock.recv(min(1 << 20, n - len(buf)))
            except socket.timeout:
                raise WireError("recv timeout") from None
            except OSError as e:
                raise ChannelClosed(str(e)) from None
            if not chunk:
                raise ChannelClosed("peer closed")
            buf += chunk
        return bytes(buf)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def connect(host: str, port: int, timeout: float = 5.0) -> SocketChannel:
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(None)
    return SocketChannel(sock)
