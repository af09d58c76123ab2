"""Message types, bit-exact wire format, and the worker/server transports.

Every frame starts with a fixed 20-byte little-endian header:

    magic (u16) | version (u8) | variant (u8) | worker (u16) | key (u16)
    | iter (u64) | payload_len (u32)

followed by the variant's payload: raw little-endian float64 values for
full-precision pushes and weight replies, a serialized QuantizedPayload for
compressed pushes, nothing for pull requests and shutdown. Fields a variant
does not use are zero on the wire.

Two transports implement the same contract: an in-process queue pair (the
deterministic default) and length-prefixed frames over a TCP socket. Both
are reliable and FIFO per (sender, receiver) direction.
"""

from __future__ import annotations

import queue
import socket
import struct
from dataclasses import dataclass, field

import numpy as np

from .codec import QuantizedPayload

MAGIC = 0xCD5D
VERSION = 1

_HEADER = struct.Struct("<HBBHHQI")
HEADER_BYTES = _HEADER.size  # 20

VARIANT_PUSH_FULL = 1
VARIANT_PUSH_QUANTIZED = 2
VARIANT_PULL_REQUEST = 3
VARIANT_WEIGHTS = 4
VARIANT_SHUTDOWN = 5


class ProtocolError(ValueError):
    """Frame failed validation (bad magic, version, or variant)."""


class FramingError(ProtocolError):
    """Frame shorter than its declared size."""


class TransportTimeout(TimeoutError):
    """No message arrived within the receive timeout."""


class TransportClosed(ConnectionError):
    """Peer endpoint is gone."""


@dataclass(frozen=True)
class PushFull:
    worker: int
    iteration: int
    key: int
    values: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, PushFull)
            and (self.worker, self.iteration, self.key) == (other.worker, other.iteration, other.key)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True)
class PushQuantized:
    worker: int
    iteration: int
    key: int
    payload: QuantizedPayload

    def __eq__(self, other):
        return (
            isinstance(other, PushQuantized)
            and (self.worker, self.iteration, self.key) == (other.worker, other.iteration, other.key)
            and self.payload == other.payload
        )


@dataclass(frozen=True)
class PullRequest:
    worker: int
    iteration: int


@dataclass(frozen=True)
class Weights:
    iteration: int
    key: int
    values: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, Weights)
            and (self.iteration, self.key) == (other.iteration, other.key)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True)
class Shutdown:
    pass


Message = PushFull | PushQuantized | PullRequest | Weights | Shutdown


def encode_message(msg: Message) -> bytes:
    """Serialize a message to its frame bytes."""
    if isinstance(msg, PushFull):
        body = np.ascontiguousarray(msg.values, dtype="<f8").tobytes()
        head = (VARIANT_PUSH_FULL, msg.worker, msg.key, msg.iteration)
    elif isinstance(msg, PushQuantized):
        body = msg.payload.to_bytes()
        head = (VARIANT_PUSH_QUANTIZED, msg.worker, msg.key, msg.iteration)
    elif isinstance(msg, PullRequest):
        body = b""
        head = (VARIANT_PULL_REQUEST, msg.worker, 0, msg.iteration)
    elif isinstance(msg, Weights):
        body = np.ascontiguousarray(msg.values, dtype="<f8").tobytes()
        head = (VARIANT_WEIGHTS, 0, msg.key, msg.iteration)
    elif isinstance(msg, Shutdown):
        body = b""
        head = (VARIANT_SHUTDOWN, 0, 0, 0)
    else:
        raise ProtocolError(f"cannot encode {type(msg).__name__}")
    variant, worker, key, iteration = head
    try:
        header = _HEADER.pack(MAGIC, VERSION, variant, worker, key, iteration, len(body))
    except struct.error as exc:
        raise ProtocolError(f"field out of range for the wire format: {exc}") from exc
    return header + body


def decode_message(data: bytes) -> Message:
    """Parse frame bytes back into a message; exact inverse of encode_message."""
    if len(data) < HEADER_BYTES:
        raise FramingError(f"frame is {len(data)} bytes, header needs {HEADER_BYTES}")
    magic, version, variant, worker, key, iteration, payload_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic 0x{magic:04X}")
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version}")
    body = data[HEADER_BYTES:]
    if len(body) != payload_len:
        raise FramingError(f"declared payload {payload_len} bytes, got {len(body)}")
    if variant == VARIANT_PUSH_FULL:
        if payload_len % 8:
            raise FramingError("full-precision payload must be whole float64 values")
        values = np.frombuffer(body, dtype="<f8").astype(np.float64)
        return PushFull(worker, iteration, key, values)
    if variant == VARIANT_PUSH_QUANTIZED:
        return PushQuantized(worker, iteration, key, QuantizedPayload.from_bytes(body))
    if variant == VARIANT_PULL_REQUEST:
        return PullRequest(worker, iteration)
    if variant == VARIANT_WEIGHTS:
        if payload_len % 8:
            raise FramingError("weights payload must be whole float64 values")
        values = np.frombuffer(body, dtype="<f8").astype(np.float64)
        return Weights(iteration, key, values)
    if variant == VARIANT_SHUTDOWN:
        return Shutdown()
    raise ProtocolError(f"unknown variant tag {variant}")


class InProcessEndpoint:
    """One side of a reliable FIFO queue pair carrying Message objects."""

    def __init__(self, peer_id: str, send_q: "queue.SimpleQueue", recv_q: "queue.SimpleQueue"):
        self.peer_id = peer_id
        self._send_q = send_q
        self._recv_q = recv_q
        self._closed = False

    def send(self, msg: Message) -> None:
        if self._closed:
            raise TransportClosed(f"endpoint to {self.peer_id} is closed")
        self._send_q.put(msg)

    def recv(self, timeout: float | None = 0.0) -> Message:
        try:
            if timeout == 0.0:
                return self._recv_q.get_nowait()
            return self._recv_q.get(timeout=timeout)
        except queue.Empty:
            raise TransportTimeout(f"no message from {self.peer_id}") from None

    def close(self) -> None:
        self._closed = True


def in_process_pair(a: str = "a", b: str = "b") -> tuple[InProcessEndpoint, InProcessEndpoint]:
    """Connected endpoint pair; what one sends, the other receives, in order."""
    a_to_b: queue.SimpleQueue = queue.SimpleQueue()
    b_to_a: queue.SimpleQueue = queue.SimpleQueue()
    return (
        InProcessEndpoint(peer_id=b, send_q=a_to_b, recv_q=b_to_a),
        InProcessEndpoint(peer_id=a, send_q=b_to_a, recv_q=a_to_b),
    )


_FRAME_LEN = struct.Struct("<I")
MAX_FRAME_BYTES = 1 << 30


class SocketEndpoint:
    """Length-prefixed message frames over a connected stream socket."""

    def __init__(self, sock: socket.socket, peer_id: str = "?"):
        self._sock = sock
        self.peer_id = peer_id
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def send(self, msg: Message) -> None:
        frame = encode_message(msg)
        try:
            self._sock.sendall(_FRAME_LEN.pack(len(frame)) + frame)
        except OSError as exc:
            raise TransportClosed(f"send to {self.peer_id} failed: {exc}") from exc

    def _read_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining:
            try:
                chunk = self._sock.recv(remaining)
            except socket.timeout:
                raise TransportTimeout(f"no message from {self.peer_id}") from None
            except OSError as exc:
                raise TransportClosed(f"recv from {self.peer_id} failed: {exc}") from exc
            if not chunk:
                raise TransportClosed(f"{self.peer_id} closed the connection")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def recv(self, timeout: float | None = None) -> Message:
        self._sock.settimeout(timeout)
        (length,) = _FRAME_LEN.unpack(self._read_exact(4))
        if length > MAX_FRAME_BYTES:
            raise FramingError(f"frame of {length} bytes exceeds the transport limit")
        return decode_message(self._read_exact(length))

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


@dataclass
class SocketListener:
    """Listening TCP socket that hands out SocketEndpoints per connection."""

    host: str = "127.0.0.1"
    port: int = 0
    _sock: socket.socket = field(init=False)

    def __post_init__(self):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((self.host, self.port))
        self._sock.listen()
        self.port = self._sock.getsockname()[1]

    @property
    def address(self) -> tuple[str, int]:
        return (self.host, self.port)

    def accept(self, timeout: float | None = None) -> SocketEndpoint:
        self._sock.settimeout(timeout)
        try:
            conn, addr = self._sock.accept()
        except socket.timeout:
            raise TransportTimeout("no incoming connection") from None
        return SocketEndpoint(conn, peer_id=f"{addr[0]}:{addr[1]}")

    def close(self) -> None:
        self._sock.close()


def connect(host: str, port: int, timeout: float = 30.0) -> SocketEndpoint:
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(None)
    return SocketEndpoint(sock, peer_id=f"{host}:{port}")
