"""Ternary 2-bit gradient codec with residual error feedback.

Each gradient element is folded into its accumulated residual and emitted as
one of three symbols: zero, +threshold, or -threshold. Whatever was not
emitted stays in the residual, so over time nothing is lost: the sum of all
decoded emissions plus the remaining residual equals the sum of the raw
gradients, coordinate by coordinate.

Bit layout is fixed so payloads are bit-exact across implementations:
symbol j occupies bits 2*(j mod 16)..2*(j mod 16)+1 of 32-bit word j//16,
words in little-endian order. Code 00 is zero, 01 is +threshold, 10 is
-threshold, 11 is invalid.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

SYM_ZERO = 0
SYM_PLUS = 1
SYM_MINUS = 2
SYMBOLS_PER_WORD = 16

# Serialized payload header: codec tag (u8), threshold (f64 le), length (u32 le).
CODEC_TAG = 0x02
_HEADER = struct.Struct("<BdI")
PAYLOAD_HEADER_BYTES = _HEADER.size  # 13


class CorruptPayloadError(ValueError):
    """Payload failed validation (reserved symbol, bad tag, bad sizes)."""


class CodecError(ValueError):
    """Invalid codec arguments."""


class CodecNumericError(ArithmeticError):
    """Non-finite value fed into the quantizer; carries the element index."""

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


def _words_needed(n_elements: int) -> int:
    return (n_elements + SYMBOLS_PER_WORD - 1) // SYMBOLS_PER_WORD


def payload_bytes(n_elements: int) -> int:
    """Packed-code size in bytes: 4 * ceil(n/16)."""
    if n_elements < 0:
        raise CodecError("element count must be >= 0")
    return 4 * _words_needed(n_elements)


def compression_ratio(n_elements: int) -> float:
    """Packed size vs a 4-byte-per-element uncompressed baseline."""
    if n_elements == 0:
        return 1.0
    return (4.0 * n_elements) / payload_bytes(n_elements)


def serialized_payload_bytes(n_elements: int) -> int:
    """On-the-wire payload size: 13-byte header plus the packed words."""
    return PAYLOAD_HEADER_BYTES + payload_bytes(n_elements)


@dataclass
class QuantizedPayload:
    """Packed 2-bit symbols with their threshold and element count."""

    words: np.ndarray
    threshold: float
    length: int

    def __post_init__(self):
        self.words = np.ascontiguousarray(self.words, dtype=np.uint32)
        if self.threshold <= 0:
            raise CorruptPayloadError("threshold must be > 0")
        if self.length < 0 or self.words.shape[0] != _words_needed(self.length):
            raise CorruptPayloadError(
                f"expected {_words_needed(self.length)} words for {self.length} elements, "
                f"got {self.words.shape[0]}"
            )

    def to_bytes(self) -> bytes:
        return _HEADER.pack(CODEC_TAG, self.threshold, self.length) + self.words.astype(
            "<u4"
        ).tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "QuantizedPayload":
        if len(data) < PAYLOAD_HEADER_BYTES:
            raise CorruptPayloadError("payload shorter than its header")
        tag, threshold, length = _HEADER.unpack_from(data)
        if tag != CODEC_TAG:
            raise CorruptPayloadError(f"unknown codec tag 0x{tag:02X}")
        body = data[PAYLOAD_HEADER_BYTES:]
        if len(body) != 4 * _words_needed(length):
            raise CorruptPayloadError(
                f"payload body is {len(body)} bytes, expected {4 * _words_needed(length)}"
            )
        words = np.frombuffer(body, dtype="<u4").astype(np.uint32)
        return cls(words, threshold, length)

    @property
    def nbytes(self) -> int:
        return serialized_payload_bytes(self.length)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, QuantizedPayload)
            and self.threshold == other.threshold
            and self.length == other.length
            and np.array_equal(self.words, other.words)
        )


@dataclass
class ResidualState:
    """Per-(worker, key) accumulator of not-yet-emitted gradient mass."""

    residual: np.ndarray
    owner: tuple[int, int] = (0, 0)

    def __post_init__(self):
        self.residual = np.ascontiguousarray(self.residual, dtype=np.float64)
        if self.residual.ndim != 1:
            raise CodecError("residual must be a 1-D vector")

    @classmethod
    def zeros(cls, length: int, owner: tuple[int, int] = (0, 0)) -> "ResidualState":
        return cls(np.zeros(length), owner)


def pack_symbols(symbols: np.ndarray) -> np.ndarray:
    """Pack ternary symbols into uint32 words, 16 two-bit codes per word."""
    symbols = np.asarray(symbols, dtype=np.uint32)
    if symbols.size and symbols.max() > SYM_MINUS:
        raise CorruptPayloadError("symbols must be in {0, 1, 2}")
    n = symbols.shape[0]
    n_words = _words_needed(n)
    padded = np.zeros(n_words * SYMBOLS_PER_WORD, dtype=np.uint32)
    padded[:n] = symbols
    shifts = (2 * np.arange(SYMBOLS_PER_WORD, dtype=np.uint32))[None, :]
    lanes = padded.reshape(n_words, SYMBOLS_PER_WORD) << shifts
    return np.bitwise_or.reduce(lanes, axis=1).astype(np.uint32)


def unpack_symbols(words: np.ndarray, length: int) -> np.ndarray:
    """Exact inverse of pack_symbols for the first `length` symbols."""
    words = np.asarray(words, dtype=np.uint32)
    if length < 0 or length > words.shape[0] * SYMBOLS_PER_WORD:
        raise CodecError(f"{length} symbols do not fit in {words.shape[0]} words")
    shifts = (2 * np.arange(SYMBOLS_PER_WORD, dtype=np.uint32))[None, :]
    lanes = (words[:, None] >> shifts) & np.uint32(3)
    return lanes.reshape(-1)[:length].astype(np.uint8)


def quantize(
    residual: ResidualState, grad: np.ndarray, alpha: float
) -> tuple[QuantizedPayload, ResidualState]:
    """Threshold-quantize residual + grad; the leftover stays in the residual.

    Per element, with a = r + g: emit +alpha when a >= alpha, -alpha when
    a <= -alpha, zero otherwise; the new residual is a minus the emitted
    value. Ties at exactly |a| == alpha emit the nonzero symbol. The passed
    ResidualState is updated in place and returned alongside the payload.
    """
    if alpha <= 0:
        raise CodecError("threshold alpha must be > 0")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != residual.residual.shape:
        raise CodecError(
            f"gradient length {grad.shape} does not match residual {residual.residual.shape}"
        )
    acc = residual.residual + grad
    finite = np.isfinite(acc)
    if not finite.all():
        bad = int(np.argmin(finite))
        raise CodecNumericError(f"non-finite accumulated gradient at element {bad}", bad)
    plus = acc >= alpha
    minus = acc <= -alpha
    symbols = np.zeros(acc.shape[0], dtype=np.uint8)
    symbols[plus] = SYM_PLUS
    symbols[minus] = SYM_MINUS
    emitted = np.where(plus, alpha, 0.0) + np.where(minus, -alpha, 0.0)
    residual.residual[:] = acc - emitted
    payload = QuantizedPayload(pack_symbols(symbols), float(alpha), acc.shape[0])
    return payload, residual


def dequantize(payload: QuantizedPayload) -> np.ndarray:
    """Decode a payload back to float64 values in {-threshold, 0, +threshold}."""
    symbols = unpack_symbols(payload.words, payload.length)
    if (symbols > SYM_MINUS).any():
        bad = int(np.argmax(symbols > SYM_MINUS))
        raise CorruptPayloadError(f"reserved symbol 11 at element {bad}")
    out = np.zeros(payload.length, dtype=np.float64)
    out[symbols == SYM_PLUS] = payload.threshold
    out[symbols == SYM_MINUS] = -payload.threshold
    return out
