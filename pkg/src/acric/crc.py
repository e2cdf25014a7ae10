"""Parametric CRC engine.

Every parametrization knob (width, generator polynomial, input/output
reflection, final XOR) lives in :class:`CrcParams`.  The initial register
value is deliberately *not* part of the parameters: ACRIC works by
substituting a secret IV, so the IV is always an explicit argument.

IV convention: the IV is expressed in output orientation, i.e. it is the
value a zero-length message yields before the final XOR.  For the common
case ``reflect_input == reflect_output`` this coincides with the usual
register initial value.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

import numpy as np

from .errors import ParameterError

MAX_WIDTH = 64


@dataclass(frozen=True)
class CrcParams:
    width_bits: int
    polynomial: int
    reflect_input: bool = False
    reflect_output: bool = False
    final_xor: int = 0
    name: str = ""

    def __post_init__(self):
        if not 1 <= self.width_bits <= MAX_WIDTH:
            raise ParameterError(f"width_bits must be in 1..{MAX_WIDTH}, got {self.width_bits}")
        if not 0 <= self.polynomial <= self.mask:
            raise ParameterError(f"polynomial 0x{self.polynomial:x} does not fit {self.width_bits} bits")
        if not 0 <= self.final_xor <= self.mask:
            raise ParameterError(f"final_xor 0x{self.final_xor:x} does not fit {self.width_bits} bits")

    @property
    def mask(self) -> int:
        return (1 << self.width_bits) - 1


@dataclass(frozen=True)
class CrcIv:
    value: int
    width_bits: int

    def __post_init__(self):
        if not 0 <= self.value < (1 << self.width_bits):
            raise ParameterError(f"IV 0x{self.value:x} does not fit {self.width_bits} bits")


@dataclass(frozen=True)
class CatalogEntry:
    params: CrcParams
    default_iv: int
    check: int  # CRC of b"123456789" under default_iv


def _entry(name, width, poly, refin, refout, xorout, init, check):
    return CatalogEntry(CrcParams(width, poly, refin, refout, xorout, name), init, check)


CATALOG: dict[str, CatalogEntry] = {
    e.params.name: e
    for e in (
        _entry("CRC-8/SMBUS", 8, 0x07, False, False, 0x00, 0x00, 0xF4),
        _entry("CRC-8/MAXIM-DOW", 8, 0x31, True, True, 0x00, 0x00, 0xA1),
        _entry("CRC-16/MODBUS", 16, 0x8005, True, True, 0x0000, 0xFFFF, 0x4B37),
        _entry("CRC-16/ARC", 16, 0x8005, True, True, 0x0000, 0x0000, 0xBB3D),
        _entry("CRC-16/XMODEM", 16, 0x1021, False, False, 0x0000, 0x0000, 0x31C3),
        _entry("CRC-16/IBM-3740", 16, 0x1021, False, False, 0x0000, 0xFFFF, 0x29B1),
        _entry("CRC-32/ISO-HDLC", 32, 0x04C11DB7, True, True, 0xFFFFFFFF, 0xFFFFFFFF, 0xCBF43926),
        _entry("CRC-32/ISCSI", 32, 0x1EDC6F41, True, True, 0xFFFFFFFF, 0xFFFFFFFF, 0xE3069283),
        _entry("CRC-64/XZ", 64, 0x42F0E1EBA9EA3693, True, True,
               0xFFFFFFFFFFFFFFFF, 0xFFFFFFFFFFFFFFFF, 0x995DC9BBDF1939FA),
    )
}

# Default parametrization per width for experiments that only name a width.
BY_WIDTH = {8: "CRC-8/SMBUS", 16: "CRC-16/MODBUS", 32: "CRC-32/ISO-HDLC", 64: "CRC-64/XZ"}


def catalog_entry(name: str) -> CatalogEntry:
    """Look up a named parametrization with its default IV (case-insensitive)."""
    for key, entry in CATALOG.items():
        if key.lower() == name.lower():
            return entry
    raise ParameterError(f"unknown CRC {name!r}; choose one of {sorted(CATALOG)}")


def catalog_params(name: str) -> CrcParams:
    return catalog_entry(name).params


def params_for_width(width: int) -> CrcParams:
    try:
        return CATALOG[BY_WIDTH[width]].params
    except KeyError:
        raise ParameterError(f"no catalog CRC of width {width}") from None


def reflect(value: int, width: int) -> int:
    out = 0
    for _ in range(width):
        out = (out << 1) | (value & 1)
        value >>= 1
    return out


def _iv_value(params: CrcParams, iv) -> int:
    if isinstance(iv, CrcIv):
        if iv.width_bits != params.width_bits:
            raise ParameterError(
                f"IV width {iv.width_bits} does not match CRC width {params.width_bits}")
        return iv.value
    iv = int(iv)
    if not 0 <= iv <= params.mask:
        raise ParameterError(f"IV 0x{iv:x} does not fit {params.width_bits} bits")
    return iv


def crc_bitwise(params: CrcParams, iv, message: bytes) -> int:
    """Reference implementation: one shift-register step per message bit."""
    w = params.width_bits
    top = 1 << (w - 1)
    mask = params.mask
    reg = _iv_value(params, iv)
    if params.reflect_output:
        reg = reflect(reg, w)
    for byte in message:
        for k in range(8):
            bit = (byte >> k) & 1 if params.reflect_input else (byte >> (7 - k)) & 1
            feedback = bool(reg & top) ^ bit
            reg = (reg << 1) & mask
            if feedback:
                reg ^= params.polynomial
    if params.reflect_output:
        reg = reflect(reg, w)
    return reg ^ params.final_xor


def _fill_linear(table: list[int]) -> list[int]:
    # Zero-register table entries are linear in the index byte.
    for i in range(1, 256):
        low = i & -i
        if i != low:
            table[i] = table[low] ^ table[i ^ low]
    return table


@lru_cache(maxsize=4096)
def crc_table_build(params: CrcParams) -> tuple[int, ...]:
    """256-entry lookup table for the byte-at-a-time path.

    Reflected-input parametrizations get a table for the bit-reversed
    register; otherwise the table is for a register left-aligned to at
    least 8 bits.
    """
    w = params.width_bits
    table = [0] * 256
    if params.reflect_input:
        rpoly = reflect(params.polynomial, w)
        for k in range(8):
            v = 1 << k
            for _ in range(8):
                v = (v >> 1) ^ rpoly if v & 1 else v >> 1
            table[1 << k] = v
    else:
        shift = max(0, 8 - w)
        wide = w + shift
        top = 1 << (wide - 1)
        mask = (1 << wide) - 1
        poly = params.polynomial << shift
        for k in range(8):
            v = (1 << k) << (wide - 8)
            for _ in range(8):
                v = ((v << 1) ^ poly) & mask if v & top else (v << 1) & mask
            table[1 << k] = v
    return tuple(_fill_linear(table))


def crc_compute(params: CrcParams, iv, message: bytes) -> int:
    """CRC of ``message`` under ``params`` starting from ``iv`` (table-driven)."""
    w = params.width_bits
    reg = _iv_value(params, iv)
    table = crc_table_build(params)
    swap = params.reflect_input != params.reflect_output
    if swap:
        reg = reflect(reg, w)
    if params.reflect_input:
        for byte in message:
            reg = (reg >> 8) ^ table[(reg ^ byte) & 0xFF]
    else:
        shift = max(0, 8 - w)
        wide = w + shift
        down = wide - 8
        mask = (1 << wide) - 1
        reg <<= shift
        for byte in message:
            reg = ((reg << 8) & mask) ^ table[((reg >> down) ^ byte) & 0xFF]
        reg >>= shift
    if swap:
        reg = reflect(reg, w)
    return reg ^ params.final_xor


def _reflect_array(values: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros_like(values)
    v = values.copy()
    for _ in range(width):
        out = (out << np.uint64(1)) | (v & np.uint64(1))
        v >>= np.uint64(1)
    return out


def crc_batch(params: CrcParams, ivs, messages: np.ndarray) -> np.ndarray:
    """Vectorised :func:`crc_compute` over many equal-length messages.

    ``messages`` is a ``(count, length)`` uint8 array; ``ivs`` is a scalar or
    a length-``count`` array.  Returns a uint64 array of CRCs.
    """
    messages = np.asarray(messages, dtype=np.uint8)
    if messages.ndim != 2:
        raise ParameterError("messages must be a 2-D (count, length) array")
    w = params.width_bits
    count = messages.shape[0]
    reg = np.broadcast_to(np.asarray(ivs, dtype=np.uint64), (count,)).copy()
    if np.any(reg > np.uint64(params.mask)):
        raise ParameterError(f"IV does not fit {w} bits")
    table = np.array(crc_table_build(params), dtype=np.uint64)
    swap = params.reflect_input != params.reflect_output
    if swap:
        reg = _reflect_array(reg, w)
    cols = messages.astype(np.uint64)
    ff = np.uint64(0xFF)
    if params.reflect_input:
        eight = np.uint64(8)
        for j in range(messages.shape[1]):
            reg = (reg >> eight) ^ table[((reg ^ cols[:, j]) & ff).astype(np.intp)]
    else:
        shift = max(0, 8 - w)
        wide = w + shift
        mask = np.uint64((1 << wide) - 1)
        down = np.uint64(wide - 8)
        reg <<= np.uint64(shift)
        for j in range(messages.shape[1]):
            idx = ((reg >> down) ^ cols[:, j]) & ff
            # uint64 << 8 wraps for width 64, which is the masking we want
            reg = ((reg << np.uint64(8)) & mask) ^ table[idx.astype(np.intp)]
        reg >>= np.uint64(shift)
    if swap:
        reg = _reflect_array(reg, w)
    return reg ^ np.uint64(params.final_xor)


def single_bit_flips(message: bytes) -> Iterable[bytes]:
    buf = bytearray(message)
    for i in range(len(buf) * 8):
        buf[i // 8] ^= 1 << (i % 8)
        yield bytes(buf)
        buf[i // 8] ^= 1 << (i % 8)
