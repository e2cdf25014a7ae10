"""Length-prefixed packets over stream sockets (2-byte big-endian length)."""

from __future__ import annotations

import socket

from .errors import FrameError

MAX_PACKET = 0xFFFF


def send_packet(sock: socket.socket, data: bytes) -> None:
    if len(data) > MAX_PACKET:
        raise FrameError(f"packet of {len(data)} bytes exceeds {MAX_PACKET}")
    sock.sendall(len(data).to_bytes(2, "big") + data)


def _recv_exact(sock: socket.socket, count: int) -> bytes:
    buf = bytearray()
    while len(buf) < count:
        chunk = sock.recv(count - len(buf))
        if not chunk:
            raise ConnectionError("peer closed the connection")
        buf += chunk
    return bytes(buf)


def recv_packet(sock: socket.socket) -> bytes:
    length = int.from_bytes(_recv_exact(sock, 2), "big")
    return _recv_exact(sock, length)


def parse_address(text: str, default_host: str = "127.0.0.1") -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        host, port = default_host, text
    try:
        return host or default_host, int(port)
    except ValueError:
        raise FrameError(f"invalid address {text!r}") from None
