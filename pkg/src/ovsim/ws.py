"""Minimal RFC 6455 WebSocket framing over blocking sockets.

Covers exactly what the bridge needs: the HTTP upgrade handshake,
single-fragment text frames, close, and ping/pong. Server-to-client frames
are unmasked, client-to-server frames masked, per the RFC. All reads go
through a buffered connection so bytes that arrive in the same TCP chunk as
the handshake are not lost.
"""

from __future__ import annotations

import base64
import hashlib
import os
import socket

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

OP_TEXT = 0x1
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA


class WsClosed(ConnectionError):
    """Peer closed the connection."""


def accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def encode_frame(payload: bytes, opcode: int = OP_TEXT, mask: bool = False) -> bytes:
    header = bytearray([0x80 | opcode])
    n = len(payload)
    mask_bit = 0x80 if mask else 0
    if n < 126:
        header.append(mask_bit | n)
    elif n < 1 << 16:
        header.append(mask_bit | 126)
        header += n.to_bytes(2, "big")
    else:
        header.append(mask_bit | 127)
        header += n.to_bytes(8, "big")
    if mask:
        mask_key = os.urandom(4)
        header += mask_key
        payload = bytes(b ^ mask_key[i % 4] for i, b in enumerate(payload))
    return bytes(header) + payload


class WsConn:
    """One WebSocket endpoint over a connected TCP socket."""

    def __init__(self, sock: socket.socket, mask_outgoing: bool):
        self.sock = sock
        self.mask_outgoing = mask_outgoing
        self._buf = b""

    # ---- buffered byte access ----

    def _fill(self) -> None:
        chunk = self.sock.recv(4096)
        if not chunk:
            raise WsClosed("socket closed")
        self._buf += chunk

    def _recv_exact(self, n: int) -> bytes:
        while len(self._buf) < n:
            self._fill()
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def _recv_until(self, marker: bytes, limit: int = 65536) -> bytes:
        while marker not in self._buf:
            if len(self._buf) > limit:
                raise ValueError("handshake request too large")
            self._fill()
        head, self._buf = self._buf.split(marker, 1)
        return head

    # ---- handshake ----

    def server_handshake(self) -> dict:
        """Answer a client's upgrade request; raises ValueError on a bad one."""
        head = self._recv_until(b"\r\n\r\n").decode("latin-1")
        lines = head.split("\r\n")
        headers = {"request": lines[0]}
        for line in lines[1:]:
            if ":" in line:
                name, value = line.split(":", 1)
                headers[name.strip().lower()] = value.strip()
        key = headers.get("sec-websocket-key")
        if key is None or "websocket" not in headers.get("upgrade", "").lower():
            self.sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
            raise ValueError("not a websocket upgrade request")
        response = (
            "HTTP/1.1 101 Switching Protocols\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Accept: {accept_key(key)}\r\n"
            "\r\n"
        )
        self.sock.sendall(response.encode("latin-1"))
        return headers

    def client_handshake(self, host: str, port: int, path: str = "/") -> None:
        key = base64.b64encode(os.urandom(16)).decode()
        request = (
            f"GET {path} HTTP/1.1\r\n"
            f"Host: {host}:{port}\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {key}\r\n"
            "Sec-WebSocket-Version: 13\r\n"
            "\r\n"
        )
        self.sock.sendall(request.encode("latin-1"))
        head = self._recv_until(b"\r\n\r\n").decode("latin-1")
        status = head.split("\r\n", 1)[0]
        if "101" not in status:
            raise ConnectionError(f"handshake rejected: {status}")

    # ---- frames ----

    def read_frame(self) -> tuple[int, bytes]:
        b0, b1 = self._recv_exact(2)
        opcode = b0 & 0x0F
        masked = bool(b1 & 0x80)
        n = b1 & 0x7F
        if n == 126:
            n = int.from_bytes(self._recv_exact(2), "big")
        elif n == 127:
            n = int.from_bytes(self._recv_exact(8), "big")
        mask_key = self._recv_exact(4) if masked else None
        payload = self._recv_exact(n) if n else b""
        if mask_key:
            payload = bytes(b ^ mask_key[i % 4] for i, b in enumerate(payload))
        if opcode == OP_CLOSE:
            raise WsClosed("close frame received")
        return opcode, payload

    def send_text(self, text: str) -> None:
        self.sock.sendall(encode_frame(text.encode("utf-8"), OP_TEXT,
                                       mask=self.mask_outgoing))

    def recv_text(self) -> str:
        """Next text payload, transparently answering pings."""
        while True:
            opcode, payload = self.read_frame()
            if opcode == OP_PING:
                self.sock.sendall(encode_frame(payload, OP_PONG,
                                               mask=self.mask_outgoing))
                continue
            if opcode == OP_TEXT:
                return payload.decode("utf-8")
            # ignore pongs and binary frames

    def send_close(self) -> None:
        try:
            self.sock.sendall(encode_frame(b"", OP_CLOSE, mask=self.mask_outgoing))
        except OSError:
            pass

    def close(self) -> None:
        self.send_close()
        try:
            self.sock.close()
        except OSError:
            pass
