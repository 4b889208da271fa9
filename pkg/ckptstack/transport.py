"""Framed byte-stream connections for the checkpoint protocol.

Two networks carry the same codec: ``InprocNetwork`` (in-memory duplex
channels, used by simulated scenarios) and ``TcpNetwork`` (loopback TCP, used
by daemon sessions). Endpoints are ``host:port`` strings; in-memory endpoints
use the host ``inproc``.
"""
from __future__ import annotations

import asyncio
import errno
import logging
from collections.abc import Awaitable, Callable

from .const import DEFAULT_HOST, INPROC_HOST
from .exceptions import CoordinatorUnreachable, EndpointBusy, ProtocolViolation
from .proto import NEED_MORE_BYTES, CkptFrame, decode_frame, encode_frame

_LOGGER = logging.getLogger(__name__)

READ_CHUNK = 4096

ConnectionHandler = Callable[["FrameStream"], Awaitable[None]]


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    """Split ``host:port`` into its parts."""
    host, sep, port = endpoint.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ValueError(f"endpoint must look like host:port, got {endpoint!r}")
    return host, int(port)


def format_endpoint(host: str, port: int) -> str:
    """Join a host and port into an endpoint string."""
    return f"{host}:{port}"


class FrameStream:
    """One framed connection over an asyncio reader/writer pair."""

    def __init__(self, reader: asyncio.StreamReader, writer, peer: str = "") -> None:
        """Initialize."""
        self._reader = reader
        self._writer = writer
        self._buffer = bytearray()
        self.peer = peer
        self.closed = False

    async def async_send(self, frame: CkptFrame) -> None:
        """Send one frame."""
        if self.closed:
            raise ConnectionResetError(f"connection to {self.peer} is closed")
        _LOGGER.debug("-> %s %s gen=%d agent=%d", self.peer, frame.msg_type.name,
                      frame.generation, frame.agent_id)
        self._writer.write(encode_frame(frame))
        await self._writer.drain()

    async def async_recv(self) -> CkptFrame | None:
        """Receive one frame, or None once the peer closed the connection."""
        while True:
            result = decode_frame(self._buffer)
            if result is not NEED_MORE_BYTES:
                frame, consumed = result
                del self._buffer[:consumed]
                return frame
            chunk = await self._reader.read(READ_CHUNK)
            if not chunk:
                if self._buffer:
                    raise ProtocolViolation(
                        f"{self.peer} closed the connection inside a frame"
                    )
                return None
            self._buffer.extend(chunk)

    async def async_close(self) -> None:
        """Close the connection."""
        if self.closed:
            return
        self.closed = True
        self._writer.close()
        try:
            await self._writer.wait_closed()
        except (ConnectionError, OSError):
            pass


# ---------------------------------------------------------------------------
# In-memory channels
# ---------------------------------------------------------------------------


class _MemoryWriter:
    """Writer half that feeds the peer's StreamReader."""

    def __init__(self, peer_reader: asyncio.StreamReader) -> None:
        self._peer_reader = peer_reader
        self._closed = False

    def write(self, data: bytes) -> None:
        if self._closed:
            raise ConnectionResetError("in-memory channel is closed")
        self._peer_reader.feed_data(data)

    async def drain(self) -> None:
        await asyncio.sleep(0)

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._peer_reader.feed_eof()

    async def wait_closed(self) -> None:
        return None


def memory_pipe(name: str = "memory") -> tuple[FrameStream, FrameStream]:
    """Return the two ends of an in-memory duplex channel."""
    left_reader = asyncio.StreamReader()
    right_reader = asyncio.StreamReader()
    left = FrameStream(left_reader, _MemoryWriter(right_reader), f"{name}/server")
    right = FrameStream(right_reader, _MemoryWriter(left_reader), f"{name}/client")
    return left, right


class Listener:
    """A listening endpoint."""

    def __init__(self, endpoint: str, close: Callable[[], Awaitable[None]]) -> None:
        """Initialize."""
        self.endpoint = endpoint
        self._close = close

    async def async_close(self) -> None:
        """Stop accepting connections."""
        await self._close()


class InprocNetwork:
    """Named in-memory endpoints shared by coordinators and agents."""

    def __init__(self) -> None:
        """Initialize."""
        self._handlers: dict[str, ConnectionHandler] = {}
        self._tasks: set[asyncio.Task] = set()
        self._next_port = 1

    def endpoint_for(self, port: int | None = None) -> str:
        """Return an in-memory endpoint, allocating a port when none is given."""
        if port is None:
            port = self._next_port
            while format_endpoint(INPROC_HOST, port) in self._handlers:
                port += 1
            self._next_port = port + 1
        return format_endpoint(INPROC_HOST, port)

    async def async_listen(self, endpoint: str, handler: ConnectionHandler) -> Listener:
        """Start accepting connections on ``endpoint``."""
        parse_endpoint(endpoint)
        if endpoint in self._handlers:
            raise EndpointBusy(f"{endpoint} already has a listener")
        self._handlers[endpoint] = handler

        async def _close() -> None:
            if self._handlers.get(endpoint) is handler:
                del self._handlers[endpoint]

        return Listener(endpoint, _close)

    async def async_connect(self, endpoint: str) -> FrameStream:
        """Open a connection to ``endpoint``."""
        handler = self._handlers.get(endpoint)
        if handler is None:
            raise CoordinatorUnreachable(f"nothing listens on {endpoint}")
        server_side, client_side = memory_pipe(endpoint)
        task = asyncio.create_task(handler(server_side))
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)
        return client_side


# ---------------------------------------------------------------------------
# Loopback TCP
# ---------------------------------------------------------------------------


class TcpNetwork:
    """Loopback TCP endpoints."""

    def __init__(self, host: str = DEFAULT_HOST) -> None:
        """Initialize."""
        self.host = host

    def endpoint_for(self, port: int | None = None) -> str:
        """Return a TCP endpoint; port 0 lets the OS choose."""
        return format_endpoint(self.host, port or 0)

    async def async_listen(self, endpoint: str, handler: ConnectionHandler) -> Listener:
        """Start accepting connections on ``endpoint``."""
        host, port = parse_endpoint(endpoint)

        async def _on_client(reader, writer) -> None:
            peer = writer.get_extra_info("peername")
            await handler(FrameStream(reader, writer, f"{peer}"))

        try:
            server = await asyncio.start_server(_on_client, host, port)
        except OSError as exc:
            if exc.errno == errno.EADDRINUSE:
                raise EndpointBusy(f"{endpoint} is already in use") from exc
            raise
        bound_port = server.sockets[0].getsockname()[1]

        async def _close() -> None:
            server.close()
            await server.wait_closed()

        _LOGGER.debug("Listening on %s:%d", host, bound_port)
        return Listener(format_endpoint(host, bound_port), _close)

    async def async_connect(self, endpoint: str) -> FrameStream:
        """Open a connection to ``endpoint``."""
        host, port = parse_endpoint(endpoint)
        try:
            reader, writer = await asyncio.open_connection(host, port)
        except OSError as exc:
            raise CoordinatorUnreachable(f"cannot connect to {endpoint}: {exc}") from exc
        return FrameStream(reader, writer, endpoint)
