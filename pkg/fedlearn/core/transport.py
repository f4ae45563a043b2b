"""
SendMessage: deliver a Request to its receiver and return the Response.

Two transports share one contract. LoopbackTransport keeps an in-memory
registry keyed by party name; TcpTransport opens one connection per request
and carries exactly one frame in each direction. Requests to one party are
handled strictly one at a time in both.
"""

import logging
import socket
import socketserver
import threading
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor, wait
from typing import Callable, Dict, List, Mapping, Optional, Tuple

from fedlearn.core.config import settings
from fedlearn.core.wire import (
    HEADER,
    Message,
    MessageKind,
    Truncated,
    WireError,
    decode_message,
    encode_message,
    frame_length,
)

logger = logging.getLogger(__name__)

Handler = Callable[[Message], Message]


class TransportError(Exception):
    pass


class UnknownReceiver(TransportError):
    pass


class ConnectionFailed(TransportError):
    pass


class TransportTimeout(TransportError):
    pass


class BindError(TransportError):
    pass


class ProtocolViolation(TransportError):
    pass


class BroadcastError(TransportError):

    def __init__(self, receiver: str, cause: BaseException):
        super().__init__(f"send to {receiver!r} failed: {cause}")
        self.receiver = receiver
        self.cause = cause


def parse_endpoint(address: str) -> Tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {address!r}")
    return host, int(port)


class Transport(ABC):

    def __init__(self, timeout_s: Optional[float] = None):
        self.timeout_s = settings.TRANSPORT_TIMEOUT_S if timeout_s is None else timeout_s

    @abstractmethod
    def send(self, request: Message) -> Message:
        """Deliver one request and block for its response."""

    @abstractmethod
    def serve(self, name: str, handler: Handler, stop: Optional[threading.Event] = None) -> None:
        """Make `handler` answer requests addressed to `name`."""


class LoopbackTransport(Transport):
    """In-process transport. Frames still go through the wire codec."""

    def __init__(self, timeout_s: Optional[float] = None):
        super().__init__(timeout_s)
        self._parties: Dict[str, Tuple[Handler, threading.Lock]] = {}

    def serve(self, name: str, handler: Handler, stop: Optional[threading.Event] = None) -> None:
        if name in self._parties:
            raise ValueError(f"party {name!r} is already registered")
        self._parties[name] = (handler, threading.Lock())

    @property
    def parties(self) -> List[str]:
        return list(self._parties)

    def send(self, request: Message) -> Message:
        entry = self._parties.get(request.receiver)
        if entry is None:
            raise UnknownReceiver(f"no party named {request.receiver!r}")
        handler, lock = entry
        frame = encode_message(request)
        if not lock.acquire(timeout=self.timeout_s):
            raise TransportTimeout(f"party {request.receiver!r} busy for {self.timeout_s}s")
        try:
            response = handler(decode_message(frame))
        finally:
            lock.release()
        return decode_message(encode_message(response))


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise Truncated(f"connection closed after {len(buf)} of {n} bytes")
        buf.extend(chunk)
    return bytes(buf)


def read_frame(sock: socket.socket) -> bytes:
    header = _recv_exact(sock, HEADER.size)
    return header + _recv_exact(sock, frame_length(header))


class _FrameHandler(socketserver.BaseRequestHandler):

    def handle(self):
        self.request.settimeout(self.server.timeout_s)
        try:
            request = decode_message(read_frame(self.request))
        except (WireError, OSError) as e:
            logger.error("dropping malformed request from %s: %s", self.client_address, e)
            return
        response = self.server.party_handler(request)
        self.request.sendall(encode_message(response))


class _PartyServer(socketserver.TCPServer):
    allow_reuse_address = True

    def __init__(self, address: Tuple[str, int], handler: Handler, timeout_s: float):
        self.party_handler = handler
        self.timeout_s = timeout_s
        super().__init__(address, _FrameHandler)
        self.timeout = 0.5


class TcpTransport(Transport):

    def __init__(self, endpoints: Mapping[str, str], timeout_s: Optional[float] = None):
        super().__init__(timeout_s)
        self.endpoints = dict(endpoints)

    def _address(self, name: str) -> Tuple[str, int]:
        if name not in self.endpoints:
            raise UnknownReceiver(f"no endpoint for party {name!r}")
        return parse_endpoint(self.endpoints[name])

    def send(self, request: Message) -> Message:
        address = self._address(request.receiver)
        try:
            sock = socket.create_connection(address, timeout=self.timeout_s)
        except socket.timeout as e:
            raise TransportTimeout(f"connecting to {request.receiver!r} at {address} timed out") from e
        except OSError as e:
            raise ConnectionFailed(f"cannot reach {request.receiver!r} at {address}: {e}") from e
        with sock:
            try:
                sock.sendall(encode_message(request))
                frame = read_frame(sock)
            except socket.timeout as e:
                raise TransportTimeout(f"no response from {request.receiver!r} within {self.timeout_s}s") from e
            except OSError as e:
                raise ConnectionFailed(f"connection to {request.receiver!r} failed: {e}") from e
        return decode_message(frame)

    def serve(self, name: str, handler: Handler, stop: Optional[threading.Event] = None) -> None:
        """Serve `name` until `stop` is set (or KeyboardInterrupt)."""
        stop = stop or threading.Event()
        try:
            server = _PartyServer(self._address(name), handler, self.timeout_s)
        except OSError as e:
            raise BindError(f"cannot bind {name!r} to {self.endpoints[name]}: {e}") from e
        logger.info("party %s listening on %s", name, self.endpoints[name])
        try:
            while not stop.is_set():
                server.handle_request()
        finally:
            server.server_close()
            logger.info("party %s stopped", name)


def send_message(transport: Transport, request: Message) -> Message:
    if request.kind != MessageKind.REQUEST:
        raise ProtocolViolation("send_message requires a Request")
    logger.debug("-> %s phase %d", request.receiver, request.phase_id)
    response = transport.send(request)
    if response.kind != MessageKind.RESPONSE:
        raise ProtocolViolation(f"{request.receiver!r} answered with a Request")
    if response.sender != request.receiver or response.receiver != request.sender:
        raise ProtocolViolation(
            f"response routed {response.sender!r}->{response.receiver!r}, "
            f"expected {request.receiver!r}->{request.sender!r}"
        )
    if response.phase_id != request.phase_id:
        raise ProtocolViolation(
            f"{request.receiver!r} answered phase {response.phase_id} to phase {request.phase_id}"
        )
    return response


def broadcast(transport: Transport, requests: List[Message]) -> List[Message]:
    """Send all requests concurrently; responses are aligned to request order."""
    if not requests:
        return []
    receivers = [r.receiver for r in requests]
    if len(set(receivers)) != len(receivers):
        raise ValueError(f"broadcast receivers must be distinct: {receivers}")
    if len(requests) == 1:
        try:
            return [send_message(transport, requests[0])]
        except Exception as e:
            raise BroadcastError(requests[0].receiver, e) from e

    with ThreadPoolExecutor(max_workers=len(requests)) as pool:
        futures = [pool.submit(send_message, transport, r) for r in requests]
        wait(futures)
    for request, future in zip(requests, futures):
        error = future.exception()
        if error is not None:
            raise BroadcastError(request.receiver, error) from error
    return [f.result() for f in futures]
