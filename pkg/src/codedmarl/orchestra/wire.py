"""Length-prefixed binary frames between controller and learners.

Frame::

    u32 BE body length | u8 type | u32 BE iteration | u32 BE learner id | payload

Float payloads use the checkpoint layout (little-endian float64 behind a JSON
header), so values cross the wire bit-exactly.
"""

from __future__ import annotations

import asyncio
import enum
import socket
import struct
from dataclasses import dataclass

import numpy as np

from ..checkpoint import dump_params, load_params, pack_arrays, unpack_arrays
from ..maddpg import Minibatch

_PREFIX = struct.Struct(">I")
_HEAD = struct.Struct(">BII")
MAX_FRAME = 1 << 30


class MsgType(enum.IntEnum):
    BROADCAST = 1
    RESPONSE = 2
    ACK = 3
    SHUTDOWN = 4


class FrameError(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    type: MsgType
    iteration: int
    learner: int
    payload: bytes = b""


def encode_frame(frame: Frame) -> bytes:
    body = _HEAD.pack(int(frame.type), frame.iteration, frame.learner) + frame.payload
    return _PREFIX.pack(len(body)) + body


def decode_body(body: bytes) -> Frame:
    if len(body) < _HEAD.size:
        raise FrameError(f"frame body too short ({len(body)} bytes)")
    kind, iteration, learner = _HEAD.unpack_from(body)
    return Frame(MsgType(kind), iteration, learner, bytes(body[_HEAD.size :]))


def _check_len(n: int) -> None:
    if n > MAX_FRAME:
        raise FrameError(f"frame of {n} bytes exceeds limit")


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf.extend(chunk)
    return bytes(buf)


def recv_frame(sock: socket.socket) -> Frame | None:
    """Blocking read of one frame; ``None`` on clean EOF."""
    prefix = _recv_exact(sock, _PREFIX.size)
    if prefix is None:
        return None
    (n,) = _PREFIX.unpack(prefix)
    _check_len(n)
    body = _recv_exact(sock, n)
    if body is None:
        raise FrameError("connection closed mid-frame")
    return decode_body(body)


def send_frame(sock: socket.socket, frame: Frame) -> None:
    sock.sendall(encode_frame(frame))


async def read_frame(reader: asyncio.StreamReader) -> Frame | None:
    try:
        prefix = await reader.readexactly(_PREFIX.size)
    except asyncio.IncompleteReadError as exc:
        if exc.partial:
            raise FrameError("connection closed mid-frame") from exc
        return None
    (n,) = _PREFIX.unpack(prefix)
    _check_len(n)
    body = await reader.readexactly(n)
    return decode_body(body)


def encode_broadcast(theta: np.ndarray, batch: Minibatch, delay: float, lengths: list[int] | None = None) -> bytes:
    ckpt = dump_params(theta, lengths or [theta.shape[1]] * theta.shape[0])
    mb = pack_arrays(batch.arrays(), {"seed": batch.seed, "delay": delay})
    return _PREFIX.pack(len(ckpt)) + ckpt + mb


def decode_broadcast(payload: bytes, n_agents: int) -> tuple[np.ndarray, Minibatch, float]:
    (n,) = _PREFIX.unpack_from(payload)
    theta, _ = load_params(payload[_PREFIX.size : _PREFIX.size + n])
    header, arrays = unpack_arrays(payload[_PREFIX.size + n :])
    return theta, Minibatch.from_arrays(arrays, n_agents, header["seed"]), float(header["delay"])


def encode_vector(y: np.ndarray) -> bytes:
    return pack_arrays([y])


def decode_vector(payload: bytes) -> np.ndarray:
    _, (y,) = unpack_arrays(payload)
    return y
