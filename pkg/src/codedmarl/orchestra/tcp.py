"""Controller and learners over loopback TCP.

Each learner is a separate process serving one controller connection.  The
controller is a single asyncio task that broadcasts ``(theta, minibatch)``,
consumes responses as they arrive, decodes as soon as the received set is
decodable, then acknowledges so that busy learners abandon the round.
"""

from __future__ import annotations

import asyncio
import logging
import multiprocessing as mp
import select
import signal
import socket
import time
from collections import deque
from typing import Callable, Mapping

import numpy as np

from ..coding import AssignmentMatrix, is_decodable, recover
from ..maddpg import Cancelled, Hyper, Minibatch, NetSpec, learner_update
from .sim import RoundOutcome, check_decodable
from .wire import (
    Frame,
    FrameError,
    MsgType,
    decode_broadcast,
    decode_vector,
    encode_broadcast,
    encode_frame,
    encode_vector,
    read_frame,
    recv_frame,
    send_frame,
)

logger = logging.getLogger(__name__)

POLL_INTERVAL = 0.01


class ConnectionLost(ConnectionError):
    pass


class RoundTimeout(TimeoutError):
    pass


# -- learner side ----------------------------------------------------------------


class _Inbox:
    """Frames read while busy; an ACK for the current round flips ``cancelled``."""

    def __init__(self, conn: socket.socket):
        self.conn = conn
        self.pending: deque[Frame | None] = deque()

    def next(self) -> Frame | None:
        if self.pending:
            return self.pending.popleft()
        return recv_frame(self.conn)

    def watcher(self, iteration: int) -> Callable[[], bool]:
        state = {"cancelled": False}

        def cancelled() -> bool:
            if state["cancelled"]:
                return True
            while select.select([self.conn], [], [], 0)[0]:
                f = recv_frame(self.conn)
                if f is not None and f.type is MsgType.ACK:
                    if f.iteration == iteration:
                        state["cancelled"] = True
                        return True
                    continue
                # a newer broadcast, a shutdown, or EOF supersedes this round
                self.pending.append(f)
                state["cancelled"] = True
                return True
            return False

        return cancelled


def _sleep_unless(seconds: float, cancelled: Callable[[], bool]) -> bool:
    end = time.monotonic() + seconds
    while True:
        if cancelled():
            return False
        left = end - time.monotonic()
        if left <= 0:
            return True
        time.sleep(min(POLL_INTERVAL, left))


def serve_learner(
    listener: socket.socket, learner_id: int, row: np.ndarray, spec: NetSpec, hyper: Hyper
) -> None:
    """Serve one controller connection until SHUTDOWN or EOF."""
    conn, _ = listener.accept()
    conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    inbox = _Inbox(conn)
    try:
        while True:
            frame = inbox.next()
            if frame is None or frame.type is MsgType.SHUTDOWN:
                return
            if frame.type is not MsgType.BROADCAST:
                continue
            theta, batch, delay = decode_broadcast(frame.payload, spec.n_agents)
            cancelled = inbox.watcher(frame.iteration)
            try:
                y = learner_update(row, theta, batch, spec, hyper, cancelled)
            except Cancelled:
                continue
            if delay > 0 and not _sleep_unless(delay, cancelled):
                continue
            if cancelled():
                continue
            send_frame(conn, Frame(MsgType.RESPONSE, frame.iteration, learner_id, encode_vector(y)))
    except (ConnectionError, FrameError, OSError):
        return
    finally:
        conn.close()


def _learner_main(learner_id: int, row: list, spec: dict, hyper: dict, host: str, ports) -> None:
    signal.signal(signal.SIGINT, signal.SIG_IGN)
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    listener.bind((host, 0))
    listener.listen(1)
    ports.put((learner_id, listener.getsockname()[1]))
    try:
        serve_learner(listener, learner_id, np.asarray(row), NetSpec.from_dict(spec), Hyper(**hyper))
    finally:
        listener.close()


class LocalCluster:
    """Spawns one learner process per active row of ``c`` on loopback."""

    def __init__(self, c: AssignmentMatrix, spec: NetSpec, hyper: Hyper, host: str = "127.0.0.1"):
        self.c = c
        self.spec = spec
        self.hyper = hyper
        self.host = host
        self.procs: dict[int, mp.process.BaseProcess] = {}
        self.addrs: dict[int, tuple[str, int]] = {}

    def start(self) -> dict[int, tuple[str, int]]:
        ctx = mp.get_context("spawn")
        ports = ctx.Queue()
        hyper = {k: getattr(self.hyper, k) for k in self.hyper.__dataclass_fields__}
        for j in self.c.active_learners():
            p = ctx.Process(
                target=_learner_main,
                args=(j, self.c.row(j).tolist(), self.spec.to_dict(), hyper, self.host, ports),
                daemon=True,
            )
            p.start()
            self.procs[j] = p
        for _ in self.procs:
            j, port = ports.get(timeout=60)
            self.addrs[j] = (self.host, port)
        return dict(sorted(self.addrs.items()))

    def kill(self, j: int) -> None:
        self.procs[j].kill()
        self.procs[j].join()

    def stop(self) -> None:
        for p in self.procs.values():
            p.join(timeout=2)
            if p.is_alive():
                p.kill()
                p.join()

    def __enter__(self) -> dict[int, tuple[str, int]]:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


# -- controller side -------------------------------------------------------------


class TcpTransport:
    """Controller end of the TCP runner; same ``round`` contract as ``SimTransport``.

    ``round_time`` and arrival times are wall-clock seconds since the broadcast.
    A dropped connection counts as a permanently missing response; a round that
    cannot decode before ``timeout`` raises ``RoundTimeout``.
    """

    name = "tcp"

    def __init__(self, addrs: Mapping[int, tuple[str, int]], timeout: float = 30.0):
        self.addrs = dict(addrs)
        self.timeout = timeout
        self.lost: set[int] = set()
        self._loop: asyncio.AbstractEventLoop | None = None
        self._writers: dict[int, asyncio.StreamWriter] = {}
        self._tasks: list[asyncio.Task] = []
        self._queue: asyncio.Queue | None = None
        self._wire_round = 0

    def connect(self) -> "TcpTransport":
        self._loop = asyncio.new_event_loop()
        self._loop.run_until_complete(self._connect())
        return self

    async def _connect(self) -> None:
        self._queue = asyncio.Queue()
        for j, (host, port) in sorted(self.addrs.items()):
            reader, writer = await asyncio.open_connection(host, port)
            sock = writer.get_extra_info("socket")
            if sock is not None:
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._writers[j] = writer
            self._tasks.append(asyncio.ensure_future(self._pump(j, reader)))

    async def _pump(self, j: int, reader: asyncio.StreamReader) -> None:
        try:
            while True:
                frame = await read_frame(reader)
                if frame is None:
                    break
                await self._queue.put((j, frame))
        except (ConnectionError, FrameError, OSError, asyncio.IncompleteReadError):
            pass
        await self._queue.put((j, None))

    def _send(self, j: int, frame: Frame) -> None:
        if j in self.lost:
            return
        try:
            self._writers[j].write(encode_frame(frame))
        except (ConnectionError, OSError, RuntimeError):
            self.lost.add(j)

    def round(
        self,
        c: AssignmentMatrix,
        theta: np.ndarray,
        batch: Minibatch,
        iteration: int,
        delays: Mapping[int, float],
        spec: NetSpec,
        hyper: Hyper,
    ) -> RoundOutcome:
        if self._loop is None:
            self.connect()
        check_decodable(c)
        return self._loop.run_until_complete(self._round(c, theta, batch, delays))

    async def _round(
        self, c: AssignmentMatrix, theta: np.ndarray, batch: Minibatch, delays: Mapping[int, float]
    ) -> RoundOutcome:
        loop = asyncio.get_running_loop()
        wire_it = self._wire_round
        self._wire_round += 1
        start = loop.time()
        targets = [j for j in c.active_learners() if j in self._writers]
        for j in targets:
            payload = encode_broadcast(theta, batch, float(delays.get(j, 0.0)))
            self._send(j, Frame(MsgType.BROADCAST, wire_it, j, payload))
        for j in targets:
            if j not in self.lost:
                try:
                    await self._writers[j].drain()
                except (ConnectionError, OSError):
                    self.lost.add(j)

        received: dict[int, np.ndarray] = {}
        arrivals: dict[int, float] = {}
        deadline = start + self.timeout
        while not is_decodable(c, received):
            remaining = deadline - loop.time()
            try:
                if remaining <= 0:
                    raise asyncio.TimeoutError
                j, frame = await asyncio.wait_for(self._queue.get(), remaining)
            except asyncio.TimeoutError:
                self._ack(targets, wire_it)
                raise RoundTimeout(
                    f"round {wire_it}: not decodable after {self.timeout}s; "
                    f"received {sorted(received)}, lost {sorted(self.lost)}"
                ) from None
            if frame is None:
                if j not in self.lost:
                    logger.warning("learner %d connection lost", j)
                self.lost.add(j)
                continue
            if frame.type is MsgType.RESPONSE and frame.iteration == wire_it:
                received[j] = decode_vector(frame.payload)
                arrivals[j] = loop.time() - start
        round_time = loop.time() - start
        self._ack(targets, wire_it)
        cancelled = tuple(j for j in targets if j not in received)
        return RoundOutcome(
            recover(c, received), tuple(sorted(received)), arrivals, round_time, cancelled, received
        )

    def _ack(self, targets, wire_it: int) -> None:
        for j in targets:
            self._send(j, Frame(MsgType.ACK, wire_it, j))

    def close(self) -> None:
        if self._loop is None:
            return
        for j in list(self._writers):
            self._send(j, Frame(MsgType.SHUTDOWN, 0, j))
        self._loop.run_until_complete(self._close())
        self._loop.close()
        self._loop = None

    async def _close(self) -> None:
        for w in self._writers.values():
            try:
                await w.drain()
            except (ConnectionError, OSError):
                pass
            w.close()
        for t in self._tasks:
            t.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)

    def __enter__(self) -> "TcpTransport":
        return self.connect()

    def __exit__(self, *exc) -> None:
        self.close()
