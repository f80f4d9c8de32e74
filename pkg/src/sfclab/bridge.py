"""Policy bridge: newline-delimited JSON messages over a socket or a pipe.

The simulator is the client.  It opens the transport, sends one handshake
line ``{"type":"hello","n":n,"m":m,"version":1}`` and expects
``{"type":"ready"}``; each slot it sends ``{"type":"act","state":{...},
"pending":[...],"slot":t}`` and expects ``{"type":"action","matrix":[[...]]}``
with an m-by-n 0/1 matrix.  Field order is fixed as written; numbers travel
as decimal text; one message per line.

Endpoints: ``tcp:HOST:PORT`` connects a stream socket; ``cmd:COMMAND`` spawns
a subprocess and talks over its standard streams.
"""

from __future__ import annotations

import json
import shlex
import socket
import subprocess
from typing import Sequence

import numpy as np

from .model import ServiceChain, SystemState

__all__ = [
    "BridgeError",
    "BridgeClient",
    "PROTOCOL_VERSION",
    "state_message",
    "pending_message",
]

PROTOCOL_VERSION = 1


class BridgeError(RuntimeError):
    """Transport failure or protocol violation on the policy bridge."""


def state_message(state: SystemState) -> dict:
    return {
        "nodes": [float(v) for v in state.node_residual],
        "links": [[float(v) for v in row] for row in state.link_residual],
        "sfc": [[float(v) for v in row] for row in state.sfc_features],
    }


def pending_message(pending: Sequence[ServiceChain]) -> list[dict]:
    return [
        {
            "id": chain.id,
            "release": chain.release,
            "duration": chain.duration,
            "node_demands": list(chain.node_demands),
            "flow_demands": list(chain.flow_demands),
            "weight": chain.weight,
        }
        for chain in pending
    ]


class BridgeClient:
    """Client half of the bridge protocol; one episode per connection."""

    def __init__(self, endpoint: str):
        self.endpoint = endpoint
        self._sock: socket.socket | None = None
        self._proc: subprocess.Popen | None = None
        self._reader = None
        self._writer = None

    def connect(self) -> None:
        try:
            if self.endpoint.startswith("tcp:"):
                _, host, port = self.endpoint.split(":", 2)
                self._sock = socket.create_connection((host, int(port)), timeout=120)
                self._reader = self._sock.makefile("r", encoding="utf-8", newline="\n")
                self._writer = self._sock.makefile("w", encoding="utf-8", newline="\n")
            elif self.endpoint.startswith("cmd:"):
                self._proc = subprocess.Popen(
                    shlex.split(self.endpoint[4:]),
                    stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True,
                )
                self._reader = self._proc.stdout
                self._writer = self._proc.stdin
            else:
                raise BridgeError(f"unsupported endpoint {self.endpoint!r} (use tcp:HOST:PORT or cmd:...)")
        except (OSError, ValueError) as exc:
            raise BridgeError(f"cannot reach bridge endpoint {self.endpoint!r}: {exc}") from exc

    def close(self) -> None:
        for stream in (self._writer, self._reader):
            try:
                if stream is not None:
                    stream.close()
            except OSError:
                pass
        if self._sock is not None:
            self._sock.close()
        if self._proc is not None:
            self._proc.terminate()
            self._proc.wait(timeout=10)

    def __enter__(self) -> "BridgeClient":
        self.connect()
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _send(self, message: dict) -> None:
        try:
            self._writer.write(json.dumps(message) + "\n")
            self._writer.flush()
        except (OSError, BrokenPipeError) as exc:
            raise BridgeError(f"bridge send failed: {exc}") from exc

    def _recv(self) -> dict:
        try:
            line = self._reader.readline()
        except OSError as exc:
            raise BridgeError(f"bridge receive failed: {exc}") from exc
        if not line:
            raise BridgeError("bridge closed the connection")
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BridgeError(f"bridge sent malformed JSON: {line!r}") from exc
        if not isinstance(message, dict):
            raise BridgeError("bridge messages must be JSON objects")
        return message

    def handshake(self, n: int, m: int) -> None:
        self._send({"type": "hello", "n": n, "m": m, "version": PROTOCOL_VERSION})
        reply = self._recv()
        if reply.get("type") != "ready":
            raise BridgeError(f"bridge refused the handshake: {reply}")

    def act(self, state: SystemState, pending: Sequence[ServiceChain], slot: int,
            m: int, n: int) -> np.ndarray:
        self._send({
            "type": "act",
            "state": state_message(state),
            "pending": pending_message(pending),
            "slot": slot,
        })
        reply = self._recv()
        if reply.get("type") != "action":
            raise BridgeError(f"expected an action message, got {reply.get('type')!r}")
        matrix = np.asarray(reply.get("matrix"), dtype=np.float64)
        if matrix.shape != (m, n) or not np.isin(matrix, (0, 1)).all():
            raise BridgeError(f"bridge action must be a {m}x{n} 0/1 matrix")
        return matrix.astype(np.uint8)
