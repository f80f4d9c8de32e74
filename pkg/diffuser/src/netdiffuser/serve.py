"""Bridge server: answers the simulator's act requests with planned anchors.

One JSON message per line over TCP.  The handshake is refused when the
client's node or row count disagrees with the checkpoint.  For each act
request the observed state joins a bounded history queue; when chains are
pending, the planner samples a future state sequence conditioned on that
history and the target return, and the inverse dynamics model turns the
(current, next) state pair into the anchor matrix.  Slots with nothing
pending answer an all-zero matrix without sampling.
"""

from __future__ import annotations

import json
import socket
import threading
from collections import deque

import numpy as np
import torch

from .sampling import extract_action, sample
from .training import ModelBundle

PROTOCOL_VERSION = 1


class BridgeServer:
    """Single-connection-at-a-time planner endpoint."""

    def __init__(self, bundle: ModelBundle, host: str = "127.0.0.1", port: int = 0,
                 target_return: float | None = None, seed: int = 0):
        self.bundle = bundle
        self.target_return = (bundle.label_scale if target_return is None
                              else float(target_return))
        self.seed = seed
        self._server = socket.create_server((host, port))
        self._server.settimeout(0.5)
        self.address = self._server.getsockname()
        self._stop = threading.Event()

    @property
    def endpoint(self) -> str:
        return f"tcp:{self.address[0]}:{self.address[1]}"

    def stop(self) -> None:
        self._stop.set()

    def serve_forever(self) -> None:
        try:
            while not self._stop.is_set():
                try:
                    conn, _ = self._server.accept()
                except socket.timeout:
                    continue
                try:
                    self._handle(conn)
                finally:
                    conn.close()
        finally:
            self._server.close()

    def _handle(self, conn: socket.socket) -> None:
        conn.settimeout(300)
        reader = conn.makefile("r", encoding="utf-8")
        writer = conn.makefile("w", encoding="utf-8")

        def send(message: dict) -> None:
            writer.write(json.dumps(message) + "\n")
            writer.flush()

        line = reader.readline()
        if not line:
            return
        try:
            hello = json.loads(line)
        except json.JSONDecodeError:
            send({"type": "error", "message": "handshake is not valid JSON"})
            return
        layout = self.bundle.layout
        if (hello.get("type") != "hello" or hello.get("version") != PROTOCOL_VERSION
                or hello.get("n") != layout.nodes or hello.get("m") != layout.max_tracked):
            send({"type": "error",
                  "message": f"expected n={layout.nodes} m={layout.max_tracked} "
                             f"version={PROTOCOL_VERSION}, got {hello}"})
            return
        send({"type": "ready"})

        generator = torch.Generator().manual_seed(self.seed)
        history: deque[np.ndarray] = deque(maxlen=self.bundle.config.history)
        zero = np.zeros((layout.max_tracked, layout.nodes), dtype=int)
        for line in reader:
            try:
                request = json.loads(line)
            except json.JSONDecodeError:
                send({"type": "error", "message": "request is not valid JSON"})
                return
            if request.get("type") != "act":
                send({"type": "error", "message": f"unsupported message {request.get('type')!r}"})
                return
            pending = request.get("pending") or []
            try:
                state = _state_vector(request["state"], layout)
            except (KeyError, ValueError) as exc:
                send({"type": "error", "message": f"bad state payload: {exc}"})
                return
            # training states hold only placed chains (demonstrations place on
            # arrival), so drop the pending rows before the model sees them
            history.append(_strip_pending(state, len(pending), layout))
            if not pending:
                send({"type": "action", "matrix": zero.tolist()})
                continue
            window = np.stack(list(history))
            plan = sample(self.bundle, window, self.target_return, generator)
            current = plan[len(history) - 1]
            upcoming = plan[len(history)]
            matrix = extract_action(self.bundle, current, upcoming)
            send({"type": "action", "matrix": matrix.astype(int).tolist()})


def _strip_pending(state: np.ndarray, pending_count: int, layout) -> np.ndarray:
    """Remove the leading pending rows of the F block and pad with zeros."""
    if pending_count <= 0:
        return state
    out = state.copy()
    block = out[layout.graph_dim:].reshape(layout.max_tracked, layout.row_width)
    kept = block[min(pending_count, layout.max_tracked):]
    block[:kept.shape[0]] = kept
    block[kept.shape[0]:] = 0.0
    return out


def _state_vector(payload: dict, layout) -> np.ndarray:
    nodes = np.asarray(payload["nodes"], dtype=np.float64)
    links = np.asarray(payload["links"], dtype=np.float64)
    sfc = np.asarray(payload["sfc"], dtype=np.float64)
    if nodes.shape != (layout.nodes,):
        raise ValueError(f"nodes must have {layout.nodes} entries")
    if links.shape != (layout.nodes, layout.nodes):
        raise ValueError("links must be an n-by-n matrix")
    if sfc.shape != (layout.max_tracked, layout.row_width):
        raise ValueError("sfc block shape mismatch")
    return np.concatenate([nodes, links.ravel(), sfc.ravel()])


def serve_in_thread(bundle: ModelBundle, **kwargs) -> tuple[BridgeServer, threading.Thread]:
    """Start a server on a background thread; caller stops it via .stop()."""
    server = BridgeServer(bundle, **kwargs)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
