"""Bridge server: one live simulation session over a local WebSocket.

The operator receives a state frame after every planner tick and can inject
session commands (pause/resume/reset/speed), the manual maneuver triggers and
oncoming-vehicle spawns. Messages are JSON, one per WebSocket text frame;
see docs/bridge_protocol.md.
"""

from __future__ import annotations

import json
import queue
import socket
import threading
import time

from .scenario import SCHEMA_VERSION, Scenario
from .sim import Command, SimEngine, TickResult
from .ws import WsClosed, WsConn

PROTOCOL = "ovsim-bridge"
ENGINE_COMMANDS = ("trigger_overtake", "trigger_abort", "spawn_oncoming")
SESSION_COMMANDS = ("start", "pause", "resume", "reset", "set_speed_factor", "shutdown")


def _round2(xy) -> list:
    return [round(float(xy[0]), 3), round(float(xy[1]), 3)]


def frame_message(result: TickResult, engine: SimEngine, max_ssr_points: int = 600) -> dict:
    ssr = result.ssr_points
    stride = max(1, len(ssr) // max_ssr_points)
    return {
        "type": "frame",
        "t": round(result.t, 6),
        "fsm": result.fsm,
        "ego": {
            "x": result.ego.x, "y": result.ego.y,
            "psi": result.ego.psi, "v": result.ego.v,
            "length": engine.scenario.ego_geometry.length,
            "width": engine.scenario.ego_geometry.width,
        },
        "actors": [
            {"id": aid, "x": s.x, "y": s.y, "psi": s.psi, "v": s.v,
             "length": next(a.spec.geometry.length for a in engine.actors
                            if a.spec.id == aid),
             "width": next(a.spec.geometry.width for a in engine.actors
                           if a.spec.id == aid)}
            for aid, s in result.actors
        ],
        "p_ref": _round2(result.p_ref),
        "p_interim": _round2(result.p_interim),
        "v_ref": round(result.v_ref, 3),
        "horizon": [_round2(p) for p in result.horizon[:, :2]],
        "reach": [_round2(p) for p in result.reach_boundary],
        "ssr": [_round2(p) for p in ssr[::stride]],
        "solver_status": result.solver_status,
        "metrics": engine.metrics.to_dict(),
        "lane_count": engine.scenario.road.lane_count,
        "lane_width": engine.scenario.road.lane_width,
    }


class BridgeServer:
    """Single-client session: a reader thread feeds commands to the sim loop."""

    def __init__(self, scenario: Scenario, port: int, host: str = "127.0.0.1"):
        self.scenario = scenario
        self.host = host
        self.port = port
        self.engine = SimEngine(scenario)
        self.commands: queue.Queue = queue.Queue()
        self.running = False       # ticking enabled (start/resume)
        self.speed_factor = 1.0
        self.shutdown_requested = False
        self.client_connected = False
        self._send_lock = threading.Lock()
        self._sock: socket.socket | None = None
        self._client: WsConn | None = None
        self._next_cmd_id = 0

    # ---- transport ----

    def _send(self, message: dict) -> None:
        client = self._client
        if client is None:
            return
        try:
            with self._send_lock:
                client.send_text(json.dumps(message))
        except OSError:
            self.client_connected = False

    def _reader(self, conn: WsConn) -> None:
        while not self.shutdown_requested:
            try:
                text = conn.recv_text()
            except (WsClosed, OSError):
                break
            try:
                msg = json.loads(text)
                kind = msg["kind"]
                if msg.get("type") != "command" or not isinstance(kind, str):
                    raise ValueError("expected a command message")
            except (ValueError, KeyError, TypeError) as err:
                self._send({"type": "error", "message": f"malformed command: {err}"})
                continue
            self.commands.put(msg)
        self.client_connected = False
        self.running = False  # pause on disconnect

    # ---- session logic ----

    def _handle_session_command(self, msg: dict) -> None:
        kind = msg["kind"]
        if kind == "start" or kind == "resume":
            self.running = True
        elif kind == "pause":
            self.running = False
        elif kind == "reset":
            self.engine.reset()
            self.running = False
        elif kind == "set_speed_factor":
            factor = msg.get("factor", 1.0)
            if isinstance(factor, (int, float)) and 0.01 <= factor <= 100.0:
                self.speed_factor = float(factor)
            else:
                self._send({"type": "error", "message": f"bad speed factor {factor!r}"})
                return
        elif kind == "shutdown":
            self.shutdown_requested = True
        self._send({"type": "ack", "id": msg.get("id"), "kind": kind, "status": "ok"})

    def _dispatch_commands(self) -> list:
        """Move queued engine commands into the sim; session commands act now."""
        pending_acks = []
        while True:
            try:
                msg = self.commands.get_nowait()
            except queue.Empty:
                break
            kind = msg["kind"]
            if kind in SESSION_COMMANDS:
                self._handle_session_command(msg)
            elif kind in ENGINE_COMMANDS:
                self._next_cmd_id += 1
                cmd = Command(kind=kind, cmd_id=self._next_cmd_id,
                              speed=float(msg.get("speed", 8.0)),
                              gap=float(msg.get("gap", 60.0)))
                if kind == "spawn_oncoming" and (cmd.speed < 0 or cmd.gap <= 0):
                    self._send({"type": "error",
                                "message": "spawn parameters must be positive"})
                    continue
                self.engine.queue_command(cmd)
                pending_acks.append((cmd, msg.get("id")))
            else:
                self._send({"type": "error", "message": f"unknown command {kind!r}"})
        return pending_acks

    def _session(self, client: socket.socket) -> None:
        conn = WsConn(client, mask_outgoing=False)
        conn.server_handshake()
        self._client = conn
        self.client_connected = True
        self._send({
            "type": "hello", "protocol": PROTOCOL,
            "schema_version": SCHEMA_VERSION,
            "scenario": self.scenario.name,
            "planner_period": self.scenario.planner_period,
        })
        reader = threading.Thread(target=self._reader, args=(conn,), daemon=True)
        reader.start()

        pending_acks = []
        while not self.shutdown_requested and self.client_connected:
            pending_acks += self._dispatch_commands()
            if not self.running or self.engine.finished():
                if self.engine.finished() and self.running:
                    self.running = False
                    self._send({"type": "end", "t": self.engine.t,
                                "metrics": self.engine.metrics.to_dict()})
                time.sleep(0.02)
                continue
            t_start = time.monotonic()
            result = self.engine.tick()
            for cmd, disposition in result.dispositions:
                for queued, msg_id in list(pending_acks):
                    if queued.cmd_id == cmd.cmd_id:
                        self._send({"type": "ack", "id": msg_id, "kind": cmd.kind,
                                    "status": disposition})
                        pending_acks.remove((queued, msg_id))
            self._send(frame_message(result, self.engine))
            budget = self.scenario.planner_period / self.speed_factor
            elapsed = time.monotonic() - t_start
            if budget > elapsed:
                time.sleep(budget - elapsed)
        conn.close()
        self._client = None

    def serve(self) -> None:
        """Accept one operator at a time until a shutdown command arrives."""
        with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as sock:
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            sock.bind((self.host, self.port))
            sock.listen(1)
            sock.settimeout(0.5)
            self._sock = sock
            while not self.shutdown_requested:
                try:
                    client, _ = sock.accept()
                except socket.timeout:
                    continue
                client.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                try:
                    self._session(client)
                except (WsClosed, ValueError, OSError):
                    self.client_connected = False
                    self.running = False


def serve(scenario: Scenario, port: int, host: str = "127.0.0.1") -> None:
    BridgeServer(scenario, port, host).serve()
