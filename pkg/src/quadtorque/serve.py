"""Live policy server: runs env + policy at the control rate and speaks a
newline-delimited JSON protocol over TCP.

Messages (one JSON object per line):
  server -> client
    {"type": "info", ...}            once on connect: model + ranges
    {"type": "state", ...}           50 Hz downsample of the 500 Hz loop
  client -> server
    {"type": "command", "vx": f, "vy": f, "wz": f}   applied next control step
    {"type": "reset"}

The same port accepts an RFC 6455 WebSocket upgrade (the request starts with
an HTTP GET); each text frame then carries one JSON message, so browsers can
connect without a bridge. Slow clients never stall the control loop: each
client has a bounded outbound queue that drops the oldest state first.
"""

from __future__ import annotations

import base64
import hashlib
import json
import queue
import socket
import struct
import threading
import time

import numpy as np

from .config import ExperimentConfig
from .checkpoint import PolicyCheckpoint
from .env import VecQuadEnv
from . import nets

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
CLIENT_QUEUE_DEPTH = 64


# ---------------------------------------------------------------------------
# websocket framing (server side, text frames only)


def ws_accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def ws_encode_text(payload: bytes) -> bytes:
    n = len(payload)
    if n < 126:
        header = struct.pack("!BB", 0x81, n)
    elif n < 1 << 16:
        header = struct.pack("!BBH", 0x81, 126, n)
    else:
        header = struct.pack("!BBQ", 0x81, 127, n)
    return header + payload


def ws_decode_frames(buf: bytearray):
    """Yield (opcode, payload) for complete frames; trims buf in place."""
    while True:
        if len(buf) < 2:
            return
        b0, b1 = buf[0], buf[1]
        opcode = b0 & 0x0F
        masked = b1 & 0x80
        length = b1 & 0x7F
        idx = 2
        if length == 126:
            if len(buf) < 4:
                return
            length = struct.unpack("!H", bytes(buf[2:4]))[0]
            idx = 4
        elif length == 127:
            if len(buf) < 10:
                return
            length = struct.unpack("!Q", bytes(buf[2:10]))[0]
            idx = 10
        mask = b""
        if masked:
            if len(buf) < idx + 4:
                return
            mask = bytes(buf[idx:idx + 4])
            idx += 4
        if len(buf) < idx + length:
            return
        payload = bytes(buf[idx:idx + length])
        if masked:
            payload = bytes(c ^ mask[i % 4] for i, c in enumerate(payload))
        del buf[:idx + length]
        yield opcode, payload


# ---------------------------------------------------------------------------


class _Client:
    def __init__(self, sock: socket.socket, websocket: bool):
        self.sock = sock
        self.websocket = websocket
        self.outbox: queue.Queue = queue.Queue(CLIENT_QUEUE_DEPTH)
        self.alive = True

    def enqueue(self, line: bytes) -> None:
        # freshest-first: drop the oldest message rather than block the sim
        while True:
            try:
                self.outbox.put_nowait(line)
                return
            except queue.Full:
                try:
                    self.outbox.get_nowait()
                except queue.Empty:
                    pass


class TeleopServer:
    """Wall-clock-paced control loop plus a broadcast/command socket."""

    def __init__(self, exp: ExperimentConfig, ckpt: PolicyCheckpoint,
                 port: int, host: str = "127.0.0.1", fast: bool = False,
                 state_hz: float = 50.0):
        self.exp = exp
        self.ckpt = ckpt
        self.fast = fast
        self.env = VecQuadEnv(exp, 1, seed=ckpt.seed, mode="eval", auto_reset=True)
        self.state_hz = state_hz
        self.listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.listener.bind((host, port))
        self.listener.listen(8)
        self.port = self.listener.getsockname()[1]
        self.clients: list[_Client] = []
        self._lock = threading.Lock()
        self._pending_command = None
        self._pending_reset = False
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._reward_total = 0.0

    # -- message builders

    def _info_message(self) -> dict:
        r = self.exp.env.command_ranges
        return {
            "type": "info",
            "model": "quadtorque policy",
            "iteration": self.ckpt.iteration,
            "obs_dim": self.ckpt.obs_dim,
            "act_dim": self.ckpt.act_dim,
            "control_hz": self.exp.sim.control_frequency,
            "state_hz": self.state_hz,
            "command_ranges": {k: list(v) for k, v in r.items()},
            "fingerprint": self.ckpt.fingerprint,
        }

    def _state_message(self, torques, reward) -> dict:
        st = self.env.state
        return {
            "type": "state",
            "time": float(st.time[0]),
            "base_pos": np.round(st.base_pos[0], 5).tolist(),
            "base_quat": np.round(st.base_quat[0], 6).tolist(),
            "joint_pos": np.round(st.joint_pos[0], 5).tolist(),
            "foot_contact": st.foot_contact[0].astype(int).tolist(),
            "torques": np.round(torques, 3).tolist(),
            "reward": float(reward),
            "command": np.round(self.env.commands[0], 4).tolist(),
        }

    # -- networking

    def _broadcast(self, message: dict) -> None:
        line = (json.dumps(message) + "\n").encode()
        with self._lock:
            clients = list(self.clients)
        for c in clients:
            c.enqueue(line)

    def _writer(self, client: _Client) -> None:
        try:
            while client.alive and not self._stop.is_set():
                try:
                    line = client.outbox.get(timeout=0.2)
                except queue.Empty:
                    continue
                payload = ws_encode_text(line.rstrip(b"\n")) if client.websocket else line
                client.sock.sendall(payload)
        except OSError:
            pass
        finally:
            self._drop(client)

    def _handle_message(self, client: _Client, text: str) -> None:
        try:
            msg = json.loads(text)
        except json.JSONDecodeError:
            client.enqueue(b'{"type": "error", "error": "malformed json"}\n')
            return
        kind = msg.get("type")
        if kind == "command":
            r = self.exp.env.command_ranges
            cmd = np.array([
                np.clip(float(msg.get("vx", 0.0)), *r["vx"]),
                np.clip(float(msg.get("vy", 0.0)), *r["vy"]),
                np.clip(float(msg.get("wz", 0.0)), *r["yaw_rate"]),
            ])
            with self._lock:
                self._pending_command = cmd
        elif kind == "reset":
            with self._lock:
                self._pending_reset = True
        else:
            client.enqueue(json.dumps(
                {"type": "error", "error": f"unknown message type {kind!r}"})
                .encode() + b"\n")

    def _reader(self, client: _Client) -> None:
        buf = bytearray()
        try:
            while client.alive and not self._stop.is_set():
                data = client.sock.recv(4096)
                if not data:
                    break
                buf.extend(data)
                if client.websocket:
                    for opcode, payload in ws_decode_frames(buf):
                        if opcode == 0x8:        # close
                            client.alive = False
                        elif opcode == 0x1:
                            self._handle_message(client, payload.decode())
                else:
                    while b"\n" in buf:
                        line, _, rest = bytes(buf).partition(b"\n")
                        buf = bytearray(rest)
                        if line.strip():
                            self._handle_message(client, line.decode())
        except OSError:
            pass
        finally:
            self._drop(client)

    def _drop(self, client: _Client) -> None:
        with self._lock:
            if client in self.clients:
                self.clients.remove(client)
        client.alive = False
        try:
            client.sock.close()
        except OSError:
            pass

    def _accept_loop(self) -> None:
        self.listener.settimeout(0.2)
        while not self._stop.is_set():
            try:
                sock, _ = self.listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            threading.Thread(target=self._setup_client, args=(sock,),
                             daemon=True).start()

    def _setup_client(self, sock: socket.socket) -> None:
        # sniff the first bytes to spot an HTTP/WebSocket upgrade; listen-only
        # NDJSON clients send nothing, so fall through quickly on silence
        sock.settimeout(0.5)
        try:
            first = sock.recv(4096)
        except socket.timeout:
            first = b""
        except OSError:
            sock.close()
            return
        websocket = first.startswith(b"GET ")
        leftover = b""
        if websocket:
            while b"\r\n\r\n" not in first:
                more = sock.recv(4096)
                if not more:
                    sock.close()
                    return
                first += more
            head, _, leftover = first.partition(b"\r\n\r\n")
            headers = {}
            for line in head.decode(errors="replace").split("\r\n")[1:]:
                if ":" in line:
                    k, v = line.split(":", 1)
                    headers[k.strip().lower()] = v.strip()
            key = headers.get("sec-websocket-key")
            if key is None:
                sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
                sock.close()
                return
            sock.sendall(
                b"HTTP/1.1 101 Switching Protocols\r\n"
                b"Upgrade: websocket\r\nConnection: Upgrade\r\n"
                b"Sec-WebSocket-Accept: " + ws_accept_key(key).encode()
                + b"\r\n\r\n")
        sock.settimeout(None)
        client = _Client(sock, websocket)
        info = (json.dumps(self._info_message()) + "\n").encode()
        client.enqueue(info)
        with self._lock:
            self.clients.append(client)
        threading.Thread(target=self._writer, args=(client,), daemon=True).start()
        # NDJSON clients may have pipelined bytes after the first recv
        if not websocket and first:
            buf = bytearray(first)
            while b"\n" in buf:
                line, _, rest = bytes(buf).partition(b"\n")
                buf = bytearray(rest)
                if line.strip():
                    self._handle_message(client, line.decode())
        elif websocket and leftover:
            buf = bytearray(leftover)
            for opcode, payload in ws_decode_frames(buf):
                if opcode == 0x1:
                    self._handle_message(client, payload.decode())
        self._reader(client)

    # -- control loop

    def _control_loop(self) -> None:
        env = self.env
        obs = env.reset()
        dt = self.exp.sim.dt
        next_tick = time.monotonic()
        # state messages go out on a wall-clock schedule so the stream holds
        # its rate even when the sim cannot keep up with real time
        emit_period = 1.0 / self.state_hz
        next_emit = time.monotonic()
        while not self._stop.is_set():
            with self._lock:
                cmd = self._pending_command
                self._pending_command = None
                do_reset = self._pending_reset
                self._pending_reset = False
            if do_reset:
                obs = env.reset()
            if cmd is not None:
                env.set_commands(cmd[None, :], lock=True)
            act, _ = nets.forward(
                self.ckpt.policy,
                self.ckpt.norm.normalize(obs).astype(self.ckpt.policy.dtype))
            obs, reward, done, info = env.step(act.astype(float))
            torques = np.clip(act[0] * self.exp.env.action_scale,
                              -self.exp.env.torque_limit, self.exp.env.torque_limit)
            now = time.monotonic()
            if now >= next_emit:
                self._broadcast(self._state_message(torques, float(reward[0])))
                next_emit = max(next_emit + emit_period, now - emit_period)
            if not self.fast:
                next_tick += dt
                delay = next_tick - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                else:
                    next_tick = time.monotonic()   # fell behind; don't spiral

    # -- lifecycle

    def start(self) -> None:
        for target in (self._accept_loop, self._control_loop):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self._stop.set()
        try:
            self.listener.close()
        except OSError:
            pass
        for t in self._threads:
            t.join(timeout=2.0)
        with self._lock:
            clients = list(self.clients)
        for c in clients:
            self._drop(c)

    def serve_forever(self) -> None:
        self.start()
        try:
            while True:
                time.sleep(0.5)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()
