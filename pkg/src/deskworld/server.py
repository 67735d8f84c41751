"""Interactive play service: the user supplies actions, the model the frames.

The protocol is JSON over a persistent bidirectional connection:

    client -> {"type": "reset", "seed"?, "session"?}
              {"type": "act", "session", "action"}
    server -> {"type": "frames", "session", "step", "png_base64": [...]}
              {"type": "error", "code", "msg"}

Frames travel as base64 PNGs (8-bit RGB, no interlacing).  `PlayService`
holds all game logic and is transport-free; the FastAPI app wraps it in a
WebSocket endpoint and serves the frontend's static build if present.
"""

from __future__ import annotations

import base64
import io
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from PIL import Image

from .autodiff import Tensor, concat, embedding
from .dynamics import ConditioningMode
from .env import EnvConfig, generate_episode
from .rng import fold_key, stream
from .tokenizer import unit_to_frames

N_CONDITIONING = 4


def encode_png(frame: np.ndarray) -> str:
    """uint8 (H, W, 3) -> base64 PNG, 8-bit RGB, no interlace."""
    buf = io.BytesIO()
    Image.fromarray(frame, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class _Session:
    def __init__(self, session_id: str, seed: int, tokens: np.ndarray,
                 history: Tensor, frames: list):
        self.id = session_id
        self.seed = seed
        self.tokens = tokens          # (1, t, N)
        self.history = history        # (1, t-1, dlat) action latents
        self.frames = frames          # list of uint8 frames already sent
        self.step = 0
        self.rng = stream(fold_key(session_id), "play")
        self.lock = threading.Lock()


class PlayService:
    """Session bookkeeping and frame generation for the play protocol."""

    def __init__(self, tokenizer, dynamics, *, lam=None,
                 env_config: EnvConfig = EnvConfig(), steps: int = 25,
                 temperature: float = 1.0):
        self.tokenizer = tokenizer
        self.dynamics = dynamics
        self.lam = lam
        self.env_config = env_config
        self.steps = steps
        self.temperature = temperature
        self.sessions: dict[str, _Session] = {}
        self._counter = 0
        self._lock = threading.Lock()
        if dynamics.cfg.mode is ConditioningMode.GROUND_TRUTH:
            self.action_count = dynamics.cfg.action_vocab
        elif lam is not None:
            self.action_count = lam.cfg.codes
        else:
            raise ValueError("latent-action dynamics needs the LAM codebook")

    # -- protocol ------------------------------------------------------
    def handle(self, message: dict) -> dict:
        if not isinstance(message, dict):
            return _error("bad_message", "message must be a JSON object")
        mtype = message.get("type")
        if mtype == "reset":
            return self._reset(message)
        if mtype == "act":
            return self._act(message)
        return _error("bad_type", f"unknown message type {mtype!r}")

    def _reset(self, message: dict) -> dict:
        seed = int(message.get("seed", 0))
        with self._lock:
            session_id = message.get("session") or f"s{seed}-{self._counter}"
            self._counter += 1
            episode = generate_episode(seed, N_CONDITIONING, self.env_config)
            cond = episode.frames[None]                       # (1, 4, H, W, C)
            tokens = self.tokenizer.encode(cond)
            dlat = self.dynamics.cfg.action_latent_dim
            null = self.dynamics.params["null_action"].detach().reshape(1, 1, dlat)
            history = Tensor(np.zeros((1, N_CONDITIONING - 1, dlat),
                                      dtype=self.dynamics.dtype)) + null
            shown = unit_to_frames(self.tokenizer.decode(tokens))[0]
            session = _Session(session_id, seed, tokens, history, list(shown))
            self.sessions[session_id] = session
        return {"type": "frames", "session": session_id, "step": 0,
                "png_base64": [encode_png(f) for f in session.frames]}

    def _act(self, message: dict) -> dict:
        session_id = message.get("session")
        session = self.sessions.get(session_id)
        if session is None:
            return _error("unknown_session", f"no session {session_id!r}")
        try:
            action = int(message["action"])
        except (KeyError, TypeError, ValueError):
            return _error("bad_action", "act needs an integer 'action'")
        if not 0 <= action < self.action_count:
            return _error("action_out_of_range",
                          f"action {action} outside [0, {self.action_count})")
        with session.lock:
            lat = self._action_latent(action)
            session.history = concat([session.history, lat], axis=1)
            # slide the window if the clip would exceed the model's horizon
            if session.tokens.shape[1] + 1 > self.dynamics.cfg.max_frames:
                session.tokens = session.tokens[:, 1:]
                session.history = Tensor(session.history.data[:, 1:])
            nxt = self.dynamics.decode_frame(session.tokens, session.history,
                                             steps=self.steps,
                                             temperature=self.temperature,
                                             rng=session.rng)
            session.tokens = np.concatenate([session.tokens, nxt[:, None]], axis=1)
            frame = unit_to_frames(self.tokenizer.decode(nxt[:, None]))[0, 0]
            session.frames.append(frame)
            session.step += 1
            return {"type": "frames", "session": session.id, "step": session.step,
                    "png_base64": [encode_png(frame)]}

    def _action_latent(self, action: int) -> Tensor:
        idx = np.array([[action]])
        if self.dynamics.cfg.mode is ConditioningMode.GROUND_TRUTH:
            table = self.dynamics.params["gt_action_embed"]
        else:
            table = self.lam.params["codebook"]
        return Tensor(embedding(table, idx).data.copy())


def _error(code: str, msg: str) -> dict:
    return {"type": "error", "code": code, "msg": msg}


def build_app(service: PlayService, static_dir=None):
    """FastAPI app exposing the play protocol at /ws plus static assets."""
    app = FastAPI(title="deskworld play server")
    app.state.service = service

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        try:
            while True:
                message = await ws.receive_json()
                await ws.send_json(service.handle(message))
        except WebSocketDisconnect:
            pass

    static_dir = Path(static_dir) if static_dir else None
    if static_dir and static_dir.is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app


def serve(service: PlayService, port: int = 8000, static_dir=None):
    """Run the play server (blocking)."""
    import uvicorn
    uvicorn.run(build_app(service, static_dir), host="127.0.0.1", port=port)
