"""Deterministic coin-chase platformer emitting 64x64 RGB frames.

A side-scrolling grid world: one agent, seed-derived platforms and palette,
one coin.  The agent is always settled on a surface (gravity resolves within
the step), which keeps every transition a pure function of (state, action)
and makes the no-op action an exact identity on agent position.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .rng import stream

CELL = 4          # pixels per grid cell
GRID = 16         # 64 / CELL

# action ids
NOOP, LEFT, RIGHT, JUMP, JUMP_LEFT, JUMP_RIGHT, DOWN = range(7)

_BACKGROUNDS = [
    (52, 88, 148), (84, 56, 120), (40, 110, 96),
    (120, 88, 48), (70, 70, 86), (30, 72, 128),
]
_PLATFORM_COLORS = [(150, 100, 60), (96, 128, 72), (130, 130, 140)]
_AGENT_COLOR = (220, 60, 50)
_COIN_COLOR = (240, 200, 40)


@dataclass(frozen=True)
class EnvConfig:
    width_px: int = 64
    height_px: int = 64
    channels: int = 3
    action_count: int = 7
    max_episode_len: int = 1000

    def __post_init__(self):
        if self.width_px != 64 or self.height_px != 64:
            raise ValueError("frame geometry is fixed at 64x64")
        if self.channels != 3:
            raise ValueError("frames are RGB")
        if self.action_count < 2:
            raise ValueError("need at least 2 actions")


@dataclass(frozen=True)
class Layout:
    """Static, seed-derived level geometry."""
    heights: tuple          # per-column surface row (grid rows, 0 = top)
    background: tuple
    platform_color: tuple
    ledges: tuple           # ((x0, x1, row), ...) floating platforms


@dataclass(frozen=True)
class EnvState:
    layout: Layout
    agent_x: int
    agent_y: int            # row the agent stands in (feet row)
    coin_x: int
    coin_y: int
    coin_taken: bool


@dataclass(frozen=True)
class Episode:
    seed: int
    frames: np.ndarray      # (L, 64, 64, 3) uint8
    actions: np.ndarray     # (L,) uint8


def make_layout(seed: int) -> Layout:
    rng = stream(seed, "layout")
    base = int(rng.integers(GRID - 4, GRID - 1))
    heights = np.full(GRID, base, dtype=np.int64)
    # a couple of terrain steps
    for _ in range(int(rng.integers(1, 4))):
        x0 = int(rng.integers(0, GRID - 3))
        w = int(rng.integers(2, 5))
        dh = int(rng.integers(1, 3))
        heights[x0:x0 + w] = np.clip(heights[x0:x0 + w] - dh, 4, GRID - 1)
    ledges = []
    for _ in range(int(rng.integers(1, 3))):
        x0 = int(rng.integers(0, GRID - 4))
        w = int(rng.integers(2, 4))
        hmin = int(heights.min())
        # keep ledges within jump reach of the terrain below them
        row = int(rng.integers(max(3, hmin - 4), max(4, hmin - 1)))
        ledges.append((x0, x0 + w, row))
    return Layout(
        heights=tuple(int(h) for h in heights),
        background=_BACKGROUNDS[int(rng.integers(len(_BACKGROUNDS)))],
        platform_color=_PLATFORM_COLORS[int(rng.integers(len(_PLATFORM_COLORS)))],
        ledges=tuple(ledges),
    )


def _surface_below(layout: Layout, x: int, from_row: int) -> int:
    """Highest standing row at column x that is >= from_row (gravity settle)."""
    candidates = [layout.heights[x] - 1]
    for x0, x1, row in layout.ledges:
        if x0 <= x < x1:
            candidates.append(row - 1)
    standing = [r for r in candidates if r >= from_row]
    return min(standing) if standing else layout.heights[x] - 1


def _surface_above(layout: Layout, x: int, from_row: int, reach: int = 3) -> int | None:
    """Nearest standing row above from_row within jump reach, if any."""
    candidates = [layout.heights[x] - 1]
    for x0, x1, row in layout.ledges:
        if x0 <= x < x1:
            candidates.append(row - 1)
    above = [r for r in candidates if from_row - reach <= r < from_row]
    return max(above) if above else None


def initial_state(seed: int) -> EnvState:
    layout = make_layout(seed)
    rng = stream(seed, "spawn")
    ax = int(rng.integers(0, GRID))
    ay = _surface_below(layout, ax, 0)
    while True:
        cx = int(rng.integers(0, GRID))
        cy = _surface_below(layout, cx, 0)
        if (cx, cy) != (ax, ay):
            break
    return EnvState(layout=layout, agent_x=ax, agent_y=ay,
                    coin_x=cx, coin_y=cy, coin_taken=False)


def step(state: EnvState, action: int, config: EnvConfig = EnvConfig()):
    """Pure transition; returns (next_state, rendered_next_frame)."""
    if not 0 <= action < config.action_count:
        raise ValueError(f"action {action} outside [0, {config.action_count})")
    x, y = state.agent_x, state.agent_y
    layout = state.layout
    if action == NOOP:
        pass
    elif action in (LEFT, RIGHT):
        nx = max(0, min(GRID - 1, x + (1 if action == RIGHT else -1)))
        x, y = nx, _surface_below(layout, nx, y)
    elif action == JUMP:
        up = _surface_above(layout, x, y)
        if up is not None:
            y = up
    elif action in (JUMP_LEFT, JUMP_RIGHT):
        nx = max(0, min(GRID - 1, x + (1 if action == JUMP_RIGHT else -1)))
        up = _surface_above(layout, nx, y + 1)
        if up is not None:
            x, y = nx, up
        else:
            x, y = nx, _surface_below(layout, nx, y)
    elif action == DOWN:
        below = _surface_below(layout, x, y + 1)
        y = below
    taken = state.coin_taken or (x == state.coin_x and y == state.coin_y)
    nxt = replace(state, agent_x=x, agent_y=y, coin_taken=taken)
    return nxt, render(nxt)


def render(state: EnvState) -> np.ndarray:
    frame = np.empty((64, 64, 3), dtype=np.uint8)
    frame[:] = state.layout.background
    color = np.array(state.layout.platform_color, dtype=np.uint8)
    for x in range(GRID):
        top = state.layout.heights[x] * CELL
        frame[top:, x * CELL:(x + 1) * CELL] = color
        frame[top:top + 1, x * CELL:(x + 1) * CELL] = np.minimum(color.astype(np.int64) + 40, 255).astype(np.uint8)
    for x0, x1, row in state.layout.ledges:
        frame[row * CELL:row * CELL + 2, x0 * CELL:x1 * CELL] = color
    if not state.coin_taken:
        cy, cx = state.coin_y * CELL, state.coin_x * CELL
        frame[cy:cy + CELL, cx:cx + CELL] = _COIN_COLOR
        frame[cy + 1:cy + 3, cx + 1:cx + 3] = (255, 240, 150)
    ay, ax = state.agent_y * CELL, state.agent_x * CELL
    frame[ay:ay + CELL, ax:ax + CELL] = _AGENT_COLOR
    frame[ay + 1, ax + 2] = (255, 255, 255)  # eye pixel, breaks left/right symmetry of the sprite
    return frame


def generate_episode(seed: int, length: int, config: EnvConfig = EnvConfig()) -> Episode:
    """Random-policy rollout, a pure function of (seed, length, config)."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if length > config.max_episode_len:
        raise ValueError(f"length {length} exceeds max_episode_len {config.max_episode_len}")
    policy = stream(seed, "policy")
    state = initial_state(seed)
    frames = np.empty((length, 64, 64, 3), dtype=np.uint8)
    actions = np.empty(length, dtype=np.uint8)
    frames[0] = render(state)
    for t in range(length):
        action = int(policy.integers(0, config.action_count))
        actions[t] = action
        state, frame = step(state, action, config)
        if t + 1 < length:
            frames[t + 1] = frame
    return Episode(seed=seed, frames=frames, actions=actions)
