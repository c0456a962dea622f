"""Deterministic 2-D sprite pouring environment.

A cup holding beads moves in a unit square (x right, y down) under
velocity commands and tilts to release beads, which fall straight down
into a container (deposited) or onto the floor (spilled). Action vectors
are 7-d for interface parity with a 7-DoF arm: dims 0..2 command
(x, y, tilt) velocities, dims 3..6 are inert. The terminal reward is the
percentage of beads deposited; success means at least one bead in.

All transitions and rendering are pure functions of (state, action), and
reset is a pure function of the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import EnvConfig
from .exceptions import ValidationError

CUP_HW = 0.055   # cup half-width, world units
CUP_HH = 0.075   # cup half-height
BEAD_R = 0.013
FLOOR_Y = 0.95
CUP_Y_MAX = 0.70  # cup always stays above the container opening

BG_COLOR = (38, 38, 46)
CUP_COLOR = (66, 110, 210)
CONTAINER_COLOR = (60, 150, 90)
BEAD_COLOR = (240, 202, 60)
FLOOR_COLOR = (70, 64, 58)


def lip_offset(tilt: float) -> float:
    """Horizontal offset of the pouring lip from the cup center."""
    return CUP_HW * math.cos(tilt) + CUP_HH * math.sin(tilt)


@dataclass
class Bead:
    status: str = "cup"        # cup | falling | deposited | spilled
    x: float = 0.0
    y: float = 0.0
    order: int = 0             # landing order, for deterministic stacking


@dataclass
class EnvState:
    cup_x: float
    cup_y: float
    tilt: float
    container_x: float
    beads: list[Bead]
    t: int = 0
    n_landed: int = 0


class SpritePourEnv:
    """Kinematic cup-and-beads pouring task."""

    def __init__(self, cfg: EnvConfig | None = None):
        self.cfg = cfg or EnvConfig()
        self.cfg.validate()
        self.state: EnvState | None = None
        self._grid_cache: tuple[np.ndarray, np.ndarray] | None = None

    # -- lifecycle ---------------------------------------------------------

    def reset(self, seed: int) -> np.ndarray:
        cfg = self.cfg
        rng = np.random.default_rng(seed)
        cup_x = float(rng.uniform(*cfg.cup_start_x_range))
        cup_y = float(rng.uniform(*cfg.cup_start_y_range))
        container_x = float(rng.uniform(*cfg.container_x_range))
        beads = [Bead() for _ in range(cfg.n_beads)]
        self.state = EnvState(cup_x=cup_x, cup_y=cup_y, tilt=0.0,
                              container_x=container_x, beads=beads)
        return self.joints()

    def _require_state(self) -> EnvState:
        if self.state is None:
            raise ValidationError("environment used before reset")
        return self.state

    # -- dynamics ----------------------------------------------------------

    def step(self, action: np.ndarray) -> tuple[np.ndarray, bool]:
        """Apply one 7-d action; returns (joints, done)."""
        s = self._require_state()
        cfg = self.cfg
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape[0] != 7:
            raise ValidationError(f"action must have 7 dims, got {a.shape[0]}")
        if not np.isfinite(a).all():
            raise ValidationError("action contains non-finite entries")

        dx = float(np.clip(a[0], -cfg.v_max, cfg.v_max))
        dy = float(np.clip(a[1], -cfg.v_max, cfg.v_max))
        dt = float(np.clip(a[2], -cfg.w_max, cfg.w_max))
        s.cup_x = float(np.clip(s.cup_x + dx, CUP_HW, 1.0 - CUP_HW))
        s.cup_y = float(np.clip(s.cup_y + dy, CUP_HH, CUP_Y_MAX))
        s.tilt = float(np.clip(s.tilt + dt - cfg.tilt_spring, 0.0, cfg.tilt_max))

        # Falling beads advance; landing outcome depends on where they cross
        # the container opening or the floor.
        for bead in s.beads:
            if bead.status != "falling":
                continue
            bead.y += cfg.fall_speed
            in_container_x = abs(bead.x - s.container_x) <= cfg.container_half_w
            if in_container_x and bead.y >= cfg.container_top_y:
                bead.status = "deposited"
                bead.order = s.n_landed
                s.n_landed += 1
            elif not in_container_x and bead.y >= FLOOR_Y - BEAD_R:
                bead.status = "spilled"
                bead.y = FLOOR_Y - BEAD_R
                bead.order = s.n_landed
                s.n_landed += 1

        # Pouring releases one bead per step while tilted past the threshold.
        if s.tilt >= cfg.pour_tilt:
            for bead in s.beads:
                if bead.status == "cup":
                    bead.status = "falling"
                    bead.x = s.cup_x + lip_offset(s.tilt)
                    bead.y = s.cup_y + 0.02
                    break

        s.t += 1
        resolved = all(b.status in ("deposited", "spilled") for b in s.beads)
        done = s.t >= cfg.t_max or resolved
        return self.joints(), done

    def joints(self) -> np.ndarray:
        """7-d state vector: (x, y, tilt) plus four inert dims."""
        s = self._require_state()
        out = np.zeros(7, dtype=np.float32)
        out[0], out[1], out[2] = s.cup_x, s.cup_y, s.tilt
        return out

    def deposited(self) -> int:
        return sum(b.status == "deposited" for b in self._require_state().beads)

    def reward(self) -> float:
        """Percentage of beads deposited so far."""
        return 100.0 * self.deposited() / self.cfg.n_beads

    # -- rendering ---------------------------------------------------------

    def _grid(self) -> tuple[np.ndarray, np.ndarray]:
        if self._grid_cache is None:
            h, w = self.cfg.render_h, self.cfg.render_w
            v = (np.arange(h, dtype=np.float64) + 0.5) / h
            u = (np.arange(w, dtype=np.float64) + 0.5) / w
            self._grid_cache = (v[:, None], u[None, :])
        return self._grid_cache

    def render(self) -> np.ndarray:
        """Current scene as (render_h, render_w, 3) uint8."""
        s = self._require_state()
        cfg = self.cfg
        v, u = self._grid()
        img = np.empty((cfg.render_h, cfg.render_w, 3), dtype=np.uint8)
        img[:] = BG_COLOR
        img[v[:, 0] >= FLOOR_Y] = FLOOR_COLOR

        box = (np.abs(u - s.container_x) <= cfg.container_half_w) & \
              (v >= cfg.container_top_y) & (v <= FLOOR_Y)
        img[box] = CONTAINER_COLOR

        cos_t, sin_t = math.cos(s.tilt), math.sin(s.tilt)
        du, dv = u - s.cup_x, v - s.cup_y
        ru = du * cos_t + dv * sin_t
        rv = -du * sin_t + dv * cos_t
        cup = (np.abs(ru) <= CUP_HW) & (np.abs(rv) <= CUP_HH)
        img[cup] = CUP_COLOR

        for bx, by in self._bead_positions():
            hit = (u - bx) ** 2 + (v - by) ** 2 <= BEAD_R ** 2
            img[hit] = BEAD_COLOR
        return img

    def _bead_positions(self) -> list[tuple[float, float]]:
        s = self._require_state()
        cfg = self.cfg
        cos_t, sin_t = math.cos(s.tilt), math.sin(s.tilt)
        pts = []
        held = [b for b in s.beads if b.status == "cup"]
        for i, _ in enumerate(held):
            # 3 x 4 grid of rest offsets inside the cup, rotated with it.
            ox = (i % 3 - 1) * 0.028
            oy = (i // 3) * 0.032 - 0.04
            pts.append((s.cup_x + ox * cos_t - oy * sin_t,
                        s.cup_y + ox * sin_t + oy * cos_t))
        for b in s.beads:
            if b.status == "falling":
                pts.append((b.x, b.y))
            elif b.status == "deposited":
                col, row = b.order % 4, b.order // 4
                pts.append((s.container_x + (col - 1.5) * 2.2 * BEAD_R,
                            FLOOR_Y - BEAD_R - row * 2.2 * BEAD_R))
            elif b.status == "spilled":
                pts.append((b.x, b.y))
        return pts


@dataclass
class ScriptedExpert:
    """Proportional controller that carries the cup over the container,
    tilts, and pours. Optional seeded Gaussian action noise.

    Pouring has hysteresis: it starts once the cup is within align_tol of
    the hover point and stops only if it drifts past stop_tol, so moderate
    noise degrades the pour gradually instead of aborting it. A nonzero
    target_bias shifts the hover point sideways, which makes the pour land
    beside the container (the canonical failed-demonstration mode)."""

    env: SpritePourEnv
    gain: float = 0.6
    align_tol: float = 0.015
    stop_tol: float = 0.06
    hover_y: float = 0.42
    noise: float = 0.0
    target_bias: float = 0.0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    pouring: bool = False

    def action(self) -> np.ndarray:
        s = self.env._require_state()
        cfg = self.env.cfg
        target_x = s.container_x - lip_offset(cfg.tilt_max) + self.target_bias
        ex, ey = target_x - s.cup_x, self.hover_y - s.cup_y
        err = max(abs(ex), abs(ey))
        if self.pouring:
            if err > self.stop_tol:
                self.pouring = False
        elif err <= self.align_tol:
            self.pouring = True
        a = np.zeros(7, dtype=np.float64)
        a[0], a[1] = self.gain * ex, self.gain * ey
        a[2] = cfg.w_max if self.pouring else -cfg.w_max
        if self.noise > 0.0:
            a = a + self.rng.normal(0.0, self.noise, size=7)
        return a.astype(np.float32)
