"""The three advection test problems and their target trajectories."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fom import MIN_GRID_POINTS, FomSystem, SpatialGrid, TimeGrid

LENGTH = 100.0
M_FULL = 3200
N_FULL = 3360
T_FINAL = 140.0
CFL = 4 / 3
WAVE_SPEED = 1.0
N_CONTROLS = 40
MU = 1e-3


@dataclass(frozen=True)
class ExampleParams:
    center: float
    width2: float
    v: float
    kink_fraction: float


EXAMPLES = {
    1: ExampleParams(center=LENGTH / 12, width2=7.0, v=0.5 * WAVE_SPEED, kink_fraction=3 / 4),
    2: ExampleParams(center=LENGTH / 30, width2=0.5, v=0.55 * WAVE_SPEED, kink_fraction=3 / 4),
    3: ExampleParams(center=LENGTH / 30, width2=0.5, v=0.6 * WAVE_SPEED, kink_fraction=9 / 10),
}


@dataclass(frozen=True)
class TargetDescription:
    """How ``q_d`` was built: the initial profile translated along a bent path.

    The path moves with the advection speed ``v_before`` until
    ``kink_time`` and with ``v_after`` afterwards.
    """

    kind: str
    version: int
    kink_time: float
    v_before: float
    v_after: float


def initial_profile(x, params: ExampleParams) -> np.ndarray:
    return np.exp(-((x - params.center) ** 2) / params.width2)


def kinked_path(t, v_before, v_after, kink_time) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return np.where(t <= kink_time, v_before * t, v_before * kink_time + v_after * (t - kink_time))


def kinked_target(grid: SpatialGrid, tg: TimeGrid, params: ExampleParams, v_after: float = WAVE_SPEED):
    """Translate the periodic extension of the initial profile along a kinked path.

    Up to the kink the target is the uncontrolled solution; afterwards the
    wave travels at ``v_after``. Kept in one place so it can be swapped.
    """
    kink = params.kink_fraction * tg.t_f
    shift = kinked_path(tg.t, params.v, v_after, kink)
    # wrap the source point back into the reference period (0, L]
    xs = grid.x[:, None] - shift[None, :]
    xs = grid.length - np.mod(grid.length - xs, grid.length)
    desc = TargetDescription("kinked-translation", 1, kink, params.v, v_after)
    return initial_profile(xs, params), desc


def grid_sizes(scale: float) -> tuple[int, int]:
    if not scale > 0:
        raise ValueError("scale must be positive")
    m = int(round(M_FULL * scale))
    n = int(round(N_FULL * scale))
    if m < MIN_GRID_POINTS:
        raise ValueError(f"scale {scale} gives m={m} < {MIN_GRID_POINTS}")
    return m, n


def build_example(example: int, scale: float = 1.0, mu: float = MU):
    """System, time grid and target description of test problem ``example`` (1, 2 or 3).

    Scaled instances keep the CFL number fixed and scale ``m`` and ``n``
    proportionally.
    """
    if example not in EXAMPLES:
        raise ValueError(f"unknown example {example}; choose 1, 2 or 3")
    params = EXAMPLES[example]
    m, n = grid_sizes(scale)
    grid = SpatialGrid(m, LENGTH)
    tg = TimeGrid.from_cfl(T_FINAL, CFL, grid.dx, WAVE_SPEED)
    if tg.n != n:
        raise ValueError(f"scale {scale} is inconsistent with the CFL number (n={tg.n}, expected {n})")
    q_d, desc = kinked_target(grid, tg, params)
    sys = FomSystem.build(grid, params.v, N_CONTROLS, initial_profile(grid.x, params), q_d, mu)
    return sys, tg, desc
