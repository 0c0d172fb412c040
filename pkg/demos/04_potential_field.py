"""Laser scan to repulsive force to motion command.

Walks the predator straight at the arena wall and prints how the
potential field reacts: the net repulsion grows, the commanded speed
scales down through the soft zone, and the escape direction swings away
from the obstacle before the hard zone would ever be entered.
"""

import math

from preynet.control import (
    ApfParams,
    FsmState,
    fsm_step,
    least_repulsive_direction,
    repulsive_field,
    soft_scale,
)
from preynet.sim import World, simulate_laser

params = ApfParams()
world = World()
world.predator.theta = 0.0  # facing the far wall along +x
world.prey.x, world.prey.y = 1.0, 1.0  # parked behind, out of the scan

print("  dist to wall | net force | speed factor | escape bearing | mode")
state = FsmState()
for x in (2.0, 6.5, 7.5, 8.2, 8.6, 8.9):
    world.predator.x = x
    scan = simulate_laser(world)
    mags, (fx, fy) = repulsive_field(scan, params)
    force = math.hypot(fx, fy)
    scale = soft_scale(scan, params)
    escape = least_repulsive_direction(scan.angles, mags,
                                       params.window_half_rad)
    cmd = fsm_step(state, None, None, scan, dt=0.05, params=params)
    wall = world.arena.width - x
    print(f"      {wall:5.2f} m  | {force:9.4f} |     {scale:4.2f}     |"
          f"    {math.degrees(escape):+7.1f}    | {state.mode}"
          f"  (v={cmd.v:.2f}, w={cmd.w:+.2f})")

print("\nthe speed factor hits 0 before the hull could touch:"
      f" hard zone {params.r_hard} m vs body radius 0.46 m")
