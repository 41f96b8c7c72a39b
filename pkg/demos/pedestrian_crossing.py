"""
Two pedestrians crossing the robot's path
=========================================

The robot flies 16 m along x while two pedestrians walk across its path.
Their positions are tracked by a constant-velocity Kalman filter, and the
planner replans at every control tick.

Run with ``python demos/pedestrian_crossing.py``; writes ``pedestrian_xy.png``.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from ccbox.scenario import parse_scenario, preset_path
from ccbox.simulator import compute_metrics, run_closed_loop

# %% Simulate
scenario = parse_scenario(preset_path("pedestrian"))
log = run_closed_loop(scenario.sim_setup(), scenario.simulation.duration, seed=0)
metrics = compute_metrics(log)
print(f"{len(log.times)} ticks, collided: {metrics.collided}")
print(f"closest centre distance {metrics.distance.min():.2f} m, smallest box clearance {metrics.clearance.min():.2f} m")
print(f"median solve time {1e3 * np.median(log.solve_time):.1f} ms, "
      f"stale plans {int(log.solver_failed.sum())}")

# %% Paths in the plane
fig, ax = plt.subplots(figsize=(6, 6))
ax.plot(log.robot[:, 0], log.robot[:, 1], label="robot")
for i in range(log.n_obstacles):
    ax.plot(log.obstacles[:, i, 0], log.obstacles[:, i, 1], "--", label=f"pedestrian {i + 1}")
ax.set_aspect("equal")
ax.set_xlabel("x [m]")
ax.set_ylabel("y [m]")
ax.legend()
fig.tight_layout()
fig.savefig("pedestrian_xy.png", dpi=120)
print("wrote pedestrian_xy.png")
