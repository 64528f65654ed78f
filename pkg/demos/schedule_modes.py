"""Decoupled, energy-driven and rank-informed schedules on the three-node network.

The tank starts low and must stay above 909.5 ft, so the pump has to run.
Coupled modes trade energy cost for faster pipe turnover, which the
closed-loop chlorine controller then exploits.
"""
import sys
import time

import numpy as np
from importlib.resources import files

from aquactrl.hydsim import SegmentPlan, segments_from_velocities, simulate_hydraulics
from aquactrl.netmodel import load_network
from aquactrl.sched import FrameworkConfig, run_framework
from aquactrl.wqmpc import MpcConfig, run_closed_loop

hours = int(sys.argv[1]) if len(sys.argv) > 1 else 6
net = load_network(files("aquactrl") / "data" / "three_node.json")
modes = {
    "decoupled": {},
    "energy": dict(targets=["TK1"], thetas=[1e8]),
    "rank": dict(targets=["TK1"], l_r=1, theta3=1e6),
}

hyd = {}
for mode, extra in modes.items():
    t0 = time.perf_counter()
    res = run_framework(net, FrameworkConfig(mode=mode, steps=hours, scenario_count=20, tank_min=[909.5], **extra),
                        w0=[908.0])
    print(f"{mode:>9}: cost ${res.total_cost:8.2f}  speeds {np.round(res.speeds.ravel(), 2)}"
          f"  events {len(res.events)}  ({time.perf_counter() - t0:.1f} s)")
    hyd[mode] = simulate_hydraulics(net, res.speeds, horizon=hours * 3600)

vel = [np.abs(s.pipe_velocity(net)) for h in hyd.values() for s in h]
plan = SegmentPlan.from_counts(net, segments_from_velocities([p.length for p in net.pipes], vel, net.dt_wq))
cfg = MpcConfig(y_ref=0.5, u_max=500.0, r_weight=1e-4, horizon=180, block=15)
for mode, h in hyd.items():
    cl = run_closed_loop(net, h, plan, cfg)
    print(f"{mode:>9}: band entry {cl.band_entry} s, setpoint {cl.time_to_setpoint} s,"
          f" injected {cl.injected_mass_mg:.3g} mg")
