"""Net1 hydraulics, state size and sensor controllability over one day."""
import numpy as np
from importlib.resources import files

from aquactrl.ctrb import gramian_metrics
from aquactrl.hydsim import SegmentPlan, segments_from_velocities, simulate_hydraulics
from aquactrl.netmodel import load_network
from aquactrl.wqsim import assemble_wq

net = load_network(files("aquactrl") / "data" / "net1.json")
print(f"{net.n_J} junctions, {net.n_TK} tanks, {net.n_P} pipes, {net.n_M} pumps")
hyd = simulate_hydraulics(net, np.full((24, net.n_M), 0.9))
tanks = np.array([s.tank_heads for s in hyd])
print("tank heads ft, first/last hour:", np.round(tanks[0], 1), np.round(tanks[-1], 1))

vel = [np.abs(s.pipe_velocity(net)) for s in hyd]
plan = SegmentPlan.from_counts(net, segments_from_velocities([p.length for p in net.pipes], vel, net.dt_wq,
                                                             n_max=20))
N = net.wq_steps_per_hydraulic
for k in (0, 6, 12, 18):
    sys_ = assemble_wq(net, hyd[k], plan)
    rep = gramian_metrics(sys_.A, sys_.B, N, C=sys_.C)
    print(f"hour {k:2d}: n_x {sys_.n_x}, sensor Gramian rank {rep.rank}/{rep.n}, trace {rep.trace:.3g}")
