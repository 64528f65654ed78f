"""Rank of the target Gramian on the three-node network as pipe velocity grows.

Below the velocity that lets water cross the pipe within one hydraulic step,
the far end of the pipe cannot be reached by the booster, so the Gramian on
{J1, pipe segments, TK1} is rank deficient.
"""
import numpy as np

from aquactrl.ctrb import EPS_RANK, gramian_metrics
from aquactrl.hydsim import HydraulicState, SegmentPlan, segments_from_velocities
from aquactrl.netmodel import load_network
from aquactrl.wqsim import assemble_wq
from importlib.resources import files

net = load_network(files("aquactrl") / "data" / "three_node.json")
N = int(net.dt_hydraulic / net.dt_wq)
L = net.pipes[0].length
# n_s segments plus J1 and TK1 need n_s + 2 <= N reachable directions
print(f"horizon {N} steps, exact threshold {L / ((N - 1) * net.dt_wq):.5f} ft/s")


def state(v, q_d=0.1, w=912.0):
    q_p = v * net.pipes[0].area
    return HydraulicState(0.0, np.array([w]), np.array([950.0]), np.array([q_p, q_p + q_d]),
                          np.array([1.0]), np.array([q_d]))


print(f"{'v ft/s':>8} {'n_s':>5} {'rank':>5} {'n':>5}  full")
for v in (0.1, 0.2, 0.25, 0.27, 0.278, 0.2786, 0.3, 0.5, 1.0):
    plan = SegmentPlan.from_counts(net, segments_from_velocities([L], [[v]], net.dt_wq, 2000))
    sys_ = assemble_wq(net, state(v), plan)
    labs = ["J1"] + [l for l in sys_.labels if l.startswith("P1#")] + ["TK1"]
    rep = gramian_metrics(sys_.A, sys_.B, N, tol=EPS_RANK, C=sys_.selector(labs))
    print(f"{v:8.4f} {plan.counts[0]:5d} {rep.rank:5d} {rep.n:5d}  {rep.full_rank}")
