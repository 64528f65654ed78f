from importlib import resources

import pytest

from aquactrl.netmodel import load_network


def data_path(name):
    return resources.files("aquactrl") / "data" / name


@pytest.fixture(scope="session")
def three_node():
    return load_network(data_path("three_node.json"))


@pytest.fixture(scope="session")
def net1():
    return load_network(data_path("net1.json"))


def q(value, unit):
    return {"value": value, "unit": unit}


def two_reservoir_doc(h1=110.0, h2=100.0, r=10.0):
    """Two fixed heads joined by one pipe."""
    return {
        "meta": {"dt_hydraulic_s": 3600, "dt_wq_s": 10, "horizon_s": 3600},
        "nodes": {
            "reservoirs": [{"id": "RA", "head": q(h1, "ft")}, {"id": "RB", "head": q(h2, "ft")}],
            "junctions": [], "tanks": [],
        },
        "links": {
            "pipes": [{"id": "P", "from": "RA", "to": "RB", "length": q(1000.0, "ft"),
                       "radius": q(0.5, "ft"), "resistance": r}],
            "pumps": [], "valves": [],
        },
        "patterns": {},
    }


def closed_form_state(net, v, q_d=0.1, w=912.0):
    """Three-node step with pipe velocity ``v``, tank filling and off-demand."""
    import numpy as np

    from aquactrl.hydsim import HydraulicState

    q_p = v * net.pipes[0].area
    return HydraulicState(0.0, np.array([w]), np.array([950.0]), np.array([q_p, q_p + q_d]),
                          np.array([1.0]), np.array([q_d]))


def closed_form_matrices(net, state, n_s=3):
    """Closed-form 7x7 A and 7x1 B of the three-node example, by symbolic substitution.

    Rows follow R1, J1, TK1, M1, then the pipe segments. The tank decay
    enters as ``1 - k_b dt`` since the step is ``dt`` seconds long.
    """
    import numpy as np
    import sympy as sy

    qM, qP, qD, qB, V, dt, kb, lam = sy.symbols("qM qP qD qB V dt kb lam", positive=True)
    V_next = V + qP * dt
    a_J = qM / (qD + qP)
    aB_J = qB / (qD + qP)
    a_TK = (1 - kb * dt) * V / V_next
    ab_TK = qP * dt / V_next
    a_P = 1 - lam - kb * dt
    ab_P = lam
    A = sy.zeros(7, 7)
    A[0, 0] = 1
    A[1, 3] = a_J
    A[2, 2] = a_TK
    A[2, 6] = ab_TK
    A[3, 0] = 1
    A[4, 1], A[4, 4] = ab_P, a_P
    A[5, 4], A[5, 5] = ab_P, a_P
    A[6, 5], A[6, 6] = ab_P, a_P
    B = sy.zeros(7, 1)
    B[1, 0] = aB_J
    tk, pipe = net.tanks[0], net.pipes[0]
    q_p = float(state.flows[0])
    vals = {
        qM: float(state.flows[1]), qP: q_p, qD: float(state.demands[0]),
        qB: net.boosters()[0].flow, V: tk.volume(float(state.tank_heads[0])), dt: net.dt_wq,
        kb: pipe.decay.k_b, lam: q_p / pipe.area * net.dt_wq / (pipe.length / n_s),
    }
    An = np.array(A.subs(vals).evalf(30).tolist(), dtype=float)
    Bn = np.array(B.subs(vals).evalf(30).tolist(), dtype=float)
    return An, Bn


def random_network(rng, n_j=None):
    """Random gravity network: one reservoir, a junction tree plus chords, optionally a tank."""
    from aquactrl.netmodel import parse_network

    n_j = int(rng.integers(2, 8)) if n_j is None else n_j
    junctions = [{"id": f"J{i}", "elevation": q(0.0, "ft"),
                  "demand_base": q(float(rng.uniform(0, 200)), "GPM"),
                  "concentration": q(float(rng.uniform(0, 2)), "mg_per_L")} for i in range(n_j)]
    pipes = []
    ids = ["R"] + [j["id"] for j in junctions]

    def pipe(a, b):
        pipes.append({"id": f"P{len(pipes)}", "from": a, "to": b,
                      "length": q(float(rng.uniform(200, 2000)), "ft"),
                      "radius": q(float(rng.uniform(0.2, 0.6)), "ft"),
                      "hazen_williams_c": float(rng.uniform(80, 140)),
                      "decay": {"k_b": q(float(rng.uniform(0, 1e-4)), "per_s"),
                                "k_w": q(float(rng.uniform(0, 1e-4)), "ft_per_s"),
                                "k_f": q(float(rng.uniform(0, 1e-3)), "ft_per_s")}})

    for i in range(1, n_j + 1):
        pipe(ids[int(rng.integers(0, i))], ids[i])
    for _ in range(int(rng.integers(0, 3))):
        a, b = rng.choice(n_j, size=2, replace=False) + 1
        pipe(ids[a], ids[b])
    tanks = []
    if rng.uniform() < 0.5:
        tanks.append({"id": "T", "elevation": q(0.0, "ft"), "area": q(float(rng.uniform(200, 2000)), "ft2"),
                      "h_min": q(10.0, "ft"), "h_max": q(200.0, "ft"), "h_init": q(float(rng.uniform(20, 80)), "ft"),
                      "bulk_decay": q(float(rng.uniform(0, 1e-4)), "per_s"),
                      "concentration": q(float(rng.uniform(0, 2)), "mg_per_L")})
        pipe(ids[int(rng.integers(1, n_j + 1))], "T")
    boosters = [{"node": ids[int(rng.integers(1, n_j + 1))], "flow": q(float(rng.uniform(1, 20)), "GPM")}]
    doc = {
        "meta": {"dt_hydraulic_s": 3600, "dt_wq_s": 5, "horizon_s": 3600},
        "nodes": {"reservoirs": [{"id": "R", "head": q(150.0, "ft"),
                                  "concentration": q(float(rng.uniform(0, 2)), "mg_per_L")}],
                  "junctions": junctions, "tanks": tanks},
        "links": {"pipes": pipes, "pumps": [], "valves": []},
        "patterns": {},
        "quality": {"boosters": boosters, "sensors": [junctions[-1]["id"]]},
    }
    return parse_network(doc)


def random_staircase(rng, n, m, k):
    """Pair ``(A, B)`` with controllable dimension ``k`` hidden by a random rotation."""
    import numpy as np

    A11 = rng.normal(size=(k, k))
    B1 = rng.normal(size=(k, m))
    Abar = np.zeros((n, n))
    Abar[:k, :k] = A11
    Abar[:k, k:] = rng.normal(size=(k, n - k))
    Abar[k:, k:] = rng.normal(size=(n - k, n - k))
    Bbar = np.zeros((n, m))
    Bbar[:k] = B1
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return Q @ Abar @ Q.T, Q @ Bbar


def random_miqp(rng, max_binaries=6):
    """Random convex MIQP on a box with a few linear rows; binaries come first."""
    import numpy as np

    from aquactrl.optkern import MipProblem, QpProblem

    n = int(rng.integers(4, 10))
    nb = int(rng.integers(1, max_binaries + 1))
    mi = int(rng.integers(1, 6))
    L = rng.normal(size=(n, n))
    P = L @ L.T * 0.3
    c = rng.normal(size=n) * 3
    Ai = rng.normal(size=(mi, n))
    bi = rng.uniform(0.5, 2, mi)
    lb, ub = -2 * np.ones(n), 2 * np.ones(n)
    return MipProblem(QpProblem(P, c, None, None, Ai, bi, lb, ub), list(range(nb)))


def enumerate_miqp(p):
    """Exhaustive oracle: solve every binary assignment with cvxpy."""
    import itertools

    import cvxpy as cp
    import numpy as np

    qp = p.qp
    bins = list(p.binaries)
    best = np.inf
    for combo in itertools.product([0.0, 1.0], repeat=len(bins)):
        lb, ub = qp.lb.copy(), qp.ub.copy()
        lb[bins] = combo
        ub[bins] = combo
        x = cp.Variable(qp.n)
        cons = [x >= lb, x <= ub]
        if qp.A_ub.size:
            cons.append(qp.A_ub @ x <= qp.b_ub)
        if qp.A_eq.size:
            cons.append(qp.A_eq @ x == qp.b_eq)
        prob = cp.Problem(cp.Minimize(0.5 * cp.quad_form(x, cp.psd_wrap(qp.P)) + qp.c @ x + qp.c0), cons)
        prob.solve(solver="CLARABEL")
        if prob.status == "optimal":
            best = min(best, prob.value)
    return best


def line_pump_doc(demand_gpm=100.0, h0=100.0, alpha=10.0, nu=2.0):
    """Reservoir, pump, demand junction; no tank, so the pump flow equals the demand."""
    return {
        "meta": {"dt_hydraulic_s": 3600, "dt_wq_s": 10, "horizon_s": 3600},
        "nodes": {
            "reservoirs": [{"id": "R", "head": q(100.0, "ft")}],
            "junctions": [{"id": "J", "elevation": q(0.0, "ft"), "demand_base": q(demand_gpm, "GPM")}],
            "tanks": [],
        },
        "links": {
            "pipes": [],
            "pumps": [{"id": "M", "from": "R", "to": "J", "shutoff_head": q(h0, "ft"), "alpha": alpha,
                       "nu": nu, "curve_flow_unit": "ft3_per_s"}],
            "valves": [],
        },
        "patterns": {},
    }


def desk_scenario(net, hours=12):
    """Three-node desk run: pump at 0.9 during steps 0, 1 and 6, idle otherwise.

    Returns the hydraulic trajectory and a segment plan sized from its own
    velocities, so every step is Courant-stable.
    """
    import numpy as np

    from aquactrl.hydsim import SegmentPlan, segments_from_velocities, simulate_hydraulics

    speeds = np.zeros((hours, 1))
    speeds[[k for k in (0, 1, 6) if k < hours], 0] = 0.9
    hyd = simulate_hydraulics(net, speeds, horizon=hours * 3600)
    vel = [np.abs(s.pipe_velocity(net)) for s in hyd]
    plan = SegmentPlan.from_counts(net, segments_from_velocities([p.length for p in net.pipes], vel, net.dt_wq))
    return hyd, plan


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
