"""Convex surrogates of pump head gain and pump power."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import lsq_linear, minimize_scalar

from ..netmodel import Pump

#: Specific weight of water times the ft*lbf/s -> kW factor: kW per (ft^3/s * ft).
RHO_G_KW = 62.4 * 1.35581795e-3


@dataclass(frozen=True)
class PumpCurveFit:
    """Head gain ``G = beta1 q^2 + beta2 q + beta3 s^2 + beta4`` with ``beta1, beta3 >= 0``."""

    beta1: float
    beta2: float
    beta3: float
    beta4: float
    residual: float  # RMS fit error, ft

    def __call__(self, q, s):
        return self.beta1 * q ** 2 + self.beta2 * q + self.beta3 * s ** 2 + self.beta4


@dataclass(frozen=True)
class PowerFit:
    """``Pi_App = th1 + th2 q + th3 q^2 + th4 s + th5 s^2 + th6 q s`` ($/h at unit tariff)."""

    theta: tuple
    tariff: float = 1.0
    efficiency: float = 0.75
    residual: float = 0.0

    @property
    def hessian(self) -> np.ndarray:
        t = self.theta
        return np.array([[2 * t[2], t[5]], [t[5], 2 * t[4]]])

    def __call__(self, q, s, on=1.0):
        t = self.theta
        return t[0] * on + t[1] * q + t[2] * q ** 2 + t[3] * s + t[4] * s ** 2 + t[5] * q * s


def pump_gain(pump: Pump, q, s):
    """Head gain ``h_end - h_start = s^2 h0 - alpha s^(2-nu) q^nu`` for ``s > 0``."""
    q = np.asarray(q, dtype=float)
    s = np.asarray(s, dtype=float)
    return s ** 2 * pump.shutoff_head - pump.alpha * s ** (2 - pump.nu) * np.abs(q) ** pump.nu


def default_curve_grid(pump: Pump, n_s: int = 6, n_q: int = 9, s_min: float = 0.5):
    """Operating points on the pump curve: speeds in ``[s_min, 1] s_max``, flows up to 95% of runout."""
    pts = []
    for s in np.linspace(s_min, 1.0, n_s) * pump.s_max:
        for frac in np.linspace(0.0, 0.95, n_q):
            pts.append((frac * pump.max_flow(s), s))
    return np.array(pts)


def fit_pump_curve(pump: Pump, sample_grid=None) -> PumpCurveFit:
    """Bounded least squares for the quadratic head-gain surrogate.

    Raises
    ------
    ValueError
        If the grid has fewer than four points or a rank-deficient design.
    """
    grid = default_curve_grid(pump) if sample_grid is None else np.atleast_2d(np.asarray(sample_grid, dtype=float))
    if grid.shape[0] < 4:
        raise ValueError("degenerate grid: at least four operating points are needed")
    q, s = grid[:, 0], grid[:, 1]
    if np.any(s <= 0):
        raise ValueError("grid speeds must be positive")
    X = np.column_stack([q ** 2, q, s ** 2, np.ones_like(q)])
    if np.linalg.matrix_rank(X) < 4:
        raise ValueError("degenerate grid: rank-deficient design")
    y = pump_gain(pump, q, s)
    res = lsq_linear(X, y, bounds=([0, -np.inf, 0, -np.inf], [np.inf, np.inf, np.inf, np.inf]),
                     method="bvls", tol=1e-14)
    b = res.x
    rms = float(np.sqrt(np.mean((X @ b - y) ** 2)))
    return PumpCurveFit(float(max(b[0], 0.0)), float(b[1]), float(max(b[2], 0.0)), float(b[3]), rms)


def true_power(pump: Pump, q, s, tariff: float = 1.0, efficiency: float | None = None):
    """Hourly cost ``tariff * rho g / eta * gain * q`` in $/h (kW at unit tariff)."""
    eta = pump.efficiency if efficiency is None else efficiency
    return tariff * RHO_G_KW / eta * pump_gain(pump, q, s) * np.asarray(q, dtype=float)


def _design(q, s):
    return np.column_stack([np.ones_like(q), q, q ** 2, s, s ** 2, q * s])


def fit_power(pump: Pump, tariff: float = 1.0, efficiency: float | None = None, operating_points=None,
              n_angles: int = 721) -> PowerFit:
    """Least-squares quadratic power surrogate with a PSD Hessian.

    The unconstrained fit is returned when its Hessian is PSD. Otherwise the
    optimum lies on the boundary of the PSD cone, where the Hessian is
    ``c v v^T`` with ``v = (cos a, sin a)`` and ``c >= 0``; for each angle the
    problem is a bounded linear least squares in ``(th1, th2, th4, c)``. A
    dense angle grid is refined by bounded scalar minimization.

    Raises
    ------
    ValueError
        On fewer than six points or a rank-deficient design.
    """
    eta = pump.efficiency if efficiency is None else efficiency
    pts = default_curve_grid(pump) if operating_points is None else np.atleast_2d(np.asarray(operating_points, dtype=float))
    if pts.shape[0] < 6:
        raise ValueError("at least six operating points are needed")
    q, s = pts[:, 0], pts[:, 1]
    X = _design(q, s)
    if np.linalg.matrix_rank(X) < 6:
        raise ValueError("rank-deficient design: operating points do not span (q, s)")
    y = true_power(pump, q, s, tariff, eta)
    theta, *_ = np.linalg.lstsq(X, y, rcond=None)
    H = np.array([[2 * theta[2], theta[5]], [theta[5], 2 * theta[4]]])
    if np.linalg.eigvalsh(H)[0] >= 0:
        return PowerFit(tuple(map(float, theta)), tariff, eta, float(np.sqrt(np.mean((X @ theta - y) ** 2))))

    def solve_angle(a):
        ca, sa = np.cos(a), np.sin(a)
        # H = c v v^T -> th3 = c ca^2 / 2, th5 = c sa^2 / 2, th6 = c ca sa
        col = 0.5 * ca ** 2 * q ** 2 + 0.5 * sa ** 2 * s ** 2 + ca * sa * q * s
        Xa = np.column_stack([np.ones_like(q), q, s, col])
        r = lsq_linear(Xa, y, bounds=([-np.inf, -np.inf, -np.inf, 0.0], [np.inf] * 4), method="bvls", tol=1e-14)
        return float(np.sum((Xa @ r.x - y) ** 2)), r.x

    angles = np.linspace(0.0, np.pi, n_angles)
    errs = [solve_angle(a)[0] for a in angles]
    i = int(np.argmin(errs))
    lo, hi = angles[max(i - 1, 0)], angles[min(i + 1, n_angles - 1)]
    best = minimize_scalar(lambda a: solve_angle(a)[0], bounds=(lo, hi), method="bounded",
                           options={"xatol": 1e-12})
    a = best.x if best.fun <= errs[i] else angles[i]
    err, v = solve_angle(a)
    ca, sa = np.cos(a), np.sin(a)
    c = v[3]
    theta = (v[0], v[1], 0.5 * c * ca ** 2, v[2], 0.5 * c * sa ** 2, c * ca * sa)
    return PowerFit(tuple(map(float, theta)), tariff, eta, float(np.sqrt(err / len(y))))
