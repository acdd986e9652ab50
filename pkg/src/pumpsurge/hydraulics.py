"""Steady-state hydraulic solver (Todini-style Newton on the mixed system).

Internal units everywhere: flows in L/s, heads/lengths in m.  Pipe headloss
follows Hazen-Williams,

    h = r * Q * |Q|**0.852,   r = 10.667 * L / (C**1.852 * D**4.871) * 1e-3**1.852,

with the ``1e-3**1.852`` factor converting the L/s flow back into the m^3/s
the SI constant expects.  Pumps obey the affinity laws: a group of
``n_identical`` equal pumps at speed ratio ``s`` with nominal curve
``H0(Q) = a - b*Q**c`` adds ``H(q, s) = s**2 * H0(q/s)`` per pump, where
``q`` is the per-pump flow (group flow / n).

The solver iterates Newton steps on the saddle system over link flows and
junction heads, reduced each step to the SPD Schur complement in the heads
(the classic global-gradient arrangement).  Below ``flow_floor`` the
headloss laws are replaced by a secant line through +/-flow_floor so the
Jacobian never degenerates at zero flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse
import scipy.sparse.linalg

from .network import InvalidCurve, Network, PumpGroup

__all__ = [
    "HW_EXPONENT", "HW_CONSTANT",
    "SolverConfig", "HydraulicState", "PumpCurveFit",
    "NoConvergence", "InfeasibleSpeeds",
    "fit_head_curve", "fit_efficiency_curve", "fit_pump_group",
    "pump_head", "pump_efficiency", "pipe_resistance",
    "HydraulicModel", "solve_network",
]

HW_EXPONENT = 1.852
HW_CONSTANT = 10.667
_LPS_TO_M3S = 1e-3 ** HW_EXPONENT
MIN_EFFICIENCY = 1e-6

# Above this many junctions the Schur complement is factorized sparsely.
_DENSE_LIMIT = 150


class NoConvergence(Exception):
    """Newton iteration exhausted its budget without meeting tolerances."""

    def __init__(self, iterations: int, residual_mass: float, residual_energy: float):
        super().__init__(
            f"no convergence after {iterations} iterations "
            f"(mass {residual_mass:.3e} L/s, energy {residual_energy:.3e} m)"
        )
        self.iterations = iterations
        self.residual_mass = residual_mass
        self.residual_energy = residual_energy


class InfeasibleSpeeds(ValueError):
    """Speed-ratio vector has the wrong shape or non-positive entries."""


@dataclass(frozen=True)
class SolverConfig:
    mass_tol: float = 1e-6        # L/s, sup norm over junction balances
    energy_tol: float = 1e-6      # m, sup norm over link energy equations
    max_iterations: int = 200
    flow_floor: float = 1e-4      # L/s, secant regularization threshold


@dataclass(frozen=True)
class HydraulicState:
    """Converged snapshot.

    ``heads`` are junction heads in ``node_index`` order [m].  ``flows`` are
    link flows ordered pipes-then-pump-groups (group totals) [L/s].
    ``pump_ops`` has one row (Q, H, eta) per group; ``tank_flows`` are signed
    with positive meaning the tank feeds the network.
    """

    heads: np.ndarray
    flows: np.ndarray
    pump_ops: np.ndarray
    tank_flows: np.ndarray
    reservoir_flows: np.ndarray
    converged: bool
    iterations: int
    residual_mass: float
    residual_energy: float

    @property
    def pump_flows(self) -> np.ndarray:
        return self.pump_ops[:, 0]


@dataclass(frozen=True)
class PumpCurveFit:
    """Fitted single-pump curves: head a - b*Q**c, efficiency a quadratic."""

    a: float
    b: float
    c: float
    eff_coeffs: tuple[float, float, float]   # eta(Q) = e0 + e1*Q + e2*Q**2
    n_identical: int
    peak_efficiency: float


def pipe_resistance(length: float, diameter: float, roughness: float) -> float:
    """Hazen-Williams r for L/s flows; length/diameter in m."""
    return HW_CONSTANT * length / (roughness ** HW_EXPONENT * diameter ** 4.871) * _LPS_TO_M3S


def fit_head_curve(points) -> tuple[float, float, float]:
    """Fit H0(Q) = a - b*Q**c to (Q, H) samples.

    With two or three samples the exponent is pinned at c = 2 and (a, b)
    solve the least-squares normal equations (exact when the data are
    consistent).  With more samples c is also optimized.
    """
    pts = sorted(points)
    if len(pts) < 2:
        raise InvalidCurve("<head>", "need at least two points to fit")
    q = np.array([p[0] for p in pts], dtype=float)
    h = np.array([p[1] for p in pts], dtype=float)

    def solve_ab(c):
        basis = np.column_stack([np.ones_like(q), -(q ** c)])
        (a, b), *_ = np.linalg.lstsq(basis, h, rcond=None)
        return a, b

    if len(pts) <= 3:
        c = 2.0
    else:
        def sse(c):
            a, b = solve_ab(c)
            return float(np.sum((a - b * q ** c - h) ** 2))
        res = scipy.optimize.minimize_scalar(sse, bounds=(1.05, 3.5), method="bounded")
        c = float(res.x)
    a, b = solve_ab(c)
    if b <= 0.0 or a <= 0.0:
        raise InvalidCurve("<head>", f"fit produced a non-physical curve (a={a}, b={b})")
    return float(a), float(b), float(c)


def fit_efficiency_curve(points) -> tuple[float, float, float]:
    """Least-squares quadratic eta(Q) = e0 + e1*Q + e2*Q**2 (linear for 2 pts)."""
    pts = sorted(points)
    if len(pts) < 2:
        raise InvalidCurve("<efficiency>", "need at least two points to fit")
    q = np.array([p[0] for p in pts], dtype=float)
    eta = np.array([p[1] for p in pts], dtype=float)
    degree = 2 if len(pts) >= 3 else 1
    cols = [q ** k for k in range(degree + 1)]
    coeffs, *_ = np.linalg.lstsq(np.column_stack(cols), eta, rcond=None)
    e = np.zeros(3)
    e[: degree + 1] = coeffs
    return float(e[0]), float(e[1]), float(e[2])


def fit_pump_group(group: PumpGroup) -> PumpCurveFit:
    a, b, c = fit_head_curve(group.head_curve)
    eff = fit_efficiency_curve(group.efficiency_curve)
    return PumpCurveFit(a, b, c, eff, group.n_identical, group.peak_efficiency)


def pump_head(fit: PumpCurveFit, group_flow: float, speed: float) -> float:
    """Head added by the group (== per pump) at total group flow, L/s."""
    q = group_flow / fit.n_identical
    return speed ** 2 * (fit.a - fit.b * (abs(q) / speed) ** fit.c * math.copysign(1.0, q))


def pump_efficiency(fit: PumpCurveFit, group_flow: float, speed: float) -> float:
    """Affinity-invariant efficiency, clamped into (MIN_EFFICIENCY, 1]."""
    q = group_flow / fit.n_identical / speed
    e0, e1, e2 = fit.eff_coeffs
    eta = e0 + e1 * q + e2 * q * q
    return float(min(1.0, max(MIN_EFFICIENCY, eta)))


class HydraulicModel:
    """Compiled arrays for one network, reusable across many solves."""

    def __init__(self, net: Network, config: SolverConfig | None = None):
        self.net = net
        self.config = config or SolverConfig()
        self.n_junctions = len(net.junctions)
        self.n_pipes = len(net.pipes)
        self.n_groups = len(net.pump_groups)
        self.n_links = self.n_pipes + self.n_groups
        self.fits = [fit_pump_group(g) for g in net.pump_groups]
        self.base_demands = np.array([j.base_demand for j in net.junctions])

        junction_pos = {j.id: i for i, j in enumerate(net.junctions)}
        fixed_nodes = list(net.reservoirs) + list(net.tanks)
        fixed_pos = {n.id: i for i, n in enumerate(fixed_nodes)}
        self.fixed_heads = np.array([n.head for n in fixed_nodes])
        self.n_reservoirs = len(net.reservoirs)

        links = list(net.pipes) + list(net.pump_groups)
        self._from_j = np.array([junction_pos.get(l.from_node, -1) for l in links])
        self._to_j = np.array([junction_pos.get(l.to_node, -1) for l in links])
        from_fixed = np.array([fixed_pos.get(l.from_node, -1) for l in links])
        to_fixed = np.array([fixed_pos.get(l.to_node, -1) for l in links])
        # Fixed-head contribution to each link's (h_from - h_to).
        self._fixed_dh = np.where(from_fixed >= 0, self.fixed_heads[from_fixed], 0.0) - np.where(
            to_fixed >= 0, self.fixed_heads[to_fixed], 0.0
        )
        self._r = np.array([pipe_resistance(p.length, p.diameter, p.roughness) for p in net.pipes])

        # Incidence of junctions x links: +1 into the junction, -1 out of it.
        rows, cols, vals = [], [], []
        for k in range(self.n_links):
            if self._from_j[k] >= 0:
                rows.append(self._from_j[k]); cols.append(k); vals.append(-1.0)
            if self._to_j[k] >= 0:
                rows.append(self._to_j[k]); cols.append(k); vals.append(1.0)
        self._a1 = scipy.sparse.csr_matrix(
            (vals, (rows, cols)), shape=(self.n_junctions, self.n_links)
        )
        # Net outflow of each fixed node is -sum(incidence * Q) over its links.
        rows, cols, vals = [], [], []
        for k, l in enumerate(links):
            if l.from_node in fixed_pos:
                rows.append(fixed_pos[l.from_node]); cols.append(k); vals.append(1.0)
            if l.to_node in fixed_pos:
                rows.append(fixed_pos[l.to_node]); cols.append(k); vals.append(-1.0)
        self._a_fixed_out = scipy.sparse.csr_matrix(
            (vals, (rows, cols)), shape=(len(fixed_nodes), self.n_links)
        )

        # Schur-complement scatter pattern: per link, the (row, col, sign)
        # entries it contributes, keyed back to the link via _s_link.
        s_rows, s_cols, s_sign, s_link = [], [], [], []
        for k in range(self.n_links):
            fi, ti = self._from_j[k], self._to_j[k]
            if fi >= 0:
                s_rows.append(fi); s_cols.append(fi); s_sign.append(1.0); s_link.append(k)
            if ti >= 0:
                s_rows.append(ti); s_cols.append(ti); s_sign.append(1.0); s_link.append(k)
            if fi >= 0 and ti >= 0:
                s_rows.append(fi); s_cols.append(ti); s_sign.append(-1.0); s_link.append(k)
                s_rows.append(ti); s_cols.append(fi); s_sign.append(-1.0); s_link.append(k)
        self._s_rows = np.array(s_rows, dtype=np.intp)
        self._s_cols = np.array(s_cols, dtype=np.intp)
        self._s_sign = np.array(s_sign)
        self._s_link = np.array(s_link, dtype=np.intp)
        self._s_flat = self._s_rows * self.n_junctions + self._s_cols
        self._dense = self.n_junctions <= _DENSE_LIMIT

        # Cold-start guesses: ~0.3 m/s pipe velocity, mid-curve pump flow.
        pipe_q0 = np.array([0.3 * math.pi / 4.0 * p.diameter ** 2 * 1000.0 for p in net.pipes])
        pump_q0 = np.array(
            [0.5 * max(q for q, _ in g.head_curve) * g.n_identical for g in net.pump_groups]
        )
        self._cold_flows = np.concatenate([pipe_q0, pump_q0]) if self.n_links else np.zeros(0)
        self._cold_heads = np.full(self.n_junctions, float(np.mean(self.fixed_heads)))

    # -- headloss laws -------------------------------------------------------

    def _phi(self, flows: np.ndarray, speeds: np.ndarray):
        """phi(Q) per link and its derivative, both length n_links."""
        q0 = self.config.flow_floor
        qp = flows[: self.n_pipes]
        absq = np.abs(qp)
        lam = absq ** (HW_EXPONENT - 1.0)
        lam_floor = q0 ** (HW_EXPONENT - 1.0)
        low = absq < q0
        phi_p = np.where(low, self._r * qp * lam_floor, self._r * qp * lam)
        dphi_p = np.where(low, self._r * lam_floor, HW_EXPONENT * self._r * lam)

        phi_g = np.empty(self.n_groups)
        dphi_g = np.empty(self.n_groups)
        for g, fit in enumerate(self.fits):
            s = speeds[g]
            q = flows[self.n_pipes + g] / fit.n_identical
            scale = fit.b * s ** (2.0 - fit.c)
            if abs(q) < q0:
                psi = q * q0 ** (fit.c - 1.0)
                dpsi = q0 ** (fit.c - 1.0)
            else:
                psi = math.copysign(abs(q) ** fit.c, q)
                dpsi = fit.c * abs(q) ** (fit.c - 1.0)
            phi_g[g] = -fit.a * s * s + scale * psi
            dphi_g[g] = scale * dpsi / fit.n_identical
        return np.concatenate([phi_p, phi_g]), np.concatenate([dphi_p, dphi_g])

    def _residuals(self, flows, heads, speeds, demands):
        phi, dphi = self._phi(flows, speeds)
        dh = np.where(self._from_j >= 0, heads[self._from_j], 0.0)
        dh -= np.where(self._to_j >= 0, heads[self._to_j], 0.0)
        energy = phi - (dh + self._fixed_dh)
        mass = self._a1 @ flows - demands
        return energy, mass, dphi

    # -- Newton iteration ----------------------------------------------------

    def solve(
        self,
        speeds,
        demands=None,
        warm: HydraulicState | None = None,
        config: SolverConfig | None = None,
    ) -> HydraulicState:
        cfg = config or self.config
        speeds = np.asarray(speeds, dtype=float)
        if speeds.shape != (self.n_groups,):
            raise InfeasibleSpeeds(
                f"expected {self.n_groups} speed ratios, got shape {speeds.shape}"
            )
        if not np.all(np.isfinite(speeds)) or np.any(speeds <= 0.0):
            raise InfeasibleSpeeds(f"speed ratios must be finite and > 0, got {speeds}")
        if demands is None:
            demands = self.base_demands
        else:
            demands = np.asarray(demands, dtype=float)
            if demands.shape != (self.n_junctions,):
                raise ValueError(
                    f"expected {self.n_junctions} demands, got shape {demands.shape}"
                )

        if warm is not None:
            flows = warm.flows.copy()
            heads = warm.heads.copy()
        else:
            flows = self._cold_flows.copy()
            heads = self._cold_heads.copy()

        energy, mass, dphi = self._residuals(flows, heads, speeds, demands)
        merit = max(np.max(np.abs(energy), initial=0.0) / cfg.energy_tol,
                    np.max(np.abs(mass), initial=0.0) / cfg.mass_tol)
        for iteration in range(1, cfg.max_iterations + 1):
            if merit <= 1.0:
                return self._pack(flows, heads, speeds, iteration - 1, energy, mass)
            w = 1.0 / dphi
            data = self._s_sign * w[self._s_link]
            rhs = mass - self._a1 @ (w * energy)
            if self._dense:
                s_mat = np.bincount(
                    self._s_flat, weights=data, minlength=self.n_junctions ** 2
                ).reshape(self.n_junctions, self.n_junctions)
                dh = scipy.linalg.solve(s_mat, rhs, assume_a="pos")
            else:
                s_mat = scipy.sparse.coo_matrix(
                    (data, (self._s_rows, self._s_cols)),
                    shape=(self.n_junctions, self.n_junctions),
                ).tocsc()
                dh = scipy.sparse.linalg.spsolve(s_mat, rhs)
            at_dh = np.where(self._to_j >= 0, dh[self._to_j], 0.0)
            at_dh -= np.where(self._from_j >= 0, dh[self._from_j], 0.0)
            dq = -w * (energy + at_dh)

            step = 1.0
            best = None
            for _ in range(20):
                f_try = flows + step * dq
                h_try = heads + step * dh
                e_try, m_try, d_try = self._residuals(f_try, h_try, speeds, demands)
                m = max(np.max(np.abs(e_try), initial=0.0) / cfg.energy_tol,
                        np.max(np.abs(m_try), initial=0.0) / cfg.mass_tol)
                if best is None or m < best[0]:
                    best = (m, f_try, h_try, e_try, m_try, d_try)
                if m < merit:
                    break
                step *= 0.5
            merit, flows, heads, energy, mass, dphi = best

        if merit <= 1.0:
            return self._pack(flows, heads, speeds, cfg.max_iterations, energy, mass)
        raise NoConvergence(
            cfg.max_iterations,
            float(np.max(np.abs(mass), initial=0.0)),
            float(np.max(np.abs(energy), initial=0.0)),
        )

    def _pack(self, flows, heads, speeds, iterations, energy, mass) -> HydraulicState:
        fixed_out = self._a_fixed_out @ flows
        pump_ops = np.empty((self.n_groups, 3))
        for g, fit in enumerate(self.fits):
            q = flows[self.n_pipes + g]
            pump_ops[g] = (q, pump_head(fit, q, speeds[g]), pump_efficiency(fit, q, speeds[g]))
        return HydraulicState(
            heads=heads.copy(),
            flows=flows.copy(),
            pump_ops=pump_ops,
            tank_flows=fixed_out[self.n_reservoirs:].copy(),
            reservoir_flows=fixed_out[: self.n_reservoirs].copy(),
            converged=True,
            iterations=iterations,
            residual_mass=float(np.max(np.abs(mass), initial=0.0)),
            residual_energy=float(np.max(np.abs(energy), initial=0.0)),
        )


def solve_network(net, speeds, demands=None, config=None, warm=None) -> HydraulicState:
    """One-off solve; builds a fresh :class:`HydraulicModel` each call."""
    return HydraulicModel(net, config).solve(speeds, demands=demands, warm=warm)
