"""Maps between flat-topology tori: pullback metrics, energy, tension, and
gradient flow.

A map T^n -> T^m is stored as an integer winding matrix plus a periodic
displacement field, f(x) = A x + u(x); the winding carries all the topology,
so the differential  d_i f^a = A^a_i + d_i u^a  is single-valued and the flow
preserves the homotopy class by construction.

Target metrics are closed-form evaluators (constant matrices or callables),
never lattice fields: composing a lattice field with f would need
interpolation, an error source the stencil order cannot control.
"""

from dataclasses import dataclass, field

import numpy as np

from .decompositions import berger_ebin, ihp_residual
from .errors import ContractViolation, DomainError, InstabilityError
from .geometry import _det_and_minors
from .lattice import CovectorField, ScalarField, Sym2Field, integrate, l2_norm

_EINSUM_OPTS = {"optimize": False}


class TorusMap:
    """f(x) = winding @ x + displacement(x), taken modulo the target periods."""

    def __init__(self, lattice, winding, displacement, target_periods=None):
        winding = np.asarray(winding)
        if winding.ndim != 2 or winding.shape[1] != lattice.dim:
            raise ContractViolation(
                f"winding must be (target_dim, {lattice.dim}), got {winding.shape}")
        if not np.all(winding == np.round(winding)):
            raise ContractViolation("winding entries must be integers")
        m = winding.shape[0]
        displacement = np.asarray(displacement, dtype=np.float64)
        if displacement.shape != (m,) + lattice.sizes:
            raise ContractViolation(
                f"displacement must be shaped ({m}, *{lattice.sizes}), "
                f"got {displacement.shape}")
        if target_periods is None:
            target_periods = (2.0 * np.pi,) * m
        target_periods = tuple(float(p) for p in target_periods)
        if len(target_periods) != m or any(p <= 0 for p in target_periods):
            raise ContractViolation("need one positive target period per component")
        self.lattice = lattice
        self.winding = winding.astype(np.int64)
        self.displacement = displacement
        self.target_dim = m
        self.target_periods = target_periods

    def with_displacement(self, u):
        return TorusMap(self.lattice, self.winding, u, self.target_periods)

    def values(self):
        """f(x) = A x + u(x) over the grid, shape (m, *sizes); not reduced mod
        the target periods (evaluators are periodic, derivatives need the lift)."""
        lat = self.lattice
        lift = np.zeros((self.target_dim,) + lat.sizes)
        for a in range(self.target_dim):
            for i in range(lat.dim):
                lift[a] += self.winding[a, i] * lat.coords[i]
        return lift + self.displacement

    def differential(self):
        """d_i f^a = A^a_i + d_i u^a, shape (m, n, *sizes)."""
        lat = self.lattice
        m, n = self.target_dim, lat.dim
        df = np.empty((m, n) + lat.sizes)
        for a in range(m):
            for i in range(n):
                df[a, i] = self.winding[a, i] + lat.diff(self.displacement[a], i)
        return df

    def second_differential(self):
        """d_i d_j f^a = d_i d_j u^a, shape (m, n, n, *sizes)."""
        lat = self.lattice
        m, n = self.target_dim, lat.dim
        d2 = np.empty((m, n, n) + lat.sizes)
        for a in range(m):
            for i in range(n):
                dui = lat.diff(self.displacement[a], i)
                for j in range(n):
                    d2[a, i, j] = lat.diff(dui, j)
        return d2


def identity_map(lattice):
    n = lattice.dim
    return TorusMap(lattice, np.eye(n, dtype=int),
                    np.zeros((n,) + lattice.sizes), lattice.periods)


def linear_map(lattice, winding, target_periods=None):
    m = np.asarray(winding).shape[0]
    return TorusMap(lattice, winding, np.zeros((m,) + lattice.sizes), target_periods)


class ConstantTargetMetric:
    """Constant SPD matrix as the target metric; Christoffels vanish."""

    def __init__(self, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ContractViolation("target metric matrix must be square")
        self.matrix = 0.5 * (matrix + matrix.T)
        self.dim = matrix.shape[0]
        probe = self.matrix.reshape(self.matrix.shape + (1,))
        for minor in _det_and_minors(probe, self.dim):
            if np.any(minor <= 0.0):
                raise DomainError("target metric matrix is not positive definite")

    def metric_at(self, y):
        tail = (1,) * (y.ndim - 1)
        return np.broadcast_to(self.matrix.reshape(self.matrix.shape + tail),
                               self.matrix.shape + y.shape[1:]).copy()

    def christoffel_at(self, y):
        m = self.dim
        return np.zeros((m, m, m) + y.shape[1:])


class CallableTargetMetric:
    """Closed-form target metric: callables y -> gbar_ab(y) and Gammabar^a_bc(y).

    Both receive the lifted map values (m, *grid) and must be periodic in each
    component with the declared periods.
    """

    def __init__(self, dim, metric_fn, christoffel_fn):
        self.dim = dim
        self._metric_fn = metric_fn
        self._christoffel_fn = christoffel_fn

    def metric_at(self, y):
        return self._metric_fn(y)

    def christoffel_at(self, y):
        return self._christoffel_fn(y)


def conformal_target_metric(dim, amplitude, wave):
    """e^{2 v} * identity with v(y) = amplitude * cos(wave . y); Christoffels in
    closed form.  A convenient curved target for identity tests."""
    wave = np.asarray(wave, dtype=np.float64)
    if wave.shape != (dim,):
        raise ContractViolation(f"wave vector must have {dim} components")

    def v_and_grad(y):
        phase = np.tensordot(wave, y, axes=(0, 0))
        v = amplitude * np.cos(phase)
        dv = -amplitude * np.sin(phase)[None, ...] * wave.reshape((dim,) + (1,) * (y.ndim - 1))
        return v, dv

    def metric_fn(y):
        v, _ = v_and_grad(y)
        out = np.zeros((dim, dim) + y.shape[1:])
        factor = np.exp(2.0 * v)
        for a in range(dim):
            out[a, a] = factor
        return out

    def christoffel_fn(y):
        # conformal metric: Gamma^a_bc = delta^a_b dv_c + delta^a_c dv_b - delta_bc dv^a
        _, dv = v_and_grad(y)
        out = np.zeros((dim, dim, dim) + y.shape[1:])
        for a in range(dim):
            for b in range(dim):
                out[a, a, b] += dv[b]
                out[a, b, a] += dv[b]
                out[b, a, a] -= dv[b]
        return out

    return CallableTargetMetric(dim, metric_fn, christoffel_fn)


def _target_metric_at_map(f, target):
    if target.dim != f.target_dim:
        raise ContractViolation("target metric dimension does not match the map")
    y = f.values()
    gbar = target.metric_at(y)
    if not isinstance(target, ConstantTargetMetric):  # constant case checked once
        minors = _det_and_minors(gbar, f.target_dim)
        for order, minor in enumerate(minors, start=1):
            if np.any(minor <= 0.0):
                raise DomainError(
                    f"target metric is not positive definite along the image "
                    f"(order-{order} principal minor <= 0)")
    return y, gbar


def pullback_metric(f, target):
    """g*_ij(x) = gbar_ab(f(x)) d_i f^a d_j f^b."""
    _, gbar = _target_metric_at_map(f, target)
    df = f.differential()
    gstar = np.einsum("ab...,ai...,bj...->ij...", gbar, df, df, **_EINSUM_OPTS)
    return Sym2Field.from_matrix(f.lattice, gstar)


def energy(f, geo, target):
    """Energy density e(f) = trace_g(pullback) and total energy E = (1/2) int e dV."""
    gstar = pullback_metric(f, target)
    density = ScalarField(
        f.lattice,
        np.einsum("ij...,ij...->...", geo.inverse_matrix, gstar.as_matrix(),
                  **_EINSUM_OPTS))
    total = 0.5 * integrate(density, geo.volume_density)
    return density, total


def tension(f, geo, target):
    """tau^a = g^{ij} (d_i d_j f^a - Gamma^k_ij d_k f^a
               + Gammabar^a_bc(f) d_i f^b d_j f^c), shape (m, *sizes)."""
    y, _ = _target_metric_at_map(f, target)
    df = f.differential()
    d2f = f.second_differential()
    ginv = geo.inverse_matrix
    tau = np.einsum("ij...,aij...->a...", ginv, d2f, **_EINSUM_OPTS)
    tau -= np.einsum("ij...,kij...,ak...->a...", ginv, geo.christoffel, df,
                     **_EINSUM_OPTS)
    gammabar = target.christoffel_at(y)
    tau += np.einsum("ij...,abc...,bi...,cj...->a...", ginv, gammabar, df, df,
                     **_EINSUM_OPTS)
    return tau


def divergence_identity_residual(f, geo, target):
    """Residual of the master identity tying divergence of the pullback metric,
    the energy density gradient, and the tension field:

        (delta g*)_j + (1/2) d_j e(f) + gbar_ab(f) tau^a d_j f^b  ->  0

    at stencil order for every smooth map; identically for harmonic maps the
    first two terms alone cancel.  Returns (residual covector, L2 norm).
    """
    from .operators import OperatorMode, divergence
    y, gbar = _target_metric_at_map(f, target)
    gstar = pullback_metric(f, target)
    e_density, _ = energy(f, geo, target)
    tau = tension(f, geo, target)
    df = f.differential()
    res = divergence(gstar, geo, OperatorMode.ANALYTIC).data.copy()
    lat = f.lattice
    for j in range(lat.dim):
        res[j] += 0.5 * lat.diff(e_density.data, j)
    res += np.einsum("ab...,a...,bj...->j...", gbar, tau, df, **_EINSUM_OPTS)
    residual = CovectorField(lat, res)
    return residual, l2_norm(residual, geo)


@dataclass
class FlowResult:
    final_map: TorusMap
    energies: list
    tension_norms: list
    steps_taken: int
    converged: bool


def tension_flow(f0, geo, target, dt=None, steps=10000, stop_tol=1e-6,
                 record_every=1):
    """Explicit gradient flow u <- u + dt * tau(f) at fixed winding.

    Runs until the sup norm of the tension drops below stop_tol or the step
    budget is exhausted.  Energy must be nonincreasing along accepted steps; a
    relative increase beyond 1e-12 aborts with advice to shrink dt.
    """
    if dt is None:
        dt = min(f0.lattice.spacings) ** 2 / 4.0
    if dt <= 0 or steps < 0:
        raise ContractViolation("need dt > 0 and steps >= 0")
    f = f0
    _, e_total = energy(f, geo, target)
    tau = tension(f, geo, target)
    tau_inf = float(np.max(np.abs(tau)))
    energies = [e_total]
    tension_norms = [tau_inf]
    converged = tau_inf <= stop_tol
    taken = 0
    while not converged and taken < steps:
        f = f.with_displacement(f.displacement + dt * tau)
        _, e_new = energy(f, geo, target)
        if e_new > e_total * (1.0 + 1e-12) + 1e-300:
            raise InstabilityError(
                f"energy increased from {e_total:.12e} to {e_new:.12e} at step "
                f"{taken + 1}; use a smaller dt (current {dt:.3e})")
        e_total = e_new
        tau = tension(f, geo, target)
        tau_inf = float(np.max(np.abs(tau)))
        taken += 1
        if taken % record_every == 0:
            energies.append(e_total)
            tension_norms.append(tau_inf)
        converged = tau_inf <= stop_tol
    if taken % record_every != 0:
        energies.append(e_total)
        tension_norms.append(tau_inf)
    return FlowResult(f, energies, tension_norms, taken, converged)


@dataclass
class HarmonicEnergyReport:
    tension_sup: float
    ihp_defect: float
    constant: float
    deviation_sup: float
    total_energy: float
    volume: float
    half_constant_vol: float
    constant_vol: float
    ihp_passes: bool
    constancy_passes: bool
    solve_report: object = field(repr=False, default=None)


def harmonic_energy_decomposition(f, geo, target, tol=1e-6, cg_tol=1e-10):
    """For a (numerically) harmonic map: split the pullback metric, test that
    the covector part generates an infinitesimal harmonic transformation, and
    recover the constant relating energy density to divergence.

    Both normalizations E = C*Vol and E = (1/2) C*Vol of the resulting energy
    identity are reported; at the conventions used here the energy integral
    itself satisfies E = (1/2) C * Vol.
    """
    from .operators import OperatorMode, divergence
    tau = tension(f, geo, target)
    tau_sup = float(np.max(np.abs(tau)))
    if tau_sup > tol:
        raise DomainError(
            f"map is not harmonic at tolerance {tol:.1e} (sup|tension| = {tau_sup:.3e})")
    gstar = pullback_metric(f, target)
    parts = berger_ebin(gstar, geo, tol=cg_tol)
    defect = ihp_residual(parts.theta, geo)
    e_density, e_total = energy(f, geo, target)
    delta_theta = divergence(parts.theta, geo, OperatorMode.ANALYTIC)
    combined = e_density.data - delta_theta.data
    one = ScalarField(geo.lattice, np.ones(geo.lattice.sizes))
    vol = integrate(one, geo.volume_density)
    c_value = integrate(ScalarField(geo.lattice, combined), geo.volume_density) / vol
    deviation = float(np.max(np.abs(combined - c_value)))
    return HarmonicEnergyReport(
        tension_sup=tau_sup,
        ihp_defect=defect,
        constant=c_value,
        deviation_sup=deviation,
        total_energy=e_total,
        volume=vol,
        half_constant_vol=0.5 * c_value * vol,
        constant_vol=c_value * vol,
        ihp_passes=defect <= tol,
        constancy_passes=deviation <= max(10.0 * tol, 1e-8),
        solve_report=parts.report,
    )
