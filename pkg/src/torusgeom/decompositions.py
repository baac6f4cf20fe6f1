"""L2-orthogonal decompositions of symmetric 2-tensor fields.

Three splittings, each computed by a deflated CG solve against the exact
discrete adjoint of the relevant first-order operator:

  * divergence splitting:  phi = delta_star(theta) + phi0,  delta(phi0) = 0;
  * trace-refined (TT) splitting:  phi = delta_star(theta) + lam g + phi_TT
    with phi_TT divergence-free and trace-free;
  * harmonic splitting:  phi = chen_operator(theta) + phi_h with phi_h in the
    kernel of the chen divergence (the harmonic slice).

Orthogonality of the parts holds at solver tolerance on any SPD metric
because the solves use exact discrete adjoints.  On a constant metric the
kernel of each solve operator is exactly the constant covector fields and is
deflated analytically; on curved metrics the deflation basis defaults to
empty and near-singular behaviour surfaces through the iteration report.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DecompositionError, DomainError
from .lattice import (CovectorField, ScalarField, Sym2Field, constant_field,
                      l2_inner, l2_norm, sym2_pairs)
from .operators import (OperatorMode, chen_divergence, chen_operator, delta_star,
                        divergence, exterior_derivative, sampson_laplacian, trace)
from .solvers import LinearOperatorSpec, SolveReport, cg_solve

_ADJ = OperatorMode.ADJOINT


@dataclass
class BergerEbinParts:
    theta: CovectorField
    phi0: Sym2Field
    report: SolveReport


@dataclass
class YorkParts:
    theta: CovectorField
    lam: object  # ScalarField
    phi_tt: Sym2Field
    report: SolveReport
    note: str | None = None


@dataclass
class ChenParts:
    theta: CovectorField
    phi_h: Sym2Field
    report: SolveReport
    residual: float = 0.0


def default_deflation(geo):
    """Kernel basis for the covector solves: constant covectors on a constant
    metric (where delta_star annihilates exactly the constants), else empty."""
    if not geo.is_constant_metric:
        return []
    lat = geo.lattice
    basis = []
    for a in range(lat.dim):
        e = np.zeros(lat.dim)
        e[a] = 1.0
        basis.append(constant_field("covector", lat, e))
    return basis


def _covector_inner(geo):
    return lambda a, b: l2_inner(a, b, geo)


def _solve(apply, rhs, geo, tol, max_iter, deflation, abs_scale=None):
    op = LinearOperatorSpec(apply, _covector_inner(geo), deflation)
    return cg_solve(op, rhs, tol=tol, max_iter=max_iter, abs_scale=abs_scale)


def berger_ebin(phi, geo, tol=1e-10, max_iter=None, deflation=None):
    """Split phi into delta_star(theta) + divergence-free phi0."""
    phi.same_lattice(geo.metric.field)
    if deflation is None:
        deflation = default_deflation(geo)

    def apply(theta):
        return divergence(delta_star(theta, geo), geo, _ADJ)

    rhs = divergence(phi, geo, _ADJ)
    theta, report = _solve(apply, rhs, geo, tol, max_iter, deflation,
                           abs_scale=l2_norm(phi, geo))
    if not report.converged:
        raise DecompositionError(
            f"divergence-splitting solve did not converge "
            f"(residual {report.final_residual:.3e} after {report.iterations} iterations)",
            report)
    phi0 = phi - delta_star(theta, geo)
    return BergerEbinParts(theta, phi0, report)


def _tracefree_part(h, geo):
    tr = trace(h, geo)
    n = geo.lattice.dim
    return Sym2Field.from_matrix(geo.lattice,
                                 h.as_matrix() - (tr.data / n) * geo.matrix)


def york(phi, geo, tol=1e-10, max_iter=None, deflation=None):
    """Split phi into delta_star(theta) + lam g + transverse-traceless phi_TT.

    The trace variable is eliminated, leaving the reduced system
    (delta delta_star - (1/n) d delta) theta = delta(phi) + (1/n) d(trace phi),
    realized in its Gram form  delta_adj (P0 (delta_star theta))  with P0 the
    pointwise trace-free projector.  The two agree in the continuum, but the
    Gram form is exactly positive semidefinite discretely (the literal
    difference form picks up an O(h^4) indefinite tail on curved metrics and
    can stall the solver near convergence).

    lam is reconstructed with the analytic divergence so that trace(phi_TT)
    vanishes as pointwise algebra, not just to solver tolerance.
    """
    phi.same_lattice(geo.metric.field)
    n = geo.lattice.dim
    if deflation is None:
        deflation = default_deflation(geo)

    def apply(theta):
        return divergence(_tracefree_part(delta_star(theta, geo), geo), geo, _ADJ)

    tr_phi = trace(phi, geo)
    rhs = divergence(_tracefree_part(phi, geo), geo, _ADJ)
    theta, report = _solve(apply, rhs, geo, tol, max_iter, deflation,
                           abs_scale=l2_norm(phi, geo))
    if not report.converged:
        raise DecompositionError(
            f"TT-splitting solve did not converge "
            f"(residual {report.final_residual:.3e} after {report.iterations} iterations)",
            report)
    dtheta_analytic = divergence(theta, geo, OperatorMode.ANALYTIC)
    lam_data = (tr_phi.data + dtheta_analytic.data) / n
    lam = ScalarField(geo.lattice, lam_data)
    phi_tt = Sym2Field.from_matrix(
        geo.lattice,
        phi.as_matrix() - delta_star(theta, geo).as_matrix() - lam_data * geo.matrix)
    note = None
    if n == 2:
        note = "TT splitting evaluated at n=2, below its classical n>=3 range"
    return YorkParts(theta, lam, phi_tt, report, note)


def chen(phi, geo, tol=1e-10, max_iter=None, deflation=None):
    """Split phi into chen_operator(theta) + harmonic part phi_h.

    phi_h lies in the kernel of the (adjoint-mode) chen divergence; the
    residual norm of that membership check is verified against the solve
    tolerance before returning.
    """
    phi.same_lattice(geo.metric.field)
    if deflation is None:
        deflation = default_deflation(geo)

    def apply(theta):
        return chen_divergence(chen_operator(theta, geo, _ADJ), geo, _ADJ)

    rhs = chen_divergence(phi, geo, _ADJ)
    theta, report = _solve(apply, rhs, geo, tol, max_iter, deflation,
                           abs_scale=l2_norm(phi, geo))
    if not report.converged:
        raise DecompositionError(
            f"harmonic-splitting solve did not converge "
            f"(residual {report.final_residual:.3e} after {report.iterations} iterations)",
            report)
    phi_h = phi - chen_operator(theta, geo, _ADJ)
    residual = l2_norm(chen_divergence(phi_h, geo, _ADJ), geo)
    allowed = 100.0 * tol * max(report.rhs_norm, l2_norm(phi, geo))
    if residual > max(allowed, 1e-13):
        raise DecompositionError(
            f"harmonic part failed the membership check: "
            f"|chen_divergence(phi_h)| = {residual:.3e} > {allowed:.3e}", report)
    return ChenParts(theta, phi_h, report, residual)


def _half_space_modes(dim, max_mode):
    """k = 0 and one representative per {k, -k} pair with |k_a| <= max_mode."""
    modes = [(0,) * dim]
    for k in itertools.product(*[range(-max_mode, max_mode + 1)] * dim):
        if all(x == 0 for x in k):
            continue
        first = next(x for x in k if x != 0)
        if first > 0:
            modes.append(k)
    return modes


def band_limited_sym2_generators(lattice, max_mode):
    """Real trigonometric Sym2 basis: cos/sin(k.x) on every component slot."""
    n = lattice.dim
    nslots = len(sym2_pairs(n))
    phases = [2.0 * np.pi * c / p for c, p in zip(lattice.coords, lattice.periods)]
    out = []
    for k in _half_space_modes(n, max_mode):
        phase = sum(ki * ph for ki, ph in zip(k, phases))
        waves = [np.cos(phase)] if all(x == 0 for x in k) else [np.cos(phase),
                                                                np.sin(phase)]
        for slot in range(nslots):
            for wave in waves:
                data = np.zeros((nslots,) + lattice.sizes)
                data[slot] = wave
                out.append(Sym2Field(lattice, data))
    return out


def hg_basis(geo, max_mode, drop_tol=1e-6, cg_tol=1e-10, max_iter=None):
    """Orthonormal basis of the discrete harmonic slice up to a mode cutoff.

    Every band-limited Sym2 generator is projected onto the harmonic slice via
    the chen splitting; the projections are Gram-Schmidt orthonormalized under
    the metric L2 inner product, dropping directions whose projection falls
    below drop_tol.  The normalized metric direction is always element 0.
    """
    lat = geo.lattice
    for s in lat.sizes:
        if max_mode > s // 4:
            raise DomainError(f"max_mode {max_mode} not resolvable on grid {lat.sizes}")
    g_dir = geo.metric.field
    basis = [(1.0 / l2_norm(g_dir, geo)) * g_dir]
    inner = lambda a, b: l2_inner(a, b, geo)
    for gen in band_limited_sym2_generators(lat, max_mode):
        gen = (1.0 / l2_norm(gen, geo)) * gen
        parts = chen(gen, geo, tol=cg_tol, max_iter=max_iter)
        v = parts.phi_h
        for _ in range(2):
            for b in basis:
                v = v - inner(v, b) * b
        norm = np.sqrt(max(inner(v, v), 0.0))
        if norm > drop_tol:
            basis.append((1.0 / norm) * v)
    return basis


def ihp_residual(theta, geo, mode=OperatorMode.ANALYTIC):
    """Normalized defect |Sampson(theta)| / max(|theta|, eps).

    Zero characterizes infinitesimal harmonic transformations (the Sampson
    kernel); the value for a generic covector is O(1).
    """
    num = l2_norm(sampson_laplacian(theta, geo, mode), geo)
    den = max(l2_norm(theta, geo), 1e-30)
    return num / den
