"""First- and second-order operators on covector and symmetric 2-tensor fields.

Sign conventions (each pinned by an identity in the test suite):

  * divergence:  delta(theta) = -g^{ij} (nabla theta)_ij,
                 (delta h)_j  = -g^{ik} (nabla h)_ikj,
    so that  trace_g(delta_star theta) = -delta(theta)  and
    delta(lam * g) = -d(lam)  hold.
  * delta_star(theta) = symmetrized covariant gradient
    = (1/2) Lie derivative of g along the metrically dual vector field.
  * Sampson Laplacian on covectors:  2 delta delta_star - d delta
    (positive on the flat torus: sin(x) dx -> sin(x) dx).
  * rough Laplacian on Sym2:  trace_g nabla^2  (nonpositive).
  * curvature operator of the second kind:  R2(h)_ij = R[i,k,l,j] h^{kl},
    oriented so that the constant-curvature model with kappa > 0 acts as
    +kappa on trace-free tensors (see notes in README and the variation
    module for the trace-direction behaviour).

Every operator that enters a symmetric quadratic form or a CG solve has an
"adjoint" mode in which the discretization is the exact matrix transpose of
its partner with respect to the metric L2 inner product; the analytic mode is
the direct discretization used for residual diagnostics.  The two agree at
stencil order under refinement.
"""

from enum import Enum

import numpy as np

from .errors import ContractViolation
from .geometry import (covariant_derivative_covector, covariant_derivative_rank3,
                       covariant_derivative_sym2)
from .lattice import CovectorField, ScalarField, Sym2Field

_EINSUM_OPTS = {"optimize": False}


class OperatorMode(Enum):
    ANALYTIC = "analytic"
    ADJOINT = "adjoint"


def _mode(mode):
    if isinstance(mode, OperatorMode):
        return mode
    return OperatorMode(str(mode).lower())


def raised_sym2(h, geo):
    """h^{ij} = g^{ia} g^{jb} h_ab as a dense (n, n, *sizes) array."""
    ginv = geo.inverse_matrix
    return np.einsum("ia...,jb...,ab...->ij...", ginv, ginv, h.as_matrix(),
                     **_EINSUM_OPTS)


def exterior_derivative(f):
    """d f for a scalar field, as a covector field."""
    lat = f.lattice
    return CovectorField(lat, np.stack([lat.diff(f.data, a) for a in range(lat.dim)]))


def delta_star(theta, geo):
    """Symmetrized covariant gradient of a covector (the Killing operator)."""
    nab = covariant_derivative_covector(theta, geo)
    sym = 0.5 * (nab + np.einsum("ij...->ji...", nab))
    return Sym2Field.from_matrix(geo.lattice, sym)


def trace(h, geo):
    """g^{ij} h_ij."""
    val = np.einsum("ij...,ij...->...", geo.inverse_matrix, h.as_matrix(),
                    **_EINSUM_OPTS)
    return ScalarField(geo.lattice, val)


def trace_split(h, geo):
    """Pointwise split into (trace scalar, trace-free part): h = h0 + (tr/n) g."""
    tr = trace(h, geo)
    n = geo.lattice.dim
    h0 = h.as_matrix() - (tr.data / n) * geo.matrix
    return tr, Sym2Field.from_matrix(geo.lattice, h0)


def _divergence_covector(theta, geo, mode):
    if mode is OperatorMode.ANALYTIC:
        nab = covariant_derivative_covector(theta, geo)
        val = -np.einsum("ij...,ij...->...", geo.inverse_matrix, nab, **_EINSUM_OPTS)
        return ScalarField(geo.lattice, val)
    # exact discrete adjoint of the exterior derivative d: scalars -> covectors
    lat = geo.lattice
    rho = geo.volume_density.data
    flux = rho * np.einsum("ij...,j...->i...", geo.inverse_matrix, theta.data,
                           **_EINSUM_OPTS)
    acc = np.zeros(lat.sizes)
    for a in range(lat.dim):
        acc += lat.diff(flux[a], a)
    return ScalarField(lat, -acc / rho)


def _divergence_sym2(h, geo, mode):
    lat = geo.lattice
    if mode is OperatorMode.ANALYTIC:
        nab = covariant_derivative_sym2(h, geo)
        val = -np.einsum("ik...,ikj...->j...", geo.inverse_matrix, nab, **_EINSUM_OPTS)
        return CovectorField(lat, val)
    # exact discrete adjoint of delta_star with respect to the metric L2 inner
    rho = geo.volume_density.data
    psi = rho * raised_sym2(h, geo)  # psi^{ij}, symmetric, densitized
    div_psi = np.zeros((lat.dim,) + lat.sizes)
    for a in range(lat.dim):
        div_psi += lat.diff(psi[a], a)  # sum_i d_i psi^{i j}
    gamma_term = np.einsum("jik...,ik...->j...", geo.christoffel, psi, **_EINSUM_OPTS)
    raised = -(div_psi + gamma_term) / rho
    return CovectorField(lat, np.einsum("mj...,j...->m...", geo.matrix, raised,
                                        **_EINSUM_OPTS))


def divergence(field, geo, mode=OperatorMode.ANALYTIC):
    """Divergence, lowering the rank by one.

    Analytic mode is the direct formula; adjoint mode is the exact discrete
    transpose (of d for covectors, of delta_star for Sym2) and is what every
    elliptic solve and symmetric form uses.
    """
    mode = _mode(mode)
    if isinstance(field, CovectorField):
        return _divergence_covector(field, geo, mode)
    if isinstance(field, Sym2Field):
        return _divergence_sym2(field, geo, mode)
    raise ContractViolation(
        f"divergence is defined for covector and sym2 fields, got {type(field).__name__}")


def sampson_laplacian(theta, geo, mode=OperatorMode.ANALYTIC):
    """Sampson (Yano) operator on covectors: 2 delta delta_star - d delta."""
    mode = _mode(mode)
    dd = divergence(delta_star(theta, geo), geo, mode)
    dtheta = divergence(theta, geo, mode)
    return CovectorField(geo.lattice, 2.0 * dd.data - exterior_derivative(dtheta).data)


def nabla_star_rank3(t, geo):
    """Exact discrete adjoint of covariant_derivative_sym2.

    Satisfies <nabla h, T>_(0,3) = <h, nabla_star T>_Sym2 to roundoff; used to
    build the adjoint-mode rough Laplacian -nabla_star(nabla h).
    """
    lat = geo.lattice
    n = lat.dim
    rho = geo.volume_density.data
    ginv = geo.inverse_matrix
    tilde = rho * np.einsum("ka...,ib...,jc...,abc...->kij...", ginv, ginv, ginv, t,
                            **_EINSUM_OPTS)
    div = np.zeros((n, n) + lat.sizes)
    for a in range(n):
        div += lat.diff(tilde[a], a)  # sum_k d_k tilde^{k i j}
    gamma = geo.christoffel
    m_up = -(div
             + np.einsum("ikl...,klj...->ij...", gamma, tilde, **_EINSUM_OPTS)
             + np.einsum("jkl...,kil...->ij...", gamma, tilde, **_EINSUM_OPTS))
    low = np.einsum("ai...,bj...,ij...->ab...", geo.matrix, geo.matrix, m_up / rho,
                    **_EINSUM_OPTS)
    low = 0.5 * (low + np.einsum("ab...->ba...", low))
    return Sym2Field.from_matrix(lat, low)


def rough_laplacian_sym2(h, geo, mode=OperatorMode.ANALYTIC):
    """trace_g nabla^2 on Sym2 (nonpositive).

    Adjoint mode realizes it as -nabla_star(nabla h) so that the quadratic
    form <Delta h, k> is exactly symmetric.
    """
    mode = _mode(mode)
    nab = covariant_derivative_sym2(h, geo)
    if mode is OperatorMode.ADJOINT:
        return -1.0 * nabla_star_rank3(nab, geo)
    nab2 = covariant_derivative_rank3(nab, geo)
    val = np.einsum("mk...,mkij...->ij...", geo.inverse_matrix, nab2, **_EINSUM_OPTS)
    return Sym2Field.from_matrix(geo.lattice, val)


def _ricci_mixed(geo):
    """Ric_i^k = g^{kl} Ric_li, returned as mixed[k, i]."""
    return np.einsum("kl...,li...->ki...", geo.inverse_matrix,
                     geo.ricci.as_matrix(), **_EINSUM_OPTS)


def lichnerowicz_laplacian(h, geo, mode=OperatorMode.ANALYTIC):
    """Lichnerowicz Laplacian:
    Delta_L h = trace_g nabla^2 h + 2 R[i,k,j,l] h^{kl} - Ric_i^k h_kj - Ric_j^k h_ik.
    """
    rough = rough_laplacian_sym2(h, geo, mode).as_matrix()
    h_up = raised_sym2(h, geo)
    curv = np.einsum("ikjl...,kl...->ij...", geo.riemann, h_up, **_EINSUM_OPTS)
    ric_mixed = _ricci_mixed(geo)
    hmat = h.as_matrix()
    ric_term = np.einsum("ki...,kj...->ij...", ric_mixed, hmat, **_EINSUM_OPTS)
    ric_term = ric_term + np.einsum("ij...->ji...", ric_term)
    out = rough + 2.0 * curv - ric_term
    out = 0.5 * (out + np.einsum("ij...->ji...", out))
    return Sym2Field.from_matrix(geo.lattice, out)


def curvature_second_kind(h, geo):
    """Curvature operator of the second kind: R2(h)_ij = R[i,k,l,j] h^{kl}.

    Pointwise and self-adjoint (pair symmetry of the Riemann tensor).  On the
    constant-curvature model it acts as kappa * (h - (tr h) g): +kappa on
    trace-free tensors, -(n-1) kappa on the pure-trace direction.
    """
    h_up = raised_sym2(h, geo)
    val = np.einsum("iklj...,kl...->ij...", geo.riemann, h_up, **_EINSUM_OPTS)
    val = 0.5 * (val + np.einsum("ij...->ji...", val))
    return Sym2Field.from_matrix(geo.lattice, val)


def chen_operator(theta, geo, mode=OperatorMode.ANALYTIC):
    """Trace-adjusted Killing operator: delta_star(theta) + (1/2)(delta theta) g."""
    mode = _mode(mode)
    ds = delta_star(theta, geo)
    dtheta = divergence(theta, geo, mode)
    val = ds.as_matrix() + 0.5 * dtheta.data * geo.matrix
    return Sym2Field.from_matrix(geo.lattice, val)


def chen_divergence(h, geo, mode=OperatorMode.ANALYTIC):
    """Formal adjoint of chen_operator: delta(h) + (1/2) d(trace_g h).

    Its kernel is the space of harmonic symmetric tensors (the harmonic
    slice used by the decomposition and variation modules).
    """
    mode = _mode(mode)
    dh = divergence(h, geo, mode)
    dtr = exterior_derivative(trace(h, geo))
    return CovectorField(geo.lattice, dh.data + 0.5 * dtr.data)
