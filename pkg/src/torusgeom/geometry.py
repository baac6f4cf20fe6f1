"""Metric fields and their derived curvature data.

``build_geometry`` turns an SPD metric into a cache of inverse metric,
Christoffel symbols, Riemann and Ricci tensors, scalar curvature and volume
density, all via 4th-order differences on the lattice.

Curvature sign convention (pinned once, verified by the conformal-torus test):
the stored (0,4) tensor ``R[i,k,j,l]`` is antisymmetric in (i,k) and (j,l),
satisfies the pair symmetry R[i,k,j,l] = R[j,l,i,k], and on a constant-curvature
model equals  kappa * (g_ij g_kl - g_il g_kj).  With it,

    Ricci_ij = g^kl R[k,i,l,j]    (positive (n-1)*kappa*g on the model)

and the sectional curvature of the model is +kappa.
"""

import numpy as np

from .errors import ContractViolation, DomainError
from .lattice import ScalarField, Sym2Field, sym2_pairs

_EINSUM_OPTS = {"optimize": False}  # keep the deterministic single-threaded C path


def _det_and_minors(mat, n):
    """Leading principal minors (m1, ..., mn) of a pointwise symmetric matrix."""
    if n == 1:
        return [mat[0, 0]]
    if n == 2:
        m1 = mat[0, 0]
        m2 = mat[0, 0] * mat[1, 1] - mat[0, 1] * mat[1, 0]
        return [m1, m2]
    m1 = mat[0, 0]
    m2 = mat[0, 0] * mat[1, 1] - mat[0, 1] * mat[1, 0]
    m3 = (mat[0, 0] * (mat[1, 1] * mat[2, 2] - mat[1, 2] * mat[2, 1])
          - mat[0, 1] * (mat[1, 0] * mat[2, 2] - mat[1, 2] * mat[2, 0])
          + mat[0, 2] * (mat[1, 0] * mat[2, 1] - mat[1, 1] * mat[2, 0]))
    return [m1, m2, m3]


def _pointwise_inverse(mat, det, n):
    """Closed-form (cofactor) inverse of a pointwise symmetric matrix, n <= 3."""
    inv = np.empty_like(mat)
    if n == 1:
        inv[0, 0] = 1.0 / mat[0, 0]
        return inv
    if n == 2:
        inv[0, 0] = mat[1, 1] / det
        inv[1, 1] = mat[0, 0] / det
        inv[0, 1] = inv[1, 0] = -mat[0, 1] / det
        return inv
    a, b, c = mat[0, 0], mat[0, 1], mat[0, 2]
    d, e = mat[1, 1], mat[1, 2]
    f = mat[2, 2]
    inv[0, 0] = (d * f - e * e) / det
    inv[0, 1] = inv[1, 0] = (c * e - b * f) / det
    inv[0, 2] = inv[2, 0] = (b * e - c * d) / det
    inv[1, 1] = (a * f - c * c) / det
    inv[1, 2] = inv[2, 1] = (b * c - a * e) / det
    inv[2, 2] = (a * d - b * b) / det
    return inv


class MetricField:
    """An SPD symmetric 2-tensor field, with its pointwise algebra cached.

    Positive definiteness is checked at construction via leading principal
    minors at every site; the error names the first offending site.
    """

    def __init__(self, field):
        if not isinstance(field, Sym2Field):
            raise ContractViolation("MetricField wraps a Sym2Field")
        self.field = field
        self.lattice = field.lattice
        n = self.lattice.dim
        mat = field.as_matrix()
        minors = _det_and_minors(mat, n)
        for order, minor in enumerate(minors, start=1):
            bad = minor <= 0.0
            if np.any(bad):
                site = np.unravel_index(int(np.argmax(bad)), self.lattice.sizes)
                raise DomainError(
                    f"metric is not positive definite: order-{order} principal "
                    f"minor <= 0 at site {site}")
        det = minors[-1]
        self.matrix = mat
        self.determinant = det
        self.inverse_matrix = _pointwise_inverse(mat, det, n)
        self.volume_density = ScalarField(self.lattice, np.sqrt(det))

    @property
    def is_constant(self):
        n = self.lattice.dim
        flat = self.matrix.reshape(n, n, -1)
        return bool(np.all(flat == flat[:, :, :1]))


def flat_metric(lattice, scale=1.0):
    """scale * identity metric."""
    n = lattice.dim
    mat = np.zeros((n, n) + lattice.sizes)
    for i in range(n):
        mat[i, i] = scale
    return MetricField(Sym2Field.from_matrix(lattice, mat))


def constant_metric(lattice, matrix):
    """Constant SPD metric from an (n, n) matrix."""
    n = lattice.dim
    matrix = np.asarray(matrix, dtype=np.float64)
    mat = np.broadcast_to(
        matrix.reshape((n, n) + (1,) * n), (n, n) + lattice.sizes).copy()
    return MetricField(Sym2Field.from_matrix(lattice, mat))


def conformal_metric(lattice, u):
    """e^{2u} * identity for a scalar field u."""
    n = lattice.dim
    factor = np.exp(2.0 * u.data)
    mat = np.zeros((n, n) + lattice.sizes)
    for i in range(n):
        mat[i, i] = factor
    return MetricField(Sym2Field.from_matrix(lattice, mat))


def perturbed_metric(lattice, perturbation):
    """identity + perturbation (a Sym2Field); SPD is validated on construction."""
    n = lattice.dim
    mat = perturbation.as_matrix().copy()
    for i in range(n):
        mat[i, i] = mat[i, i] + 1.0
    return MetricField(Sym2Field.from_matrix(lattice, mat))


class GeometryCache:
    """Derived geometric data of a metric, computed eagerly by build_geometry.

    Attributes
    ----------
    metric : MetricField
    matrix, inverse_matrix : (n, n, *sizes) arrays
    volume_density : ScalarField
    christoffel : (n, n, n, *sizes) array, christoffel[k, i, j] = Gamma^k_ij
    riemann : (n, n, n, n, *sizes) array R[i, k, j, l], convention above
    ricci : Sym2Field
    scal : ScalarField
    """

    def __init__(self, metric, christoffel, riemann, ricci, scal):
        self.metric = metric
        self.lattice = metric.lattice
        self.matrix = metric.matrix
        self.inverse_matrix = metric.inverse_matrix
        self.volume_density = metric.volume_density
        self.christoffel = christoffel
        self.riemann = riemann
        self.ricci = ricci
        self.scal = scal

    # MetricField duck-type so l2_inner accepts a GeometryCache directly
    @property
    def field(self):
        return self.metric.field

    @property
    def is_constant_metric(self):
        return self.metric.is_constant


def christoffel_symbols(metric):
    """Gamma^k_ij of a metric field, shape (n, n, n, *sizes), index order [k, i, j]."""
    if not isinstance(metric, MetricField):
        metric = MetricField(metric)
    lat = metric.lattice
    n = lat.dim
    dg = np.stack([lat.diff(metric.matrix, a) for a in range(n)])  # dg[a,b,c] = d_a g_bc
    # braces[i, j, l] = d_i g_jl + d_j g_il - d_l g_ij
    braces = (dg
              + np.einsum("abc...->bac...", dg)
              - np.einsum("abc...->bca...", dg))
    return 0.5 * np.einsum("kl...,ijl...->kij...", metric.inverse_matrix, braces,
                           **_EINSUM_OPTS)


def build_geometry(metric):
    """Compute Christoffels, curvature and density of an SPD metric field."""
    if not isinstance(metric, MetricField):
        metric = MetricField(metric)
    lat = metric.lattice
    n = lat.dim
    g = metric.matrix
    ginv = metric.inverse_matrix
    gamma = christoffel_symbols(metric)

    # mixed[m, i, k, j]: component of R(d_i, d_k) d_j; lowered with a sign flip
    # so the constant-curvature model comes out as kappa (g_ij g_kl - g_il g_kj)
    dgamma = np.stack([lat.diff(gamma, a) for a in range(n)])  # dgamma[a, m, i, j]
    mixed = (np.einsum("abcd...->bacd...", dgamma)     # d_i Gamma^m_kj
             - np.einsum("abcd...->bcad...", dgamma)   # d_k Gamma^m_ij
             + np.einsum("mil...,lkj...->mikj...", gamma, gamma, **_EINSUM_OPTS)
             - np.einsum("mkl...,lij...->mikj...", gamma, gamma, **_EINSUM_OPTS))
    riemann = -np.einsum("ml...,mikj...->ikjl...", g, mixed, **_EINSUM_OPTS)

    ricci_mat = np.einsum("kl...,kilj...->ij...", ginv, riemann, **_EINSUM_OPTS)
    ricci_mat = 0.5 * (ricci_mat + ricci_mat.transpose(1, 0, *range(2, 2 + n)))
    ricci = Sym2Field.from_matrix(lat, ricci_mat)
    scal = ScalarField(lat, np.einsum("ij...,ij...->...", ginv, ricci_mat,
                                      **_EINSUM_OPTS))
    return GeometryCache(metric, gamma, riemann, ricci, scal)


def covariant_derivative_covector(theta, geo):
    """(nabla theta)[i, j] = d_i theta_j - Gamma^k_ij theta_k, shape (n, n, *sizes)."""
    theta.same_lattice(geo.metric.field)
    lat = geo.lattice
    n = lat.dim
    grad = np.stack([lat.diff(theta.data, a) for a in range(n)])
    return grad - np.einsum("kij...,k...->ij...", geo.christoffel, theta.data,
                            **_EINSUM_OPTS)


def covariant_derivative_sym2(h, geo):
    """(nabla h)[k, i, j] = d_k h_ij - Gamma^l_ki h_lj - Gamma^l_kj h_il."""
    h.same_lattice(geo.metric.field)
    lat = geo.lattice
    n = lat.dim
    hmat = h.as_matrix()
    grad = np.stack([lat.diff(hmat, a) for a in range(n)])
    grad -= np.einsum("lki...,lj...->kij...", geo.christoffel, hmat, **_EINSUM_OPTS)
    grad -= np.einsum("lkj...,il...->kij...", geo.christoffel, hmat, **_EINSUM_OPTS)
    return grad


def covariant_derivative_rank3(t, geo):
    """Covariant derivative of a (0,3) tensor given as a (n, n, n, *sizes) array."""
    lat = geo.lattice
    n = lat.dim
    grad = np.stack([lat.diff(t, a) for a in range(n)])
    gamma = geo.christoffel
    grad -= np.einsum("lmk...,lij...->mkij...", gamma, t, **_EINSUM_OPTS)
    grad -= np.einsum("lmi...,klj...->mkij...", gamma, t, **_EINSUM_OPTS)
    grad -= np.einsum("lmj...,kil...->mkij...", gamma, t, **_EINSUM_OPTS)
    return grad


def covariant_derivative(field, geo):
    """Covariant derivative of a covector or Sym2 field (raw array out)."""
    from .lattice import CovectorField
    if isinstance(field, CovectorField):
        return covariant_derivative_covector(field, geo)
    if isinstance(field, Sym2Field):
        return covariant_derivative_sym2(field, geo)
    raise ContractViolation(
        f"covariant derivative supports covector and sym2 fields, got {type(field).__name__}")


def _constant_pack(lattice, riemann_matrix):
    """GeometryCache for the identity metric with prescribed constant curvature."""
    n = lattice.dim
    metric = flat_metric(lattice)
    shape_tail = (1,) * n
    riemann = np.broadcast_to(
        riemann_matrix.reshape((n, n, n, n) + shape_tail),
        (n, n, n, n) + lattice.sizes).copy()
    ricci_mat = np.einsum("kl,kilj...->ij...", np.eye(n), riemann, **_EINSUM_OPTS)
    ricci = Sym2Field.from_matrix(lattice, ricci_mat)
    scal = ScalarField(lattice, np.einsum("ii...->...", ricci_mat, **_EINSUM_OPTS))
    christoffel = np.zeros((n, n, n) + lattice.sizes)
    return GeometryCache(metric, christoffel, riemann, ricci, scal)


def constant_curvature_geometry(lattice, kappa):
    """Pointwise constant-curvature model: flat identity metric carrying the
    algebraic curvature tensor kappa (g_ij g_kl - g_il g_kj).

    There is no global constant-curvature metric on a torus; this pack feeds
    the pointwise curvature algebra only (curvature-operator spectra, etc.).
    """
    n = lattice.dim
    if n < 2:
        raise DomainError("constant-curvature model needs dim >= 2")
    eye = np.eye(n)
    model = kappa * (np.einsum("ij,kl->ikjl", eye, eye)
                     - np.einsum("il,kj->ikjl", eye, eye))
    return _constant_pack(lattice, model)


def sectional_weight_geometry(lattice, weights):
    """Synthetic curvature built from weighted coordinate 2-planes.

    ``weights`` assigns one curvature per coordinate 2-form (n=2: one value,
    n=3: three values for the (01), (02), (12) planes).  Equal weights kappa
    reproduce the constant-curvature model; mixed signs give an indefinite
    curvature operator.
    """
    n = lattice.dim
    planes = [(a, b) for a in range(n) for b in range(a + 1, n)]
    weights = np.atleast_1d(np.asarray(weights, dtype=np.float64))
    if weights.size != len(planes):
        raise ContractViolation(
            f"need {len(planes)} weights for dim {n}, got {weights.size}")
    model = np.zeros((n, n, n, n))
    for w, (a, b) in zip(weights, planes):
        omega = np.zeros((n, n))
        omega[a, b] = 1.0
        omega[b, a] = -1.0
        model += w * np.einsum("ik,jl->ikjl", omega, omega)
    return _constant_pack(lattice, model)


def metric_compatibility_residual(geo):
    """Max |nabla g| over all sites and components (zero in exact arithmetic)."""
    nabla_g = covariant_derivative_sym2(geo.metric.field, geo)
    return float(np.max(np.abs(nabla_g)))


def raise_index(theta, geo):
    """Covector -> vector with the inverse metric."""
    from .lattice import VectorField
    data = np.einsum("ij...,j...->i...", geo.inverse_matrix, theta.data,
                     **_EINSUM_OPTS)
    return VectorField(geo.lattice, data)
