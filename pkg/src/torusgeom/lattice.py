"""Periodic uniform lattices on the n-torus and the field types that live on them.

The lattice owns differentiation (4th-order central differences with periodic
wraparound), quadrature, and metric-weighted L2 inner products.  All reductions
go through a fixed pairwise-tree summation so results are bit-reproducible and
independent of how work is partitioned.

Conventions:
  * grid axes are the trailing axes of every data array, row-major, so a
    scalar field has shape ``sizes`` and a k-component field has shape
    ``(k, *sizes)``;
  * symmetric 2-tensors store only the upper triangle, slot order
    (0,0), (0,1), ..., (0,n-1), (1,1), ..., (n-1,n-1).
"""

import itertools

import numpy as np

from .errors import ContractViolation, DomainError

# 4th-order central first derivative: (8 (f[+1] - f[-1]) - (f[+2] - f[-2])) / (12 h)
# grouped as differences so a constant field differentiates to bitwise zero


def pairwise_sum(values):
    """Sum an array in a fixed binary-tree order (fold-in-half reduction).

    The association order depends only on the element count, never on thread
    or chunk layout, so repeated calls are bit-identical.
    """
    v = np.ascontiguousarray(values, dtype=np.float64).ravel()
    while v.size > 1:
        half = v.size // 2
        folded = v[:half] + v[half:2 * half]
        if v.size % 2:
            folded = np.concatenate([folded, v[-1:]])
        v = folded
    return float(v[0]) if v.size else 0.0


def sym2_slot_count(n):
    return n * (n + 1) // 2


def sym2_pairs(n):
    """Upper-triangle (i, j) pairs in slot order."""
    return [(i, j) for i in range(n) for j in range(i, n)]


def sym2_slot(i, j, n):
    """Slot index of component (i, j); symmetry is enforced by (min, max) lookup."""
    a, b = (i, j) if i <= j else (j, i)
    return a * n - a * (a - 1) // 2 + (b - a)


class Lattice:
    """Uniform periodic grid over T^n.

    Parameters
    ----------
    sizes : per-axis point counts, all even, each >= 8
    periods : per-axis lengths (default 2*pi per axis)
    """

    def __init__(self, sizes, periods=None):
        sizes = tuple(int(s) for s in sizes)
        if not 1 <= len(sizes) <= 3:
            raise ContractViolation(f"lattice dimension must be 1, 2 or 3, got {len(sizes)}")
        for s in sizes:
            if s < 8 or s % 2:
                raise ContractViolation(f"axis sizes must be even and >= 8, got {sizes}")
        if periods is None:
            periods = (2.0 * np.pi,) * len(sizes)
        periods = tuple(float(p) for p in periods)
        if len(periods) != len(sizes) or any(p <= 0 for p in periods):
            raise ContractViolation(f"need one positive period per axis, got {periods}")
        self.dim = len(sizes)
        self.sizes = sizes
        self.periods = periods
        self.spacings = tuple(p / s for p, s in zip(periods, sizes))
        self.num_sites = int(np.prod(sizes))
        self.cell_volume = float(np.prod(self.spacings))
        # coordinate grids, shape (*sizes) each
        axes_1d = [np.arange(s) * h for s, h in zip(sizes, self.spacings)]
        self.coords = np.meshgrid(*axes_1d, indexing="ij")

    def __eq__(self, other):
        return (isinstance(other, Lattice) and self.sizes == other.sizes
                and self.periods == other.periods)

    def __hash__(self):
        return hash((self.sizes, self.periods))

    def __repr__(self):
        grid = "x".join(str(s) for s in self.sizes)
        return f"Lattice({grid}, periods={self.periods})"

    def diff(self, arr, axis):
        """4th-order periodic central difference along grid axis `axis`.

        `arr` may carry leading component axes; the grid axes are the trailing
        `dim` axes.  Returns a new array of the same shape.
        """
        if not 0 <= axis < self.dim:
            raise ContractViolation(f"axis {axis} out of range for dim {self.dim}")
        arr = np.asarray(arr)
        ax = arr.ndim - self.dim + axis
        h = self.spacings[axis]
        # roll(-s) puts arr[i + s] at position i
        near = np.roll(arr, -1, axis=ax) - np.roll(arr, 1, axis=ax)
        far = np.roll(arr, -2, axis=ax) - np.roll(arr, 2, axis=ax)
        return (8.0 * near - far) / (12.0 * h)


def _freeze(arr):
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


class Field:
    """Base class: immutable component data over a lattice.

    Scalar fields are stored with shape ``sizes``; every other kind carries a
    leading component axis, shape ``(ncomp, *sizes)``, even when ncomp == 1
    (covectors and symmetric tensors on the circle).
    """

    scalar_layout = False

    def __init__(self, lattice, data):
        ncomp = self._component_count(lattice.dim)
        data = np.asarray(data, dtype=np.float64)
        expected = lattice.sizes if self.scalar_layout else (ncomp,) + lattice.sizes
        if data.shape != expected:
            raise ContractViolation(
                f"{type(self).__name__} expects data shape {expected}, got {data.shape}")
        self.lattice = lattice
        self.data = _freeze(data)

    @classmethod
    def _component_count(cls, dim):
        raise NotImplementedError

    @property
    def num_components(self):
        return self._component_count(self.lattice.dim)

    def same_lattice(self, other):
        if self.lattice != other.lattice:
            raise ContractViolation("fields live on different lattices")

    def __add__(self, other):
        self.same_lattice(other)
        if type(other) is not type(self):
            raise ContractViolation("cannot add fields of different kinds")
        return type(self)(self.lattice, self.data + other.data)

    def __sub__(self, other):
        self.same_lattice(other)
        if type(other) is not type(self):
            raise ContractViolation("cannot subtract fields of different kinds")
        return type(self)(self.lattice, self.data - other.data)

    def __mul__(self, scalar):
        return type(self)(self.lattice, self.data * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return type(self)(self.lattice, -self.data)


class ScalarField(Field):
    kind = "scalar"
    scalar_layout = True

    @classmethod
    def _component_count(cls, dim):
        return 1


class CovectorField(Field):
    kind = "covector"

    @classmethod
    def _component_count(cls, dim):
        return dim

    def component(self, i):
        return self.data[i]


class VectorField(Field):
    kind = "vector"

    @classmethod
    def _component_count(cls, dim):
        return dim

    def component(self, i):
        return self.data[i]


class Sym2Field(Field):
    """Symmetric 2-tensor field; stores the upper triangle only."""

    kind = "sym2"

    @classmethod
    def _component_count(cls, dim):
        return sym2_slot_count(dim)

    def component(self, i, j):
        return self.data[sym2_slot(i, j, self.lattice.dim)]

    def as_matrix(self):
        """Dense (n, n, *sizes) view-copy with both triangles filled."""
        n = self.lattice.dim
        out = np.empty((n, n) + self.lattice.sizes)
        for slot, (i, j) in enumerate(sym2_pairs(n)):
            out[i, j] = self.data[slot]
            out[j, i] = self.data[slot]
        return out

    @classmethod
    def from_matrix(cls, lattice, mat):
        """Pack the upper triangle of a dense (n, n, *sizes) array."""
        n = lattice.dim
        data = np.stack([mat[i, j] for (i, j) in sym2_pairs(n)])
        return cls(lattice, data)


FIELD_KINDS = {
    "scalar": ScalarField,
    "covector": CovectorField,
    "vector": VectorField,
    "sym2": Sym2Field,
}


def partial_derivative(field, axis):
    """4th-order periodic derivative of a field (componentwise), same kind out."""
    if isinstance(field, Field):
        return type(field)(field.lattice, field.lattice.diff(field.data, axis))
    raise ContractViolation(f"expected a Field, got {type(field).__name__}")


def integrate(f, density):
    """Quadrature of f * density over the torus: pairwise-tree site sum times cell volume.

    `density` is the volume density (sqrt(det g)); it must be positive everywhere.
    """
    f.same_lattice(density)
    dens = density.data
    if np.any(dens <= 0.0):
        raise DomainError("volume density must be positive at every site")
    return pairwise_sum(f.data * dens) * f.lattice.cell_volume


def integrate_array(values, lattice):
    """Site sum of a raw array (already containing any density weight)."""
    return pairwise_sum(values) * lattice.cell_volume


def pointwise_pairing(a, b, metric):
    """Metric pairing of two same-kind fields at every site, as a raw grid array.

    scalar: a*b;  covector: g^{ij} a_i b_j;  vector: g_{ij} a^i b^j;
    sym2: g^{ik} g^{jl} a_{ij} b_{kl}.
    """
    if type(a) is not type(b):
        raise ContractViolation("pairing requires fields of the same kind")
    a.same_lattice(b)
    a.same_lattice(metric.field)
    if isinstance(a, ScalarField):
        return a.data * b.data
    if isinstance(a, CovectorField):
        ginv = metric.inverse_matrix
        return np.einsum("ij...,i...,j...->...", ginv, a.data, b.data)
    if isinstance(a, VectorField):
        gmat = metric.matrix
        return np.einsum("ij...,i...,j...->...", gmat, a.data, b.data)
    if isinstance(a, Sym2Field):
        ginv = metric.inverse_matrix
        amat = a.as_matrix()
        bmat = b.as_matrix()
        return np.einsum("ik...,jl...,ij...,kl...->...", ginv, ginv, amat, bmat)
    raise ContractViolation(f"unsupported field kind {type(a).__name__}")


def l2_inner(a, b, metric):
    """L2 inner product <a, b> = integral of the pointwise metric pairing dV_g."""
    pairing = pointwise_pairing(a, b, metric)
    return pairwise_sum(pairing * metric.volume_density.data) * a.lattice.cell_volume


def l2_norm(a, metric):
    return np.sqrt(max(l2_inner(a, a, metric), 0.0))


def _mode_iter(dim, max_mode):
    """All integer mode vectors with |k_a| <= max_mode, in a fixed order."""
    ranges = [range(-max_mode, max_mode + 1)] * dim
    return itertools.product(*ranges)


def random_band_limited(kind, lattice, max_mode, seed, amplitude=1.0):
    """Deterministic pseudo-random trigonometric polynomial field.

    Every component is a sum over Fourier modes |k_a| <= max_mode with
    normally distributed coefficients damped by 1/(1+|k|^2).  The same seed
    always produces a bit-identical field.
    """
    cls = FIELD_KINDS[kind] if isinstance(kind, str) else kind
    max_mode = int(max_mode)
    if max_mode < 0:
        raise DomainError("max_mode must be nonnegative")
    for s in lattice.sizes:
        if max_mode > s // 4:
            raise DomainError(
                f"max_mode {max_mode} too large for grid {lattice.sizes} (limit N/4)")
    rng = np.random.default_rng(int(seed))
    ncomp = cls._component_count(lattice.dim)
    phases = [2.0 * np.pi * x / p for x, p in zip(lattice.coords, lattice.periods)]
    comps = []
    for _ in range(ncomp):
        acc = np.zeros(lattice.sizes)
        for k in _mode_iter(lattice.dim, max_mode):
            ca, cb = rng.standard_normal(2)
            damp = amplitude / (1.0 + float(sum(x * x for x in k)))
            if all(x == 0 for x in k):
                acc = acc + damp * ca
                continue
            phase = sum(ki * ph for ki, ph in zip(k, phases))
            acc = acc + damp * (ca * np.cos(phase) + cb * np.sin(phase))
        comps.append(acc)
    data = comps[0] if cls.scalar_layout else np.stack(comps)
    return cls(lattice, data)


def constant_field(kind, lattice, values):
    """Field with the same component values at every site."""
    cls = FIELD_KINDS[kind] if isinstance(kind, str) else kind
    ncomp = cls._component_count(lattice.dim)
    values = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if values.size != ncomp:
        raise ContractViolation(f"need {ncomp} component values, got {values.size}")
    if cls.scalar_layout:
        data = np.full(lattice.sizes, values[0])
    else:
        data = np.broadcast_to(
            values.reshape((ncomp,) + (1,) * lattice.dim),
            (ncomp,) + lattice.sizes).copy()
    return cls(lattice, data)
