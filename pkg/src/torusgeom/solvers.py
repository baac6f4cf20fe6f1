"""Matrix-free deflated conjugate gradients and a dense Jacobi eigensolver.

The CG driver works on field objects through a caller-supplied inner product
(the metric L2 inner), never on raw flattened vectors, so the same code serves
covector and mixed unknowns.  Deflation projects a known (near-)kernel out of
the right-hand side and keeps all iterates orthogonal to it; the removed
components are reported, not silently dropped.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    rhs_norm: float
    deflated_components: list
    converged: bool
    residual_history: list = field(default_factory=list)
    max_residual_uptick: float = 0.0  # max r_{k+1}/r_k over the run (monotone if <= 1)
    notes: list = field(default_factory=list)  # stagnation / near-null-direction events


class LinearOperatorSpec:
    """A self-adjoint PSD operator given matrix-free.

    apply : field -> field of the same kind
    inner : (field, field) -> float, the weighted L2 inner product
    deflation_basis : fields spanning the (approximate) kernel; orthonormalized
        internally.
    Self-adjointness is probed on random fields when a solve starts; failure is
    a contract violation, not a solver breakdown.
    """

    def __init__(self, apply, inner, deflation_basis=()):
        self.apply = apply
        self.inner = inner
        self.deflation_basis = list(deflation_basis)


def orthonormalize(fields, inner, drop_tol=1e-12):
    """Modified Gram-Schmidt (two passes) under `inner`; drops dependent vectors."""
    basis = []
    for f in fields:
        v = f
        for _ in range(2):
            for b in basis:
                v = v - inner(v, b) * b
        norm = np.sqrt(max(inner(v, v), 0.0))
        if norm > drop_tol:
            basis.append((1.0 / norm) * v)
    return basis


def _project_out(x, basis, inner):
    coeffs = []
    for b in basis:
        c = inner(x, b)
        coeffs.append(c)
        x = x - c * b
    return x, coeffs


def _random_like(rhs, seed):
    rng = np.random.default_rng(seed)
    data = rng.standard_normal(rhs.data.shape)
    return type(rhs)(rhs.lattice, data)


def cg_solve(op, rhs, tol=1e-10, max_iter=None, abs_scale=None, probe_seed=1234,
             adjointness_tol=1e-10):
    """Deflated conjugate-direction solve for a self-adjoint PSD operator.

    Uses the conjugate-residual update (the minimal-residual variant of
    conjugate gradients), so residual norms are monotone nonincreasing by
    construction; plain CG residual norms can transiently grow, which would
    break the monotonicity contract of this module.

    Returns the minimum-norm solution orthogonal to the deflation basis with
    residual <= tol * max(||rhs after deflation||, abs_scale).  The optional
    abs_scale keeps the target meaningful when the right-hand side is tiny
    (e.g. an input that already lies in the kernel being decomposed onto).
    Non-convergence is reported through the SolveReport, not raised.
    """
    inner = op.inner
    if tol <= 0:
        raise ContractViolation("cg tolerance must be positive")

    # self-adjointness probe on two random fields
    u = _random_like(rhs, probe_seed)
    v = _random_like(rhs, probe_seed + 1)
    au, av = op.apply(u), op.apply(v)
    lhs, rhs_sym = inner(au, v), inner(u, av)
    scale = max(np.sqrt(max(inner(au, au), 0.0) * max(inner(v, v), 0.0)), 1e-300)
    if abs(lhs - rhs_sym) > adjointness_tol * scale:
        raise ContractViolation(
            f"operator failed the self-adjointness probe: |{lhs:.3e} - {rhs_sym:.3e}| "
            f"> {adjointness_tol:.1e} * {scale:.3e}")

    basis = orthonormalize(op.deflation_basis, inner)
    b, deflated = _project_out(rhs, basis, inner)
    rhs_norm = np.sqrt(max(inner(b, b), 0.0))
    if max_iter is None:
        max_iter = 50 * max(int(np.sqrt(rhs.lattice.num_sites)), 10)

    x = 0.0 * rhs
    target = tol * max(rhs_norm, abs_scale or 0.0)
    if rhs_norm <= target or rhs_norm == 0.0:
        return x, SolveReport(0, rhs_norm, rhs_norm, deflated, True, [rhs_norm])

    def project(f):
        return _project_out(f, basis, inner)[0] if basis else f

    history = [rhs_norm]
    notes = []
    uptick = 0.0
    iterations = 0
    converged = False
    final_res = rhs_norm
    best_x, best_res = x, np.inf
    op_scale = 0.0
    adaptive_deflations = 0
    r = b
    # Outer restarts recompute the true residual r = b - A x, guarding against
    # drift of the recursive residual on ill-conditioned systems.  When the
    # inner iteration wanders into a numerically null direction (a near-kernel
    # vector the caller could not supply analytically), that direction is
    # deflated adaptively and reported; it is never silently integrated.
    for _ in range(8):
        p = r
        ar = project(op.apply(r))
        ap = ar
        r_ar = inner(r, ar)
        stalled = False
        recent_best = history[-1]
        since_improvement = 0
        while iterations < max_iter:
            denom = inner(ap, ap)
            pp = inner(p, p)
            direction_scale = np.sqrt(denom / pp) if pp > 0 else 0.0
            op_scale = max(op_scale, direction_scale)
            if denom <= 0.0 or r_ar <= 0.0 or direction_scale < 1e-8 * op_scale:
                stalled = True
                if pp > 0 and adaptive_deflations < 4:
                    v = (1.0 / np.sqrt(pp)) * p
                    basis.append(v)
                    comp = inner(b, v)
                    b = b - comp * v
                    deflated.append(comp)
                    adaptive_deflations += 1
                    best_res = np.inf  # the deflated problem re-baselines
                    notes.append(
                        f"deflated near-null direction at iteration {iterations}: "
                        f"|Ap|/|p| = {direction_scale:.2e} (operator scale "
                        f"{op_scale:.2e}), rhs component {comp:.2e}")
                else:
                    notes.append(
                        f"breakdown at iteration {iterations}: |Ap|/|p| = "
                        f"{direction_scale:.2e} (operator scale {op_scale:.2e})")
                break
            alpha = r_ar / denom
            x = x + alpha * p
            r = project(r - alpha * ap)
            res = np.sqrt(max(inner(r, r), 0.0))
            if history[-1] > 0:
                uptick = max(uptick, res / history[-1])
            history.append(res)
            iterations += 1
            if res <= target:
                break
            if res < (1.0 - 1e-6) * recent_best:
                recent_best = res
                since_improvement = 0
            else:
                since_improvement += 1
                if since_improvement >= 100:
                    notes.append(
                        f"stagnated at residual {res:.2e} after {iterations} iterations")
                    stalled = True
                    break
            ar = project(op.apply(r))
            r_ar_new = inner(r, ar)
            beta = r_ar_new / r_ar
            r_ar = r_ar_new
            p = r + beta * p
            ap = ar + beta * ap
        x = project(x)
        r = project(b - op.apply(x))  # true residual
        final_res = np.sqrt(max(inner(r, r), 0.0))
        history[-1] = final_res
        if final_res < best_res:
            best_x, best_res = x, final_res
        converged = final_res <= target
        if converged or iterations >= max_iter:
            break
        if stalled and adaptive_deflations == 0 and final_res > 0.5 * best_res:
            break  # a plain restart is not making headway
        x = project(best_x)
        r = project(b - op.apply(x))
    x = best_x
    final_res = best_res if np.isfinite(best_res) else final_res
    converged = final_res <= target
    if basis:
        x, _ = _project_out(x, basis, inner)
    return x, SolveReport(iterations, final_res, rhs_norm, deflated, converged,
                          history, uptick, notes)


def jacobi_eigensolve(matrix, tol_factor=1e-12, max_sweeps=60):
    """Cyclic Jacobi rotations for a dense symmetric matrix.

    Returns (eigenvalues ascending, eigenvector columns, orthogonal).  The
    input is symmetrized first; rotations run until the off-diagonal Frobenius
    norm falls below tol_factor * ||A||_F.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractViolation("jacobi eigensolver needs a square matrix")
    a = 0.5 * (a + a.T)
    m = a.shape[0]
    v = np.eye(m)
    if m == 1:
        return a.diagonal().copy(), v
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return np.zeros(m), v
    threshold = tol_factor * norm
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(a * a) - np.sum(a.diagonal() ** 2))
        if off <= threshold:
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = a[p, q]
                if abs(apq) <= 0.1 * threshold / m:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                vp = c * v[:, p] - s * v[:, q]
                vq = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = vp, vq
    eigenvalues = a.diagonal().copy()
    order = np.argsort(eigenvalues, kind="stable")
    return eigenvalues[order], v[:, order]
