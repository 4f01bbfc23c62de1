"""Randomized verification of the boundary and interior tensor identities.

Each ``check_*`` function takes a batch of samples and returns a pair of
arrays ``(abs_residual, rel_residual)``.  The relative residual divides by
``1 + sum(|individual terms|)`` of the expression being tested, which makes
one tolerance meaningful across parameter scales.

Boundary samples live on a pointwise frame: a unit normal given by angles
(``theta`` in 2D, ``theta`` and the polar angle in 3D) and the matching
tangent basis.  Velocities and the constrained gradients are drawn in the
tangent space, so their normal components vanish up to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import InvalidArgumentError, MiscibleError
from .tensor import (
    DispersionParams,
    eval_dispersion_tensor,
    eval_velocity_jacobian,
    kron_apply_E,
    kron_apply_Ehat,
)

POLE_MARGIN = 1e-3
MAX_REJECTION_ROUNDS = 1000

IDENTITIES_2D = ("flux_equivalence", "e_boundary", "duality", "ehat_boundary")
IDENTITIES_3D = IDENTITIES_2D + ("helper_relations",)

# which constrained vectors each boundary identity depends on
HYPOTHESES = {
    "flux_equivalence": ("v",),
    "e_boundary": ("v", "grad_p", "grad_c"),
    "ehat_boundary": ("v", "grad_c", "grad_psi"),
    "helper_relations": ("v", "grad_psi"),
}


@dataclass(frozen=True)
class SampleRanges:
    v_min: float = 0.1
    v_max: float = 100.0
    grad_max: float = 10.0
    phi: tuple[float, float] = (0.1, 1.0)
    d_m: tuple[float, float] = (0.1, 1.0)
    d_t: tuple[float, float] = (0.1, 1.0)
    # d_l = d_t * ratio with ratio log-uniform in this range
    d_l_ratio: tuple[float, float] = (2.0, 10.0)
    K: tuple[float, float] = (0.1, 10.0)

    def __post_init__(self):
        if not (0 < self.v_min < self.v_max) or self.grad_max <= 0:
            raise InvalidArgumentError("sample ranges must be positive and ordered")


@dataclass
class BoundaryFrame:
    dim: int
    theta: np.ndarray
    polar: np.ndarray | None
    normal: np.ndarray
    tangents: np.ndarray  # (n, dim-1, dim)


@dataclass
class BoundarySample:
    """A batch of boundary points; every vector field has shape ``(n, dim)``."""

    frame: BoundaryFrame
    v: np.ndarray
    grad_p: np.ndarray
    grad_c: np.ndarray
    grad_psi: np.ndarray
    grad_g: np.ndarray
    params: DispersionParams
    K: np.ndarray

    def __len__(self):
        return self.v.shape[0]


@dataclass
class IdentityReport:
    identity_id: str
    dim: int
    samples: int
    max_abs_residual: float
    max_rel_residual: float
    tolerance: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(self.max_rel_residual <= self.tolerance)

    def csv_row(self) -> str:
        return (f"{self.identity_id},{self.dim},{self.samples},"
                f"{self.max_abs_residual:.17g},{self.max_rel_residual:.17g},"
                f"{'true' if self.passed else 'false'}")


CSV_HEADER = "identity_id,dim,samples,max_abs,max_rel,pass"


def make_frame(dim: int, theta, polar=None) -> BoundaryFrame:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    ct, st = np.cos(theta), np.sin(theta)
    if dim == 2:
        normal = np.stack([ct, st], axis=-1)
        tangents = np.stack([-st, ct], axis=-1)[:, None, :]
        return BoundaryFrame(2, theta, None, normal, tangents)
    if dim != 3:
        raise InvalidArgumentError("dim must be 2 or 3")
    polar = np.atleast_1d(np.asarray(polar, dtype=float))
    cp, sp = np.cos(polar), np.sin(polar)
    normal = np.stack([ct * sp, st * sp, cp], axis=-1)
    e_theta = np.stack([-st, ct, np.zeros_like(ct)], axis=-1)
    e_polar = np.stack([ct * cp, st * cp, -sp], axis=-1)
    return BoundaryFrame(3, theta, polar, normal, np.stack([e_theta, e_polar], axis=1))


def _log_uniform(rng, lo_hi, n):
    lo, hi = lo_hi
    return np.exp(rng.uniform(np.log(lo), np.log(hi), n))


def _tangential(rng, frame, n, bound):
    coef = rng.uniform(-bound, bound, (n, frame.dim - 1))
    return np.einsum("nt,ntd->nd", coef, frame.tangents)


def _sample_params(rng, n, ranges):
    d_t = _log_uniform(rng, ranges.d_t, n)
    params = DispersionParams(
        phi=rng.uniform(*ranges.phi, n),
        d_m=_log_uniform(rng, ranges.d_m, n),
        d_t=d_t,
        d_l=d_t * _log_uniform(rng, ranges.d_l_ratio, n),
    )
    return params, _log_uniform(rng, ranges.K, n)


def _sample_velocity(rng, n, ranges, draw):
    """Draw with ``draw(rng, k)`` and reject until every ``|v| >= v_min``."""
    v = draw(rng, n)
    for _ in range(MAX_REJECTION_ROUNDS):
        bad = np.linalg.norm(v, axis=-1) < ranges.v_min
        if not bad.any():
            return v
        v[bad] = draw(rng, int(bad.sum()))
    raise MiscibleError("velocity rejection sampling did not terminate")


def sample_boundary_batch(dim: int, n: int, seed: int, ranges: SampleRanges = SampleRanges()) -> BoundarySample:
    """Draw ``n`` boundary samples deterministically from ``seed``."""
    if dim not in (2, 3):
        raise InvalidArgumentError("dim must be 2 or 3")
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2 * np.pi, n)
    polar = rng.uniform(POLE_MARGIN, np.pi - POLE_MARGIN, n) if dim == 3 else None
    frame = make_frame(dim, theta, polar)

    v = _tangential(rng, frame, n, ranges.v_max)
    # redraw rejected rows in their own frames
    for _ in range(MAX_REJECTION_ROUNDS):
        bad = np.flatnonzero(np.linalg.norm(v, axis=-1) < ranges.v_min)
        if bad.size == 0:
            break
        sub = BoundaryFrame(dim, theta[bad], None, frame.normal[bad], frame.tangents[bad])
        v[bad] = _tangential(rng, sub, bad.size, ranges.v_max)
    else:
        raise MiscibleError("velocity rejection sampling did not terminate")

    grad_p = _tangential(rng, frame, n, ranges.grad_max)
    grad_c = _tangential(rng, frame, n, ranges.grad_max)
    grad_psi = _tangential(rng, frame, n, ranges.grad_max)
    grad_g = rng.uniform(-ranges.grad_max, ranges.grad_max, (n, dim))
    params, K = _sample_params(rng, n, ranges)
    return BoundarySample(frame, v, grad_p, grad_c, grad_psi, grad_g, params, K)


def sample_boundary(dim: int, seed: int, ranges: SampleRanges = SampleRanges()) -> BoundarySample:
    """A single boundary sample (a batch of length one)."""
    return sample_boundary_batch(dim, 1, seed, ranges)


def sample_interior_batch(dim: int, n: int, seed: int, ranges: SampleRanges = SampleRanges()):
    """Unconstrained ``(params, v, grad_p, grad_c, grad_psi, K)`` for interior identities."""
    if dim not in (2, 3):
        raise InvalidArgumentError("dim must be 2 or 3")
    rng = np.random.default_rng(seed)
    v = _sample_velocity(rng, n, ranges,
                         lambda r, k: r.uniform(-ranges.v_max, ranges.v_max, (k, dim)))
    grads = [rng.uniform(-ranges.grad_max, ranges.grad_max, (n, dim)) for _ in range(3)]
    params, K = _sample_params(rng, n, ranges)
    return params, v, grads[0], grads[1], grads[2], K


def perturb_hypothesis(s: BoundarySample, which: str, magnitude: float = 1.0) -> BoundarySample:
    """Return a copy of ``s`` with ``magnitude * n`` added to one constrained vector."""
    if which not in ("v", "grad_p", "grad_c", "grad_psi"):
        raise InvalidArgumentError(f"unknown hypothesis {which!r}")
    return replace(s, **{which: getattr(s, which) + magnitude * s.frame.normal})


def _finish(value, terms):
    absval = np.abs(value)
    return absval, absval / (1.0 + terms)


JacobianFn = Callable[..., np.ndarray]


def check_flux_equivalence(s: BoundarySample):
    """``(D grad g).n`` against ``(phi d_m + d_t |v|)(grad g . n)``."""
    n = s.frame.normal
    D = eval_dispersion_tensor(s.params, s.v)
    speed = np.linalg.norm(s.v, axis=-1)
    coef = s.params.phi * s.params.d_m + s.params.d_t * speed
    lhs_terms = D * s.grad_g[:, None, :] * n[:, :, None]
    rhs_terms = coef[:, None] * s.grad_g * n
    value = lhs_terms.sum(axis=(1, 2)) - rhs_terms.sum(axis=1)
    terms = np.abs(lhs_terms).sum(axis=(1, 2)) + np.abs(rhs_terms).sum(axis=1)
    return _finish(value, terms)


def check_E_boundary(s: BoundarySample, jacobian: JacobianFn = eval_velocity_jacobian):
    """Normal component of ``(E (x) grad p) grad c``."""
    J = jacobian(s.params, s.v)
    n = s.frame.normal
    value = np.einsum("nr,nr->n", kron_apply_E(J, s.grad_p, s.grad_c), n)
    terms = np.abs(np.einsum("nrsk,nk,ns,nr->nrsk", J, s.grad_p, s.grad_c, n)).sum(axis=(1, 2, 3))
    return _finish(value, terms)


def check_Ehat_boundary(s: BoundarySample, jacobian: JacobianFn = eval_velocity_jacobian):
    """Normal component of ``(Ehat (x) grad c) grad psi``."""
    J = jacobian(s.params, s.v)
    n = s.frame.normal
    value = np.einsum("nr,nr->n", kron_apply_Ehat(J, s.grad_c, s.grad_psi), n)
    terms = np.abs(np.einsum("nskr,nk,ns,nr->nskr", J, s.grad_c, s.grad_psi, n)).sum(axis=(1, 2, 3))
    return _finish(value, terms)


def check_helper_relations_3d(s: BoundarySample):
    """Residuals of the three tangential-gradient relations; shape ``(n, 3)``."""
    if s.frame.dim != 3:
        raise InvalidArgumentError("helper relations are defined in 3D only")
    n1, n2, n3 = s.frame.normal.T
    v1, v2, v3 = s.v.T
    px, py, pz = s.grad_psi.T
    lhs = [
        [n1 * v2 * v2 * px, n1 * v3 * v3 * px, -n1 * v1 * v2 * py, -n1 * v1 * v3 * pz],
        [-n2 * v1 * v2 * px, n2 * v1 * v1 * py, n2 * v3 * v3 * py, -n2 * v2 * v3 * pz],
        [-n3 * v1 * v3 * px, -n3 * v2 * v3 * py, n3 * v1 * v1 * pz, n3 * v2 * v2 * pz],
    ]
    rhs_factors = [
        ((v2 * n3, -v3 * n2), (v3 * py, -v2 * pz)),
        ((v1 * n3, -v3 * n1), (v3 * px, -v1 * pz)),
        ((v1 * n2, -v2 * n1), (v2 * px, -v1 * py)),
    ]
    absres, relres = [], []
    for left, (a, b) in zip(lhs, rhs_factors):
        right = [x * y for x in a for y in b]
        value = sum(left) - sum(right)
        terms = sum(np.abs(t) for t in left) + sum(np.abs(t) for t in right)
        ar, rr = _finish(value, terms)
        absres.append(ar)
        relres.append(rr)
    return np.stack(absres, axis=-1), np.stack(relres, axis=-1)


def check_duality_interior(params, v, grad_p, grad_c, grad_psi, K,
                           jacobian: JacobianFn = eval_velocity_jacobian):
    """``[K (E (x) grad p) grad c] . grad psi - grad p . [K (Ehat (x) grad c) grad psi]``."""
    J = jacobian(params, v)
    K = np.asarray(K, dtype=float)
    lhs = K * np.einsum("...r,...r->...", kron_apply_E(J, grad_p, grad_c), grad_psi)
    rhs = K * np.einsum("...r,...r->...", grad_p, kron_apply_Ehat(J, grad_c, grad_psi))
    terms = 2 * np.abs(K) * np.abs(
        np.einsum("...rsk,...k,...s,...r->...rsk", J, grad_p, grad_c, grad_psi)).sum(axis=(-1, -2, -3))
    return _finish(lhs - rhs, terms)


def evaluate_identity(identity_id: str, dim: int, samples: int, seed: int,
                      ranges: SampleRanges = SampleRanges(),
                      jacobian: JacobianFn = eval_velocity_jacobian,
                      perturb: str | None = None):
    """Residual arrays for one identity over ``samples`` seeded draws."""
    valid = IDENTITIES_3D if dim == 3 else IDENTITIES_2D
    if identity_id not in valid:
        raise InvalidArgumentError(f"unknown identity {identity_id!r} for dim {dim}")
    if identity_id == "duality":
        if perturb is not None:
            raise InvalidArgumentError("the duality identity has no boundary hypotheses")
        return check_duality_interior(*sample_interior_batch(dim, samples, seed, ranges), jacobian=jacobian)
    s = sample_boundary_batch(dim, samples, seed, ranges)
    if perturb is not None:
        if perturb not in HYPOTHESES[identity_id]:
            raise InvalidArgumentError(f"{identity_id} does not assume anything about {perturb}")
        s = perturb_hypothesis(s, perturb)
    if identity_id == "flux_equivalence":
        return check_flux_equivalence(s)
    if identity_id == "e_boundary":
        return check_E_boundary(s, jacobian)
    if identity_id == "ehat_boundary":
        return check_Ehat_boundary(s, jacobian)
    absres, relres = check_helper_relations_3d(s)
    return absres.max(axis=-1), relres.max(axis=-1)


def run_identity_suite(dim: int, samples: int, seed: int, tolerance: float = 1e-12,
                       identity: str | None = None,
                       ranges: SampleRanges = SampleRanges(),
                       jacobian: JacobianFn = eval_velocity_jacobian) -> list[IdentityReport]:
    """One report per identity; each identity draws from its own derived seed."""
    ids = IDENTITIES_3D if dim == 3 else IDENTITIES_2D
    if identity is not None:
        if identity not in ids:
            raise InvalidArgumentError(f"unknown identity {identity!r} for dim {dim}")
        ids = (identity,)
    reports = []
    for ident in ids:
        sub_seed = np.random.SeedSequence([seed, dim, IDENTITIES_3D.index(ident)])
        absres, relres = evaluate_identity(ident, dim, samples, sub_seed, ranges, jacobian)
        reports.append(IdentityReport(ident, dim, samples, float(absres.max()),
                                      float(relres.max()), tolerance))
    return reports


def flipped_jacobian(params, v, eps_reg=1e-12):
    """Deliberately wrong Jacobian (sign of the dD_12/dv block flipped); used to test the harness."""
    J = eval_velocity_jacobian(params, v, eps_reg).copy()
    J[..., 0, 1, :] *= -1
    return J
