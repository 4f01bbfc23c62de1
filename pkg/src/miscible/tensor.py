"""Bear-Scheidegger diffusion-dispersion tensor and its velocity derivatives.

Everything here is a pure function of arrays and works on batches: the
velocity has shape ``(..., d)`` with ``d`` in {2, 3} and every output keeps
the leading batch axes.

The velocity Jacobian is stored as one rank-3 array ``T[..., i, j, k] =
dD_ij / dv_k``.  The two Kronecker-type contractions used by the adjoint
system are index views of that one array::

    (E (x) a) b    : out_r = sum_{s,k} T[r, s, k] a_k b_s
    (Ehat (x) a) b : out_r = sum_{s,k} T[s, k, r] a_k b_s
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, SingularVelocityError

DEFAULT_EPS_REG = 1e-12


@dataclass(frozen=True)
class DispersionParams:
    """Coefficients of the dispersion tensor.

    Each field may be a scalar or an array broadcastable against the batch
    shape of the velocity.  Dispersivities may be zero (pure molecular
    diffusion); porosity and molecular diffusion must be strictly positive.
    """

    phi: float | np.ndarray
    d_m: float | np.ndarray
    d_t: float | np.ndarray
    d_l: float | np.ndarray

    def __post_init__(self):
        for name in ("phi", "d_m", "d_t", "d_l"):
            val = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(val)):
                raise InvalidArgumentError(f"{name} must be finite")
        if np.any(np.asarray(self.phi) <= 0):
            raise InvalidArgumentError("porosity must be > 0")
        if np.any(np.asarray(self.d_m) <= 0):
            raise InvalidArgumentError("d_m must be > 0")
        if np.any(np.asarray(self.d_t) < 0) or np.any(np.asarray(self.d_l) < 0):
            raise InvalidArgumentError("dispersivities must be >= 0")


def _coef(x, extra_axes: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.reshape(x.shape + (1,) * extra_axes)


def _check_velocity(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim < 1 or v.shape[-1] not in (2, 3):
        raise InvalidArgumentError(f"velocity must have trailing dimension 2 or 3, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError("velocity has non-finite entries")
    return v


def eval_dispersion_tensor(params: DispersionParams, v) -> np.ndarray:
    """Return ``D(v) = phi d_m I + d_t |v| I + (d_l - d_t) v v^T / |v|``.

    At ``v = 0`` the rank-one term is replaced by its limit, zero.  The
    result has shape ``v.shape + (d,)`` and is exactly symmetric.
    """
    v = _check_velocity(v)
    d = v.shape[-1]
    speed = np.sqrt(np.sum(v * v, axis=-1))
    safe = np.where(speed > 0, speed, 1.0)
    rank1 = v[..., :, None] * v[..., None, :] / safe[..., None, None]
    rank1 = np.where((speed > 0)[..., None, None], rank1, 0.0)
    iso = np.asarray(params.phi, dtype=float) * params.d_m + params.d_t * speed
    aniso = _coef(np.subtract(params.d_l, params.d_t), 2)
    return iso[..., None, None] * np.eye(d) + aniso * rank1


def eval_velocity_jacobian(params: DispersionParams, v, eps_reg: float = DEFAULT_EPS_REG) -> np.ndarray:
    """Closed-form ``T[..., i, j, k] = dD_ij/dv_k``.

    Every power of ``|v|`` is evaluated as ``sqrt(|v|^2 + eps_reg^2)`` so the
    map stays defined at ``v = 0`` when ``eps_reg > 0``.

    Raises
    ------
    SingularVelocityError
        If some ``v`` is exactly zero and ``eps_reg == 0``.
    """
    v = _check_velocity(v)
    if eps_reg < 0:
        raise InvalidArgumentError("eps_reg must be >= 0")
    d = v.shape[-1]
    s = np.sqrt(np.sum(v * v, axis=-1) + eps_reg * eps_reg)
    if np.any(s == 0):
        raise SingularVelocityError("velocity Jacobian is undefined at v = 0 without regularization")
    eye = np.eye(d)
    u = v / s[..., None]
    # d_t d|v|/dv_k on the diagonal blocks
    iso = _coef(params.d_t, 3) * eye[:, :, None] * u[..., None, None, :]
    # d(v_i v_j / |v|)/dv_k = (delta_ik v_j + delta_jk v_i)/|v| - v_i v_j v_k/|v|^3
    t1 = eye[:, None, :] * u[..., None, :, None]
    t2 = eye[None, :, :] * u[..., :, None, None]
    t3 = u[..., :, None, None] * u[..., None, :, None] * u[..., None, None, :]
    return iso + _coef(np.subtract(params.d_l, params.d_t), 3) * (t1 + t2 - t3)


def _check_contraction(J, a, b):
    J = np.asarray(J, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if J.ndim < 3:
        raise InvalidArgumentError("Jacobian must have at least 3 axes")
    d = J.shape[-1]
    if J.shape[-3:] != (d, d, d) or a.shape[-1] != d or b.shape[-1] != d:
        raise InvalidArgumentError(
            f"dimension mismatch: J {J.shape}, a {a.shape}, b {b.shape}")
    return J, a, b


def kron_apply_E(J, a, b) -> np.ndarray:
    """``(E (x) a) b``, i.e. ``out_r = sum_{s,k} J[r,s,k] a_k b_s``."""
    J, a, b = _check_contraction(J, a, b)
    return np.einsum("...rsk,...k,...s->...r", J, a, b)


def kron_apply_Ehat(J, a, b) -> np.ndarray:
    """``(Ehat (x) a) b``, i.e. ``out_r = sum_{s,k} J[s,k,r] a_k b_s``.

    The row index of ``Ehat`` is the differentiation index.
    """
    J, a, b = _check_contraction(J, a, b)
    return np.einsum("...skr,...k,...s->...r", J, a, b)
