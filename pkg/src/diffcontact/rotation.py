"""Exponential-coordinate rotations and their derivatives.

The rotation ``R(theta) = exp([theta]x)`` and the left Jacobian ``J`` with
``omega = J(theta) @ theta_dot`` (world-frame angular velocity) are written as

    R = I + f1(s) K + f2(s) K^2
    J = I + f2(s) K + f3(s) K^2

with ``K = [theta]x``, ``s = theta . theta`` and
``f_m(s) = sum_n (-1)^n s^n / (2n + m)!``.  Working in ``s`` keeps every
coefficient analytic at the origin; small arguments use the power series.
"""

from __future__ import annotations

from math import factorial

import numpy as np

# Below this squared angle the coefficient series are used.  The closed forms
# lose digits to cancellation well above 1e-4, so the switch sits at |theta|=1.
SERIES_THRESHOLD_SQ = 1.0
_N_SERIES = 16

_EYE = np.eye(3)
_BASIS_SKEW = np.array(
    [
        [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
        [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
        [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
    ]
)


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix, ``skew(a) @ b == cross(a, b)``.

    Accepts a single 3-vector or a stack ``(..., 3)``.
    """
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def basis_skew(k: int) -> np.ndarray:
    return _BASIS_SKEW[k]


def _series(s: float, m: int, deriv: int) -> float:
    total = 0.0
    for n in range(deriv, _N_SERIES):
        c = (-1.0) ** n / factorial(2 * n + m)
        for d in range(deriv):
            c *= n - d
        total += c * s ** (n - deriv)
    return total


def coefficients(s: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(f, df, ddf)`` for ``m = 0..3`` as arrays indexed by ``m``.

    ``df`` and ``ddf`` are derivatives with respect to ``s = |theta|^2``.
    """
    if s < SERIES_THRESHOLD_SQ:
        f = np.array([_series(s, m, 0) for m in range(4)])
        df = np.array([_series(s, m, 1) for m in range(4)])
        ddf = np.array([_series(s, m, 2) for m in range(4)])
        return f, df, ddf
    a = np.sqrt(s)
    sa, ca = np.sin(a), np.cos(a)
    f = np.array([ca, sa / a, (1.0 - ca) / s, (a - sa) / (s * a)])
    # f_m' = (f_{m-1} - m f_m) / (2s), f_0' = -f_1 / 2
    df = np.empty(4)
    df[0] = -0.5 * f[1]
    for m in range(1, 4):
        df[m] = (f[m - 1] - m * f[m]) / (2.0 * s)
    # f_m'' = (f_{m-1}' - (m+2) f_m') / (2s); f_0'' = -f_1'/2
    ddf = np.empty(4)
    ddf[0] = -0.5 * df[1]
    for m in range(1, 4):
        ddf[m] = (df[m - 1] - (m + 2) * df[m]) / (2.0 * s)
    return f, df, ddf


def rotation_matrix(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    f, _, _ = coefficients(float(theta @ theta))
    K = skew(theta)
    return _EYE + f[1] * K + f[2] * (K @ K)


def rotation_and_jacobian(theta: np.ndarray, order: int = 1):
    """Rotation, angular-velocity Jacobian and their derivatives.

    Parameters
    ----------
    theta : (3,) array
        Exponential coordinates (axis times angle).
    order : int
        0 returns ``(R, J)``; 1 adds ``dR`` and ``dJ`` with
        ``dR[k] = dR/dtheta_k``; 2 also adds ``ddJ[k, l]``.

    Returns
    -------
    tuple
        ``(R, J[, dR, dJ[, ddJ]])``.
    """
    theta = np.asarray(theta, dtype=float)
    s = float(theta @ theta)
    f, df, ddf = coefficients(s)
    K = skew(theta)
    K2 = K @ K
    R = _EYE + f[1] * K + f[2] * K2
    J = _EYE + f[2] * K + f[3] * K2
    if order == 0:
        return R, J
    E = _BASIS_SKEW
    EK = E @ K  # (3,3,3)
    KE = K @ E
    sym = EK + KE
    dR = (
        2.0 * theta[:, None, None] * (df[1] * K + df[2] * K2)[None]
        + f[1] * E
        + f[2] * sym
    )
    lin = df[2] * K + df[3] * K2
    dJ = 2.0 * theta[:, None, None] * lin[None] + f[2] * E + f[3] * sym
    if order == 1:
        return R, J, dR, dJ
    quad = ddf[2] * K + ddf[3] * K2
    # G[l] = d(lin)/dtheta_l without the 2 theta_l ds factor
    G = df[2] * E + df[3] * sym
    ddJ = 4.0 * theta[:, None, None, None] * theta[None, :, None, None] * quad
    ddJ += 2.0 * theta[:, None, None, None] * G[None, :]
    ddJ += 2.0 * theta[None, :, None, None] * G[:, None]
    ddJ[np.arange(3), np.arange(3)] += 2.0 * lin
    EE = np.einsum("kab,lbc->klac", E, E)
    ddJ += f[3] * (EE + EE.transpose(1, 0, 2, 3))
    return R, J, dR, dJ, ddJ


def log_map(R: np.ndarray) -> np.ndarray:
    """Exponential coordinates of a rotation matrix, angle in [0, pi]."""
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    a = np.arccos(c)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if a < 1e-6:
        return 0.5 * w
    if np.pi - a < 1e-4:
        # near pi: use the symmetric part
        B = (R + _EYE) / 2.0
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if axis @ w < 0:
            axis = -axis
        return a * axis
    return a / (2.0 * np.sin(a)) * w


def recenter(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None:
    """Chart change for ``|theta| > pi``.

    Returns ``(theta', D, dD)`` with ``theta' = theta (1 - 2 pi / a)`` which
    describes the same rotation, ``D = dtheta'/dtheta`` and
    ``dD[k] = dD/dtheta_k``.  Returns ``None`` when no change is needed.
    """
    theta = np.asarray(theta, dtype=float)
    a = float(np.linalg.norm(theta))
    if a <= np.pi:
        return None
    c = 2.0 * np.pi
    new = theta * (1.0 - c / a)
    D = (1.0 - c / a) * _EYE + c * np.outer(theta, theta) / a**3
    dD = np.empty((3, 3, 3))
    for k in range(3):
        ek = _EYE[k]
        dD[k] = (
            c * theta[k] / a**3 * _EYE
            + c / a**3 * (np.outer(ek, theta) + np.outer(theta, ek))
            - 3.0 * c * theta[k] / a**5 * np.outer(theta, theta)
        )
    return new, D, dD
