"""Inner loops of latent iLQR.

Written in the numpy subset numba compiles, so the same source serves as the
jitted path and (with ``RCE_NUMBA=0``) the pure-numpy path. The linearization
head is fixed to two ReLU hidden layers and a linear output, which is the
shape :mod:`rce.model` builds.
"""

import numpy as np

from ._accel import njit


@njit
def softplus(v):
    return np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))


@njit
def lin_head(W0, b0, W1, b1, W2, b2, z, u):
    """``(A, B, c)`` at linearization point ``(z, u)``; ``A = (I + w r^T)^{-1}``."""
    nz = z.shape[0]
    nu = u.shape[0]
    x = np.concatenate((z, u))
    h = np.maximum(np.dot(x, W0) + b0, 0.0)
    h = np.maximum(np.dot(h, W1) + b1, 0.0)
    o = np.dot(h, W2) + b2
    w = softplus(o[:nz])
    r = softplus(o[nz:2 * nz])
    B = o[2 * nz:2 * nz + nz * nu].copy().reshape((nz, nu))
    c = o[2 * nz + nz * nu:3 * nz + nz * nu].copy()
    A = np.eye(nz) - np.outer(w, r) / (1.0 + np.dot(r, w))
    return A, B, c


@njit
def rollout(W0, b0, W1, b1, W2, b2, z0, U):
    """Apply the model to ``U`` from ``z0``; also return each step's ``(A, B, c)``."""
    H = U.shape[0]
    nz = z0.shape[0]
    nu = U.shape[1]
    Z = np.empty((H + 1, nz))
    As = np.empty((H, nz, nz))
    Bs = np.empty((H, nz, nu))
    cs = np.empty((H, nz))
    Z[0] = z0
    for t in range(H):
        A, B, c = lin_head(W0, b0, W1, b1, W2, b2, Z[t], U[t])
        As[t] = A
        Bs[t] = B
        cs[t] = c
        Z[t + 1] = np.dot(A, Z[t]) + np.dot(B, U[t]) + c
    return Z, As, Bs, cs


@njit
def trajectory_cost(Z, U, goal, Q, R):
    total = 0.0
    for t in range(Z.shape[0]):
        d = Z[t] - goal
        total += np.dot(d, np.dot(Q, d))
    for t in range(U.shape[0]):
        total += np.dot(U[t], np.dot(R, U[t]))
    return total


@njit
def is_pd(S):
    """Cholesky attempt; True when ``S`` is symmetric positive definite."""
    n = S.shape[0]
    L = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            acc = S[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            if i == j:
                if acc <= 0.0:
                    return False
                L[i, i] = np.sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
    return True


@njit
def augmented_state_cost(zbar, goal, Q):
    """Cost of ``[y; 1]`` for ``(zbar + y - goal)^T Q (zbar + y - goal)``."""
    nz = zbar.shape[0]
    d = zbar - goal
    Qd = np.dot(Q, d)
    C = np.zeros((nz + 1, nz + 1))
    C[:nz, :nz] = Q
    C[:nz, nz] = Qd
    C[nz, :nz] = Qd
    C[nz, nz] = np.dot(d, Qd)
    return C


@njit
def riccati(As, Bs, offsets, Zbar, Ubar, goal, Q, R, mu0, mu_max):
    """Backward pass on the offset-augmented deviation system.

    Deviation ``y_t = z_t - zbar_t``, ``v_t = u_t - ubar_t`` evolves as
    ``[y'; 1] = [[A, off], [0, 1]] [y; 1] + [[B], [0]] v``. Returns gains
    ``K_t`` (``v_t = K_t [y_t; 1]``), cost-to-go matrices ``P_t`` and a status
    (0 ok, 1 control Hessian not PD even at ``mu_max``). ``P_0[-1, -1]`` is the
    predicted optimal cost of the linearized problem from ``y_0 = 0``.
    """
    H = As.shape[0]
    nz = Zbar.shape[1]
    nu = Ubar.shape[1]
    n = nz + 1
    K = np.zeros((H, nu, n))
    P = np.zeros((H + 1, n, n))
    P[H] = augmented_state_cost(Zbar[H], goal, Q)
    Ap = np.zeros((n, n))
    Bp = np.zeros((n, nu))
    for t in range(H - 1, -1, -1):
        Ap[:, :] = 0.0
        Ap[:nz, :nz] = As[t]
        Ap[:nz, nz] = offsets[t]
        Ap[nz, nz] = 1.0
        Bp[:nz, :] = Bs[t]
        Bp[nz, :] = 0.0
        Pn = P[t + 1]
        Cxx = augmented_state_cost(Zbar[t], goal, Q)
        Ru = np.dot(R, Ubar[t])
        Cxx[nz, nz] += np.dot(Ubar[t], Ru)
        S = np.zeros((nu, n))
        S[:, nz] = Ru
        PA = np.dot(Pn, Ap)
        Qxx = Cxx + np.dot(Ap.T, PA)
        Quu = R + np.dot(Bp.T, np.dot(Pn, Bp))
        Qux = S + np.dot(Bp.T, PA)
        Quu = 0.5 * (Quu + Quu.T)
        Qreg = Quu.copy()
        if not is_pd(Qreg):
            mu = mu0
            while True:
                Qreg = Quu + mu * np.eye(nu)
                if is_pd(Qreg):
                    break
                mu *= 10.0
                if mu > mu_max:
                    return K, P, 1
        Kt = -np.linalg.solve(Qreg, Qux)
        K[t] = Kt
        Pt = Qxx + np.dot(Kt.T, np.dot(Quu, Kt)) + np.dot(Kt.T, Qux) + np.dot(Qux.T, Kt)
        P[t] = 0.5 * (Pt + Pt.T)
    return K, P, 0


@njit
def policy_rollout(W0, b0, W1, b1, W2, b2, z0, Zbar, Ubar, K, alpha, clip):
    """Run ``u_t = clip(ubar_t + K_x y_t + alpha k_t)`` through the learned model."""
    H = Ubar.shape[0]
    nz = z0.shape[0]
    nu = Ubar.shape[1]
    Z = np.empty((H + 1, nz))
    U = np.empty((H, nu))
    Z[0] = z0
    for t in range(H):
        y = Z[t] - Zbar[t]
        Kx = K[t, :, :nz].copy()
        v = np.dot(Kx, y) + alpha * K[t, :, nz]
        u = np.minimum(np.maximum(Ubar[t] + v, -clip), clip)
        U[t] = u
        A, B, c = lin_head(W0, b0, W1, b1, W2, b2, Z[t], u)
        Z[t + 1] = np.dot(A, Z[t]) + np.dot(B, u) + c
    return Z, U
