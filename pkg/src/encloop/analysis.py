"""Quantization-effect analysis for the encrypted loop.

Everything here works on the lifted plant: A_cl = A + B K C1 is the
closed loop under the history-feedback gain, quantization of the gain
(step delta_K) and of the data (step delta_d) perturb it, and the three
computations below bound the damage: worst-case quantization norms, the
largest delta_K that provably keeps the loop stable (via a discrete
Lyapunov solve), and a worst-case output-error bound between the exact
and quantized loops.

The delta_K threshold is reported in two Lyapunov orientations.  The
headline value uses P solving A P A' - P + Q = 0 (the convention behind
the reference threshold for the bundled tank design); `delta_k_max_alt` uses
A' P A - P + Q = 0.  Both are valid sufficient thresholds; the headline
one is the smaller (more conservative) of the two here.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from .encoding import quantize
from .errors import ParameterError, StabilityError

_TWO_NORM = lambda mat: float(np.linalg.norm(mat, 2))


def quantization_bounds(length, dims, delta_d, delta_k):
    """Worst-case 2-norm errors (eta_d, eta_k) of quantized data and gain."""
    q, l, m = dims
    if min(q, l, m) < 1 or length < 0 or delta_d <= 0 or delta_k <= 0:
        raise ParameterError("dimensions and sensitivities must be positive")
    L = length
    eta_d = math.sqrt((L + 1) * (q + l) + L * m) * delta_d / 2
    eta_k = math.sqrt((L + 1) * (q + l) * m + L * m * m) * delta_k / 2
    return eta_d, eta_k


@dataclass(frozen=True)
class QuantizedGain:
    K: np.ndarray
    K_bar: np.ndarray
    K_tilde: np.ndarray
    delta_k: float
    eta_k: float

    @property
    def tilde_norm(self):
        return _TWO_NORM(self.K_tilde)


def quantize_gain(K, delta_k, length, dims):
    K = np.asarray(K, dtype=float)
    k_bar = quantize(K, delta_k)
    _, eta_k = quantization_bounds(length, dims, 1.0, delta_k)
    qg = QuantizedGain(K=K, K_bar=k_bar, K_tilde=k_bar - K, delta_k=delta_k, eta_k=eta_k)
    if qg.tilde_norm > eta_k + 1e-12:
        raise StabilityError("quantization error exceeded its analytic bound")
    return qg


def spectral_radius(mat):
    return float(max(abs(np.linalg.eigvals(mat))))


def solve_dlyap(a_cl, q_mat):
    """P > 0 with a_cl' P a_cl - P + Q = 0; requires rho(a_cl) < 1."""
    a_cl = np.asarray(a_cl, dtype=float)
    q_mat = np.asarray(q_mat, dtype=float)
    rho = spectral_radius(a_cl)
    if rho >= 1:
        raise StabilityError(f"closed loop unstable: spectral radius {rho:.6f}")
    p = solve_discrete_lyapunov(a_cl.T, q_mat)
    p = (p + p.T) / 2
    resid = np.linalg.norm(a_cl.T @ p @ a_cl - p + q_mat)
    if resid > 1e-8:
        raise StabilityError(f"Lyapunov residual too large: {resid:.2e}")
    if np.linalg.eigvalsh(p)[0] <= 0:
        raise StabilityError("Lyapunov solution is not positive definite")
    return p


@dataclass(frozen=True)
class StabilityCertificate:
    P: np.ndarray
    q_lyap: np.ndarray
    beta1: float
    beta2: float
    beta3: float
    lambda_min_q: float
    delta_k_max: float
    delta_k_max_alt: float
    rho: float

    def admits(self, delta_k):
        return delta_k < self.delta_k_max


def closed_loop(lifted, gain_matrix):
    return lifted.A + lifted.B @ np.asarray(gain_matrix, dtype=float) @ lifted.C1


def delta_k_bound(lifted, K, q_lyap=None):
    """Largest provably-safe gain sensitivity for the lifted closed loop.

    The threshold scales as beta1 * (-beta2 + sqrt(beta3)) and is
    invariant to scaling Q.  Requires the nominal loop to be stable.
    """
    a_cl = closed_loop(lifted, K)
    rho = spectral_radius(a_cl)
    if rho >= 1:
        raise StabilityError(f"nominal loop unstable (rho = {rho:.6f})")
    dim = a_cl.shape[0]
    q_mat = np.eye(dim) if q_lyap is None else np.asarray(q_lyap, dtype=float)
    lam_min = float(np.linalg.eigvalsh(q_mat)[0])
    if lam_min <= 0:
        raise ParameterError("Q must be positive definite")
    q_dims, _, l_dim, m_dim = lifted.dims
    L = lifted.length
    coeff = math.sqrt((L + 1) * (q_dims + l_dim) * m_dim + L * m_dim * m_dim)

    def threshold(p_mat):
        bpb = _TWO_NORM(lifted.B.T @ p_mat @ lifted.B)
        b1 = 2.0 / (coeff * bpb * _TWO_NORM(lifted.C1))
        b2 = _TWO_NORM(a_cl.T @ p_mat @ lifted.B)
        b3 = b2 * b2 + lam_min * bpb
        return b1, b2, b3, b1 * (-b2 + math.sqrt(b3))

    p_pub = solve_dlyap(a_cl.T, q_mat)  # A P A' - P + Q = 0
    b1, b2, b3, dk = threshold(p_pub)
    p_alt = solve_dlyap(a_cl, q_mat)  # A' P A - P + Q = 0
    dk_alt = threshold(p_alt)[3]
    return StabilityCertificate(
        P=p_pub,
        q_lyap=q_mat,
        beta1=b1,
        beta2=b2,
        beta3=b3,
        lambda_min_q=lam_min,
        delta_k_max=dk,
        delta_k_max_alt=dk_alt,
        rho=rho,
    )


# ---------------------------------------------------------------------------
# worst-case output error between the exact and quantized loops

@dataclass(frozen=True)
class ErrorBoundReport:
    gamma: float
    c: float
    tau: int
    power_horizon: int  # M: norms of A_cl^k certified below gamma^k beyond here
    b_r: float
    theta1: float
    theta2: float
    theta3: float
    bound: float
    rho_nominal: float
    rho_quantized: float


def _scaled_power_stats(a1, a2, gamma, tau, kmax, dense):
    """sup_k ||(A/gamma)^k|| for both matrices, and the index M past which
    both norms stay below 1 for 3*tau consecutive steps.

    Dense exact norms over the transient prefix, then a geometric grid
    (powers stay bounded; the raw curves underflow past k ~ 35k)."""
    b1 = a1 / gamma
    b2 = a2 / gamma
    x1 = np.eye(a1.shape[0])
    x2 = x1.copy()
    c_sup = 1.0
    need = 3 * tau
    consec = 0
    m_found = None
    k = 0
    while k < min(dense, kmax):
        x1 = x1 @ b1
        x2 = x2 @ b2
        k += 1
        v1 = _TWO_NORM(x1)
        v2 = _TWO_NORM(x2)
        c_sup = max(c_sup, v1, v2)
        if max(v1, v2) < 1.0:
            consec += 1
            if consec >= need:
                m_found = k - need + 1
                break
        else:
            consec = 0
    while m_found is None and k < kmax:
        step = max(1, k // 24)
        x1 = x1 @ np.linalg.matrix_power(b1, step)
        x2 = x2 @ np.linalg.matrix_power(b2, step)
        k += step
        v1 = _TWO_NORM(x1)
        v2 = _TWO_NORM(x2)
        c_sup = max(c_sup, v1, v2)
        if max(v1, v2) < 1.0:
            y1, y2 = x1, x2
            ok = True
            for _ in range(need):
                y1 = y1 @ b1
                y2 = y2 @ b2
                if max(_TWO_NORM(y1), _TWO_NORM(y2)) >= 1.0:
                    ok = False
                    break
            if ok:
                m_found = k
    if m_found is None:
        raise StabilityError(
            f"no power horizon below k={kmax}: gamma too close to the spectral radius"
        )
    return c_sup, m_found


def error_bound(lifted, K, K_bar, x0, b_r, delta_d, gamma=None, kmax=10_000_000):
    """Upper bound on sup_t ||y_t - y'_t|| between exact and quantized loops.

    theta terms are evaluated with factored operator norms (products of
    the factors' 2-norms); composing the matrices before taking norms
    would only tighten the bound.
    """
    K = np.asarray(K, dtype=float)
    K_bar = np.asarray(K_bar, dtype=float)
    a_nom = closed_loop(lifted, K)
    a_qtz = closed_loop(lifted, K_bar)
    rho_n = spectral_radius(a_nom)
    rho_q = spectral_radius(a_qtz)
    rho = max(rho_n, rho_q)
    if rho >= 1:
        raise StabilityError(f"a closed loop is unstable (rho = {rho:.6f})")
    if gamma is None:
        gamma = (1.0 + rho) / 2.0
    if not rho < gamma < 1.0:
        raise ParameterError(f"gamma must lie in ({rho:.6f}, 1), got {gamma}")
    tau = int(math.floor(-1.0 / math.log(gamma) + 0.5))
    c_sup, horizon = _scaled_power_stats(a_nom, a_qtz, gamma, max(tau, 1), kmax, dense=4096)

    q_dim, _, l_dim, m_dim = lifted.dims
    if delta_d:
        eta_d, _ = quantization_bounds(lifted.length, (q_dim, l_dim, m_dim), delta_d, 1.0)
    else:
        eta_d = 0.0
    k_tilde = K_bar - K
    front = _TWO_NORM(lifted.C2 @ lifted.B) * _TWO_NORM(k_tilde) * _TWO_NORM(lifted.C1)
    theta1 = front * float(np.linalg.norm(np.asarray(x0, dtype=float)))
    theta2 = front * _TWO_NORM(lifted.E + lifted.B @ K @ lifted.F) * b_r
    theta3 = _TWO_NORM(lifted.C2 @ lifted.B) * (
        _TWO_NORM(k_tilde) * _TWO_NORM(lifted.F) * b_r + _TWO_NORM(K_bar) * eta_d
    )
    bound = (
        theta1 * c_sup**2 * tau * gamma ** (tau - 1)
        + theta2 * c_sup**2 / (1 - gamma) ** 2
        + theta3 * c_sup / (1 - gamma)
    )
    return ErrorBoundReport(
        gamma=float(gamma),
        c=c_sup,
        tau=tau,
        power_horizon=horizon,
        b_r=float(b_r),
        theta1=theta1,
        theta2=theta2,
        theta3=theta3,
        bound=float(bound),
        rho_nominal=rho_n,
        rho_quantized=rho_q,
    )


def simulate_lifted(lifted, gain_matrix, refs, steps, x0, delta_d=None):
    """Output trajectory of the lifted loop under u = G d (optionally with
    the data vector quantized at delta_d before the gain)."""
    refs = np.atleast_2d(np.asarray(refs, dtype=float))
    gain_matrix = np.asarray(gain_matrix, dtype=float)
    x = lifted.initial_state(np.asarray(x0, dtype=float))
    ys = np.empty((steps, lifted.C2.shape[0]))
    for t in range(steps):
        r_t = refs[min(t, len(refs) - 1)]
        d = lifted.C1 @ x + lifted.F @ r_t
        if delta_d is not None:
            d = quantize(d, delta_d)
        u = gain_matrix @ d
        ys[t] = lifted.C2 @ x
        x = lifted.A @ x + lifted.B @ u + lifted.E @ r_t
    return ys


def memory_report(p, n, log2_q):
    """Ciphertext memory of the encrypted controller: 4(p+1) N log2(Q) bits.

    Covers the L+1 = p+1 gain ciphertexts plus the queue, each ciphertext
    being two degree-N polynomials mod Q.  Key material is itemized
    separately by the protocol layer.
    """
    if p < 0 or n < 1 or log2_q < 1:
        raise ParameterError("arguments must be positive")
    bits = 4 * (p + 1) * n * log2_q
    return {
        "bits": bits,
        "bytes": bits // 8,
        "kib": bits / 8 / 1024,
    }
