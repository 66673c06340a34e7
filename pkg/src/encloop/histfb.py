"""History-feedback realization of linear time-invariant controllers.

A controller z+ = Az + By + Er, u = Cz + Dy + Fr with observable (A, C)
is rewritten as a static gain over a window of past references, outputs
and inputs: u_t = K d_t with
d_t = [r_{t-L}..r_t, y_{t-L}..y_t, u_{t-L}..u_{t-1}].  The controller
state is eliminated through the Moore-Penrose inverse of the stacked
observability matrix V_L, which keeps the construction well-conditioned
even for large state dimensions.

The per-slot block split pairs queue slot i (data of age L-i) with gain
block i, so K_{r,0} multiplies the oldest reference in the window.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, TransformError

_SVD_RCOND = 1e-10


def _rank(mat):
    if mat.size == 0:
        return 0
    s = np.linalg.svd(mat, compute_uv=False)
    return int(np.sum(s > _SVD_RCOND * s[0]))


@dataclass(frozen=True)
class StateSpaceController:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        for name in "ABCDEF":
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        p, q, l, m = self.p, self.q, self.l, self.m
        shapes = {
            "A": (p, p), "B": (p, l), "C": (m, p), "D": (m, l), "E": (p, q), "F": (m, q),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if p == 0 and name in ("A", "B", "C", "E"):
                continue
            if got != want:
                raise ParameterError(f"controller matrix {name} has shape {got}, want {want}")
        if p > 0:
            blocks = []
            mat = self.C
            for _ in range(p):
                blocks.append(mat)
                mat = mat @ self.A
            if _rank(np.vstack(blocks)) < p:
                raise ParameterError(
                    "(A, C) is not observable; reduce to a minimal realization first"
                )

    @property
    def p(self):
        return 0 if self.A.size == 0 else self.A.shape[0]

    @property
    def q(self):
        return self.F.shape[1]

    @property
    def l(self):
        return self.D.shape[1]

    @property
    def m(self):
        return self.D.shape[0]


@dataclass(frozen=True)
class Plant:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        for name in "ABC":
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        n = self.n
        if self.A.shape != (n, n) or self.B.shape[0] != n or self.C.shape[1] != n:
            raise ParameterError("plant matrix shapes are inconsistent")
        ctrb = np.hstack([np.linalg.matrix_power(self.A, k) @ self.B for k in range(n)])
        obsv = np.vstack([self.C @ np.linalg.matrix_power(self.A, k) for k in range(n)])
        if _rank(ctrb) < n:
            warnings.warn("(A_p, B_p) is not controllable", stacklevel=2)
        if _rank(obsv) < n:
            warnings.warn("(A_p, C_p) is not observable", stacklevel=2)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def l(self):
        return self.C.shape[0]


@dataclass(frozen=True)
class HistoryStack:
    V: np.ndarray  # Lm x p
    R: np.ndarray  # p x Ll
    S: np.ndarray  # p x Lq
    H: np.ndarray  # Lm x Ll, block lower triangular, D on the diagonal
    J: np.ndarray  # Lm x Lq, same with F
    length: int


def build_stacks(ctrl, length):
    """Stacked window matrices for data length L >= 1."""
    if length < 1:
        raise ParameterError("data length must be >= 1")
    A, B, C, D, E, F = ctrl.A, ctrl.B, ctrl.C, ctrl.D, ctrl.E, ctrl.F
    p, q, l, m = ctrl.p, ctrl.q, ctrl.l, ctrl.m
    L = length
    powers = [np.eye(p)]
    for _ in range(L):
        powers.append(powers[-1] @ A)
    V = np.vstack([C @ powers[k] for k in range(L)])
    R = np.hstack([powers[L - 1 - k] @ B for k in range(L)])
    S = np.hstack([powers[L - 1 - k] @ E for k in range(L)])
    H = np.zeros((L * m, L * l))
    J = np.zeros((L * m, L * q))
    for i in range(L):
        H[i * m : (i + 1) * m, i * l : (i + 1) * l] = D
        J[i * m : (i + 1) * m, i * q : (i + 1) * q] = F
        for j in range(i):
            H[i * m : (i + 1) * m, j * l : (j + 1) * l] = C @ powers[i - j - 1] @ B
            J[i * m : (i + 1) * m, j * q : (j + 1) * q] = C @ powers[i - j - 1] @ E
    return HistoryStack(V=V, R=R, S=S, H=H, J=J, length=L)


@dataclass(frozen=True)
class HistoryGain:
    K: np.ndarray
    length: int
    dims: tuple  # (q, l, m)

    @property
    def width(self):
        q, l, m = self.dims
        return (self.length + 1) * (q + l) + self.length * m

    @property
    def h(self):
        return sum(self.dims)

    def r_block(self, i):
        q = self.dims[0]
        return self.K[:, q * i : q * (i + 1)]

    def y_block(self, i):
        q, l, _ = self.dims
        off = q * (self.length + 1)
        return self.K[:, off + l * i : off + l * (i + 1)]

    def u_block(self, i):
        q, l, m = self.dims
        if i >= self.length:
            raise ParameterError("u history has only L blocks")
        off = (q + l) * (self.length + 1)
        return self.K[:, off + m * i : off + m * (i + 1)]

    def hat_block(self, i):
        """Gain block paired with queue slot i (data of age L - i)."""
        q, l, m = self.dims
        if i < self.length:
            ub = self.u_block(i)
        else:
            ub = np.zeros((self.K.shape[0], m))
        return np.hstack([self.r_block(i), self.y_block(i), ub])

    def blocks(self):
        return [self.hat_block(i) for i in range(self.length + 1)]

    def reassemble(self):
        """Rebuild K from its r/y/u slices (exactness check helper)."""
        L = self.length
        r = np.hstack([self.r_block(i) for i in range(L + 1)])
        y = np.hstack([self.y_block(i) for i in range(L + 1)])
        u = np.hstack([self.u_block(i) for i in range(L)]) if L else np.zeros((self.K.shape[0], 0))
        return np.hstack([r, y, u])

    def apply(self, d):
        return self.K @ np.asarray(d, dtype=float)


def transform(ctrl, length=None):
    """Realize the controller as u_t = K d_t over an L-step data window.

    L defaults to p, the smallest admissible data length.  Requires
    L >= p and rank(V_L) = p — guaranteed for observable (A, C).
    """
    p, q, l, m = ctrl.p, ctrl.q, ctrl.l, ctrl.m
    L = p if length is None else int(length)
    if p == 0:
        # memoryless controller: only the current r/y blocks are nonzero
        L = max(L, 0)
        K = np.zeros((m, (L + 1) * (q + l) + L * m))
        K[:, L * q : (L + 1) * q] = ctrl.F
        K[:, (L + 1) * q + L * l : (L + 1) * (q + l)] = ctrl.D
        return HistoryGain(K=K, length=L, dims=(q, l, m))
    if L < p:
        raise TransformError(f"data length L={L} below controller order p={p}")
    st = build_stacks(ctrl, L)
    if _rank(st.V) < p:
        raise TransformError(f"V_L rank deficient at L={L}; cannot eliminate the state")
    v_pinv = np.linalg.pinv(st.V, rcond=_SVD_RCOND)
    resid = np.linalg.norm(v_pinv @ st.V - np.eye(p))
    if resid > 1e-9:
        raise TransformError(f"pseudoinverse check failed: ||V+V - I|| = {resid:.2e}")
    a_pow = np.linalg.matrix_power(ctrl.A, L)
    C = ctrl.C
    K = np.hstack(
        [
            C @ (st.S - a_pow @ v_pinv @ st.J),
            ctrl.F,
            C @ (st.R - a_pow @ v_pinv @ st.H),
            ctrl.D,
            C @ a_pow @ v_pinv,
        ]
    )
    return HistoryGain(K=K, length=L, dims=(q, l, m))


@dataclass(frozen=True)
class LiftedPlant:
    A: np.ndarray
    B: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    E: np.ndarray
    F: np.ndarray
    length: int
    dims: tuple  # (q, n, l, m)

    @property
    def state_dim(self):
        q, n, _, m = self.dims
        L = self.length
        return (L + 1) * q + (L + 1) * n + L * m

    def initial_state(self, x0):
        q, n, _, m = self.dims
        L = self.length
        x = np.zeros(self.state_dim)
        x[(L + 1) * q + L * n : (L + 1) * q + (L + 1) * n] = x0
        return x


def lift_plant(plant, length, q):
    """Augment the plant so its output is the whole data window d_t.

    State = [r_{t-L}..r_{t-1}, 0_q, x_{t-L}..x_t, u_{t-L}..u_{t-1}];
    d_t = C1 x + F r_t and y_t = C2 x.
    """
    L = int(length)
    if L < 1:
        raise ParameterError("lift needs L >= 1")
    n, m, l = plant.n, plant.m, plant.l
    a1 = np.zeros(((L + 1) * q, (L + 1) * q))
    a1[: (L - 1) * q, q : L * q] = np.eye((L - 1) * q)
    a2 = np.zeros(((L + 1) * n, (L + 1) * n))
    a2[: L * n, n:] = np.eye(L * n)
    a2[L * n :, L * n :] = plant.A
    a3 = np.zeros((L * m, L * m))
    a3[: (L - 1) * m, m:] = np.eye((L - 1) * m)
    dim = (L + 1) * q + (L + 1) * n + L * m
    A = np.zeros((dim, dim))
    o1, o2 = (L + 1) * q, (L + 1) * q + (L + 1) * n
    A[:o1, :o1] = a1
    A[o1:o2, o1:o2] = a2
    A[o2:, o2:] = a3
    B = np.zeros((dim, m))
    B[o2 - n : o2] = plant.B
    if L >= 1:
        B[dim - m :] = np.eye(m)
    C1 = np.zeros(((L + 1) * (q + l) + L * m, dim))
    C1[:o1, :o1] = np.eye(o1)
    C1[o1 : o1 + (L + 1) * l, o1:o2] = np.kron(np.eye(L + 1), plant.C)
    C1[o1 + (L + 1) * l :, o2:] = np.eye(L * m)
    C2 = np.zeros((l, dim))
    C2[:, o2 - n : o2] = plant.C
    E = np.zeros((dim, q))
    E[(L - 1) * q : L * q] = np.eye(q)
    F = np.zeros(((L + 1) * (q + l) + L * m, q))
    F[L * q : (L + 1) * q] = np.eye(q)
    return LiftedPlant(A=A, B=B, C1=C1, C2=C2, E=E, F=F, length=L, dims=(q, n, l, m))


class _HistoryWindow:
    """Zero-seeded rolling window assembling d_t = [r.., y.., u..]."""

    def __init__(self, length, q, l, m):
        self.L = length
        self.r = [np.zeros(q) for _ in range(length)]
        self.y = [np.zeros(l) for _ in range(length)]
        self.u = [np.zeros(m) for _ in range(length)]

    def data_vector(self, r_t, y_t):
        return np.concatenate(self.r + [r_t] + self.y + [y_t] + self.u)

    def push(self, r_t, y_t, u_t):
        if self.L:
            self.r = self.r[1:] + [np.asarray(r_t, dtype=float)]
            self.y = self.y[1:] + [np.asarray(y_t, dtype=float)]
            self.u = self.u[1:] + [np.asarray(u_t, dtype=float)]


def simulate_plain(plant, controller, refs, steps, x0=None, process_noise=None,
                   measurement_noise=None):
    """Closed-loop simulation with either controller representation.

    controller: StateSpaceController or HistoryGain.  Histories (and the
    state-space controller state) start at zero.  Deterministic given the
    noise arrays.  Returns dict with x, y, u and, for the gain form, d.
    """
    refs = np.asarray(refs, dtype=float)
    n, m, l = plant.n, plant.m, plant.l
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    w = np.zeros((steps, n)) if process_noise is None else np.asarray(process_noise)
    v = np.zeros((steps, l)) if measurement_noise is None else np.asarray(measurement_noise)
    xs = np.empty((steps, n))
    ys = np.empty((steps, l))
    us = np.empty((steps, m))
    use_gain = isinstance(controller, HistoryGain)
    if use_gain:
        q, _, _ = controller.dims
        window = _HistoryWindow(controller.length, q, l, m)
        ds = np.empty((steps, controller.width))
    else:
        z = np.zeros(controller.p)
    for t in range(steps):
        r_t = refs[t]
        y_t = plant.C @ x + v[t]
        if use_gain:
            d_t = window.data_vector(r_t, y_t)
            u_t = controller.apply(d_t)
            window.push(r_t, y_t, u_t)
            ds[t] = d_t
        else:
            u_t = (controller.C @ z if controller.p else 0.0) + controller.D @ y_t + controller.F @ r_t
            if controller.p:
                z = controller.A @ z + controller.B @ y_t + controller.E @ r_t
        xs[t] = x
        ys[t] = y_t
        us[t] = u_t
        x = plant.A @ x + plant.B @ u_t + w[t]
    out = {"x": xs, "y": ys, "u": us}
    if use_gain:
        out["d"] = ds
    return out
