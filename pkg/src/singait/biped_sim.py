"""Planar five-link biped: torso plus two (thigh, shin) legs with point feet.

The floating base is integrated in centre-of-mass coordinates
``z = [c_x, c_z, pitch, hip_L, knee_L, hip_R, knee_R]``; in these
coordinates the mass matrix is block diagonal, so the COM obeys
``M c'' = M g + F_contact`` exactly and the 5x5 shape block is solved by
Cholesky each substep.  Pelvis-based coordinates (``q``/``qdot``) are
derived views.

Angle conventions (rotations about +y, x forward, z up): pitch > 0 leans
the torso forward; a leg at absolute angle phi points along
``(-sin phi, -cos phi)``, so negative hip angles swing the thigh forward
and positive knee angles flex the shin backwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

JOINT_NAMES = ("hip_left", "knee_left", "hip_right", "knee_right")
OBS_DIM = 20
VEL_SCALE = 5.0

# layout of the flat parameter vector handed to the compiled kernels
(
    P_M_TORSO, P_M_THIGH, P_M_SHIN, P_I_TORSO, P_I_THIGH, P_I_SHIN,
    P_LC_TORSO, P_L_THIGH, P_LC_THIGH, P_L_SHIN, P_LC_SHIN, P_G,
    P_KC, P_CC, P_MU, P_BT, P_KLIM, P_DLIM, P_DT,
) = range(19)
P_KP, P_KD, P_TAU, P_QMIN, P_QMAX = 19, 23, 27, 31, 35
N_PARAMS = 39

# per-substep trace row: t, z[7], zd[7], contact[2], torques[4]
LOG_COLS = 1 + 7 + 7 + 2 + 4


class SimulationBlowup(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite simulator state at substep {step}")
        self.step = step


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class BipedModel:
    m_torso: float = 10.0
    m_thigh: float = 2.5
    m_shin: float = 1.5
    torso_length: float = 0.3
    torso_com: float = 0.1
    thigh_length: float = 0.5
    thigh_com: float = 0.2
    shin_length: float = 0.5
    shin_com: float = 0.2
    gravity: float = 9.81
    kp: tuple = (150.0, 150.0, 150.0, 150.0)
    kd: tuple = (6.0, 6.0, 6.0, 6.0)
    torque_limit: tuple = (150.0, 150.0, 150.0, 150.0)
    hip_range: tuple = (-1.5, 1.0)
    knee_range: tuple = (0.0, 2.5)
    limit_stiffness: float = 1000.0
    limit_damping: float = 10.0
    contact_stiffness: float = 1.0e5
    contact_damping: float = 1.0e3
    friction_mu: float = 1.0
    friction_damping: float = 2.0e4
    nominal_height: float = 0.95
    sim_dt: float = 1.0 / 2000.0
    policy_dt: float = 0.03

    def __post_init__(self):
        for name in ("m_torso", "m_thigh", "m_shin", "torso_length", "thigh_length", "shin_length"):
            if not getattr(self, name) > 0:
                raise ModelError(f"model.{name} must be positive")
        for name in ("kp", "kd", "torque_limit"):
            v = getattr(self, name)
            if len(v) != 4 or min(v) < 0:
                raise ModelError(f"model.{name} needs 4 non-negative entries")
        if abs(self.policy_dt / self.sim_dt - self.substeps) > 1e-9:
            raise ModelError("policy_dt must be a whole multiple of sim_dt")
        if not 0 < self.nominal_height < self.thigh_length + self.shin_length:
            raise ModelError("nominal_height must be below the full leg length")

    @property
    def substeps(self) -> int:
        return round(self.policy_dt / self.sim_dt)

    def _rod_inertia(self, m, length):
        return m * length * length / 12.0

    @property
    def total_mass(self) -> float:
        return self.m_torso + 2 * self.m_thigh + 2 * self.m_shin

    @property
    def joint_lower(self) -> np.ndarray:
        return np.array([self.hip_range[0], self.knee_range[0]] * 2)

    @property
    def joint_upper(self) -> np.ndarray:
        return np.array([self.hip_range[1], self.knee_range[1]] * 2)

    def param_vector(self) -> np.ndarray:
        p = np.zeros(N_PARAMS)
        p[P_M_TORSO], p[P_M_THIGH], p[P_M_SHIN] = self.m_torso, self.m_thigh, self.m_shin
        p[P_I_TORSO] = self._rod_inertia(self.m_torso, self.torso_length)
        p[P_I_THIGH] = self._rod_inertia(self.m_thigh, self.thigh_length)
        p[P_I_SHIN] = self._rod_inertia(self.m_shin, self.shin_length)
        p[P_LC_TORSO] = self.torso_com
        p[P_L_THIGH], p[P_LC_THIGH] = self.thigh_length, self.thigh_com
        p[P_L_SHIN], p[P_LC_SHIN] = self.shin_length, self.shin_com
        p[P_G] = self.gravity
        p[P_KC], p[P_CC] = self.contact_stiffness, self.contact_damping
        p[P_MU], p[P_BT] = self.friction_mu, self.friction_damping
        p[P_KLIM], p[P_DLIM] = self.limit_stiffness, self.limit_damping
        p[P_DT] = self.sim_dt
        p[P_KP:P_KP + 4] = self.kp
        p[P_KD:P_KD + 4] = self.kd
        p[P_TAU:P_TAU + 4] = self.torque_limit
        p[P_QMIN:P_QMIN + 4] = self.joint_lower
        p[P_QMAX:P_QMAX + 4] = self.joint_upper
        return p

    def nominal_pose(self) -> np.ndarray:
        """Joint angles of the upright stance with both feet under the hip."""
        lt, ls = self.thigh_length, self.shin_length
        # knee bent symmetrically forward so that hip height == nominal_height
        a = math.acos(self.nominal_height / (lt + ls)) if lt == ls else _solve_stance(lt, ls, self.nominal_height)
        b = _shin_angle(lt, ls, a)
        return np.array([-a, a + b, -a, a + b])


def _shin_angle(lt, ls, a):
    # shin absolute angle that puts the foot straight below the hip
    return math.asin(min(1.0, lt * math.sin(a) / ls))


def _solve_stance(lt, ls, height):
    lo, hi = 0.0, math.pi / 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        b = _shin_angle(lt, ls, mid)
        if lt * math.cos(mid) + ls * math.cos(b) > height:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ----------------------------------------------------------------------------
# compiled kernels
# ----------------------------------------------------------------------------


@njit(cache=True)
def _shape_kinematics(s, sd, p, pos, jac, acc):
    """Positions, shape Jacobians and velocity-product accelerations.

    Rows 0..4 are link COMs (torso, thigh L, shin L, thigh R, shin R),
    rows 5..6 the feet; everything is relative to the hip joint.
    """
    th = s[0]
    thd = sd[0]
    lct = p[P_LC_TORSO]
    lt, lct_h = p[P_L_THIGH], p[P_LC_THIGH]
    ls, lcs = p[P_L_SHIN], p[P_LC_SHIN]
    for i in range(7):
        for k in range(2):
            pos[i, k] = 0.0
            acc[i, k] = 0.0
            for j in range(5):
                jac[i, k, j] = 0.0
    st, ct = math.sin(th), math.cos(th)
    pos[0, 0] = lct * st
    pos[0, 1] = lct * ct
    jac[0, 0, 0] = lct * ct
    jac[0, 1, 0] = -lct * st
    acc[0, 0] = -pos[0, 0] * thd * thd
    acc[0, 1] = -pos[0, 1] * thd * thd
    for leg in range(2):
        ih = 1 + 2 * leg
        ik = 2 + 2 * leg
        rt = 1 + 2 * leg
        rs = 2 + 2 * leg
        rf = 5 + leg
        pt = th + s[ih]
        ps = pt + s[ik]
        ptd = thd + sd[ih]
        psd = ptd + sd[ik]
        dtx, dtz = -math.sin(pt), -math.cos(pt)
        dsx, dsz = -math.sin(ps), -math.cos(ps)
        # derivative of (-sin, -cos) is (-cos, sin)
        ddtx, ddtz = dtz, -dtx
        ddsx, ddsz = dsz, -dsx
        pos[rt, 0] = lct_h * dtx
        pos[rt, 1] = lct_h * dtz
        for j in (0, ih):
            jac[rt, 0, j] = lct_h * ddtx
            jac[rt, 1, j] = lct_h * ddtz
        acc[rt, 0] = -lct_h * dtx * ptd * ptd
        acc[rt, 1] = -lct_h * dtz * ptd * ptd
        for row, lcs_ in ((rs, lcs), (rf, ls)):
            pos[row, 0] = lt * dtx + lcs_ * dsx
            pos[row, 1] = lt * dtz + lcs_ * dsz
            for j in (0, ih):
                jac[row, 0, j] = lt * ddtx + lcs_ * ddsx
                jac[row, 1, j] = lt * ddtz + lcs_ * ddsz
            jac[row, 0, ik] = lcs_ * ddsx
            jac[row, 1, ik] = lcs_ * ddsz
            acc[row, 0] = -lt * dtx * ptd * ptd - lcs_ * dsx * psd * psd
            acc[row, 1] = -lt * dtz * ptd * ptd - lcs_ * dsz * psd * psd


@njit(cache=True)
def _masses(p, m):
    m[0] = p[P_M_TORSO]
    m[1] = p[P_M_THIGH]
    m[2] = p[P_M_SHIN]
    m[3] = p[P_M_THIGH]
    m[4] = p[P_M_SHIN]


@njit(cache=True)
def _com_offset(s, sd, p, pos, jac, acc, m, pbar, jbar, abar):
    """Mass-weighted mean of link positions/Jacobians/accelerations (hip frame)."""
    _shape_kinematics(s, sd, p, pos, jac, acc)
    _masses(p, m)
    mt = m[0] + m[1] + m[2] + m[3] + m[4]
    for k in range(2):
        pbar[k] = 0.0
        abar[k] = 0.0
        for j in range(5):
            jbar[k, j] = 0.0
        for i in range(5):
            pbar[k] += m[i] * pos[i, k]
            abar[k] += m[i] * acc[i, k]
            for j in range(5):
                jbar[k, j] += m[i] * jac[i, k, j]
        pbar[k] /= mt
        abar[k] /= mt
        for j in range(5):
            jbar[k, j] /= mt
    return mt


@njit(cache=True)
def _substep(z, zd, tgt, p, tau_out, contact_out, foot_out):
    pos = np.empty((7, 2))
    jac = np.empty((7, 2, 5))
    acc = np.empty((7, 2))
    m = np.empty(5)
    pbar = np.empty(2)
    jbar = np.empty((2, 5))
    abar = np.empty(2)
    s = z[2:7]
    sd = zd[2:7]
    mt = _com_offset(s, sd, p, pos, jac, acc, m, pbar, jbar, abar)

    # angular Jacobian rows: which shape coordinates add to each link's angle
    ang = np.zeros((5, 5))
    ang[0, 0] = 1.0
    ang[1, 0] = 1.0
    ang[1, 1] = 1.0
    ang[2, 0] = 1.0
    ang[2, 1] = 1.0
    ang[2, 2] = 1.0
    ang[3, 0] = 1.0
    ang[3, 3] = 1.0
    ang[4, 0] = 1.0
    ang[4, 3] = 1.0
    ang[4, 4] = 1.0
    inertia = np.empty(5)
    inertia[0] = p[P_I_TORSO]
    inertia[1] = p[P_I_THIGH]
    inertia[2] = p[P_I_SHIN]
    inertia[3] = p[P_I_THIGH]
    inertia[4] = p[P_I_SHIN]

    M = np.zeros((5, 5))
    rhs = np.zeros(5)
    for i in range(5):
        for k in range(2):
            ar = acc[i, k] - abar[k]
            for a in range(5):
                ja = jac[i, k, a] - jbar[k, a]
                rhs[a] -= m[i] * ja * ar
                for b in range(a, 5):
                    M[a, b] += m[i] * ja * (jac[i, k, b] - jbar[k, b])
        for a in range(5):
            if ang[i, a] != 0.0:
                for b in range(a, 5):
                    M[a, b] += inertia[i] * ang[i, b]
    for a in range(5):
        for b in range(a):
            M[a, b] = M[b, a]

    # joint torques: clamped PD plus joint-limit springs
    for j in range(4):
        q = s[1 + j]
        qd = sd[1 + j]
        t = p[P_KP + j] * (tgt[j] - q) - p[P_KD + j] * qd
        lim = p[P_TAU + j]
        if t > lim:
            t = lim
        elif t < -lim:
            t = -lim
        tau_out[j] = t
        if q < p[P_QMIN + j]:
            t += p[P_KLIM] * (p[P_QMIN + j] - q) - p[P_DLIM] * qd
        elif q > p[P_QMAX + j]:
            t += p[P_KLIM] * (p[P_QMAX + j] - q) - p[P_DLIM] * qd
        rhs[1 + j] += t

    # Cholesky factor of the 5x5 shape block
    L = np.zeros((5, 5))
    for a in range(5):
        for b in range(a + 1):
            v = M[a, b]
            for k in range(b):
                v -= L[a, k] * L[b, k]
            if a == b:
                if v <= 0.0:
                    v = np.nan
                L[a, a] = math.sqrt(v)
            else:
                L[a, b] = v / L[b, b]

    dt = p[P_DT]
    sdd = np.empty(5)
    _chol_solve(L, rhs, sdd)
    # velocities without contact
    vfree = np.empty(7)
    vfree[0] = zd[0]
    vfree[1] = zd[1] - dt * p[P_G]
    for j in range(5):
        vfree[2 + j] = zd[2 + j] + dt * sdd[j]

    # contact rows: (left x, left z, right x, right z); G holds the shape part
    # of each foot Jacobian, the COM part is the unit vector of its axis
    G = np.empty((4, 5))
    h = np.empty(2)
    vf = np.empty(4)
    for leg in range(2):
        row = 5 + leg
        h[leg] = z[1] + pos[row, 1] - pbar[1]
        foot_out[leg] = h[leg]
        contact_out[leg] = 0.0
        for k in range(2):
            r = 2 * leg + k
            v = vfree[k]
            for j in range(5):
                G[r, j] = jac[row, k, j] - jbar[k, j]
                v += G[r, j] * vfree[2 + j]
            vf[r] = v
    # Delassus matrix W = J M^-1 J^T
    MinvG = np.empty((4, 5))
    col = np.empty(5)
    for r in range(4):
        _chol_solve(L, G[r], col)
        for j in range(5):
            MinvG[r, j] = col[j]
    W = np.empty((4, 4))
    for r in range(4):
        for c in range(4):
            v = 1.0 / mt if (r % 2) == (c % 2) else 0.0
            for j in range(5):
                v += G[r, j] * MinvG[c, j]
            W[r, c] = v

    # linearly implicit spring-damper: forces act on the end-of-step velocity
    #   fn = -kc (h + dt vz+) - cc vz+,   ft = -bt vx+  (|ft| <= mu fn)
    kc, cc, bt, mu = p[P_KC], p[P_CC], p[P_BT], p[P_MU]
    # per-foot mode: 0 viscous friction, 1 sliding at the cone edge,
    # 2 frictionless, 3 inactive; modes only move forward so this terminates
    mode = np.zeros(2, dtype=np.int64)
    sgn = np.zeros(2)
    for leg in range(2):
        if h[leg] + dt * vf[2 * leg + 1] >= 0.0:
            mode[leg] = 3
    F = np.zeros(4)
    A = np.empty((4, 4))
    bvec = np.empty(4)
    dn = kc * dt + cc
    for _ in range(8):
        for r in range(4):
            for c in range(4):
                A[r, c] = 0.0
            bvec[r] = 0.0
        for leg in range(2):
            ix, iz = 2 * leg, 2 * leg + 1
            if mode[leg] == 3:
                A[ix, ix] = 1.0
                A[iz, iz] = 1.0
                continue
            for c in range(4):
                A[iz, c] = dn * dt * W[iz, c]
            A[iz, iz] += 1.0
            bvec[iz] = -kc * h[leg] - dn * vf[iz]
            if mode[leg] == 0:
                for c in range(4):
                    A[ix, c] = bt * dt * W[ix, c]
                A[ix, ix] += 1.0
                bvec[ix] = -bt * vf[ix]
            elif mode[leg] == 1:
                A[ix, ix] = 1.0
                A[ix, iz] = -sgn[leg] * mu
            else:
                A[ix, ix] = 1.0
        _gauss_solve(A, bvec, F)
        changed = False
        for leg in range(2):
            ix, iz = 2 * leg, 2 * leg + 1
            if mode[leg] == 0:
                if abs(F[ix]) > mu * max(F[iz], 0.0):
                    mode[leg] = 1
                    sgn[leg] = 1.0 if F[ix] > 0.0 else -1.0
                    changed = True
                elif F[iz] <= 0.0:
                    mode[leg] = 3
                    changed = True
            elif mode[leg] < 3 and F[iz] <= 0.0:
                mode[leg] += 1
                changed = True
        if not changed:
            break
    for leg in range(2):
        ix, iz = 2 * leg, 2 * leg + 1
        if mode[leg] == 3 or F[iz] <= 0.0:
            F[ix] = 0.0
            F[iz] = 0.0
            continue
        contact_out[leg] = 1.0
        cap = mu * F[iz]
        if F[ix] > cap:
            F[ix] = cap
        elif F[ix] < -cap:
            F[ix] = -cap

    zd[0] = vfree[0] + dt * (F[0] + F[2]) / mt
    zd[1] = vfree[1] + dt * (F[1] + F[3]) / mt
    for j in range(5):
        v = vfree[2 + j]
        for r in range(4):
            v += dt * MinvG[r, j] * F[r]
        zd[2 + j] = v
    for j in range(7):
        z[j] += dt * zd[j]
    if z[2] > math.pi:
        z[2] -= 2.0 * math.pi
    elif z[2] <= -math.pi:
        z[2] += 2.0 * math.pi


@njit(cache=True)
def _chol_solve(L, b, out):
    n = L.shape[0]
    y = np.empty(n)
    for a in range(n):
        v = b[a]
        for k in range(a):
            v -= L[a, k] * y[k]
        y[a] = v / L[a, a]
    for a in range(n - 1, -1, -1):
        v = y[a]
        for k in range(a + 1, n):
            v -= L[k, a] * out[k]
        out[a] = v / L[a, a]


@njit(cache=True)
def _gauss_solve(A, b, out):
    """Dense solve with partial pivoting (A and b are overwritten)."""
    n = A.shape[0]
    for c in range(n):
        piv = c
        for r in range(c + 1, n):
            if abs(A[r, c]) > abs(A[piv, c]):
                piv = r
        if piv != c:
            for k in range(n):
                A[c, k], A[piv, k] = A[piv, k], A[c, k]
            b[c], b[piv] = b[piv], b[c]
        for r in range(c + 1, n):
            f = A[r, c] / A[c, c]
            if f != 0.0:
                for k in range(c, n):
                    A[r, k] -= f * A[c, k]
                b[r] -= f * b[c]
    for r in range(n - 1, -1, -1):
        v = b[r]
        for k in range(r + 1, n):
            v -= A[r, k] * out[k]
        out[r] = v / A[r, r]


@njit(cache=True)
def _is_finite(z, zd):
    for j in range(7):
        if not (math.isfinite(z[j]) and math.isfinite(zd[j])):
            return False
    return True


@njit(cache=True)
def _run(z, zd, tgt, p, nsub, log, do_log, t0):
    """Advance ``nsub`` substeps in place; returns -1 or the failing substep."""
    tau = np.zeros(4)
    contact = np.zeros(2)
    foot = np.zeros(2)
    for n in range(nsub):
        _substep(z, zd, tgt, p, tau, contact, foot)
        if not _is_finite(z, zd):
            return n
        if do_log:
            log[n, 0] = t0 + (n + 1) * p[P_DT]
            for j in range(7):
                log[n, 1 + j] = z[j]
                log[n, 8 + j] = zd[j]
            log[n, 15] = contact[0]
            log[n, 16] = contact[1]
            for j in range(4):
                log[n, 17 + j] = tau[j]
    return -1


@njit(cache=True)
def _run_batch(Z, ZD, TGT, p, nsub, status):
    log = np.empty((1, LOG_COLS))
    for e in range(Z.shape[0]):
        status[e] = _run(Z[e], ZD[e], TGT[e], p, nsub, log, False, 0.0)


@njit(cache=True)
def _pelvis_and_feet(z, zd, p, out):
    """out = [x_p, z_p, vx_p, vz_p, foot_l_x, foot_l_z, foot_r_x, foot_r_z]."""
    pos = np.empty((7, 2))
    jac = np.empty((7, 2, 5))
    acc = np.empty((7, 2))
    m = np.empty(5)
    pbar = np.empty(2)
    jbar = np.empty((2, 5))
    abar = np.empty(2)
    _com_offset(z[2:7], zd[2:7], p, pos, jac, acc, m, pbar, jbar, abar)
    out[0] = z[0] - pbar[0]
    out[1] = z[1] - pbar[1]
    vx = zd[0]
    vz = zd[1]
    for j in range(5):
        vx -= jbar[0, j] * zd[2 + j]
        vz -= jbar[1, j] * zd[2 + j]
    out[2] = vx
    out[3] = vz
    for leg in range(2):
        out[4 + 2 * leg] = z[0] + pos[5 + leg, 0] - pbar[0]
        out[5 + 2 * leg] = z[1] + pos[5 + leg, 1] - pbar[1]


@njit(cache=True)
def _link_state(z, zd, p, wpos, wvel):
    """World COM positions and velocities of the 5 links (for energy/momentum)."""
    pos = np.empty((7, 2))
    jac = np.empty((7, 2, 5))
    acc = np.empty((7, 2))
    m = np.empty(5)
    pbar = np.empty(2)
    jbar = np.empty((2, 5))
    abar = np.empty(2)
    _com_offset(z[2:7], zd[2:7], p, pos, jac, acc, m, pbar, jbar, abar)
    for i in range(5):
        for k in range(2):
            wpos[i, k] = z[k] + pos[i, k] - pbar[k]
            v = zd[k]
            for j in range(5):
                v += (jac[i, k, j] - jbar[k, j]) * zd[2 + j]
            wvel[i, k] = v


# ----------------------------------------------------------------------------
# python surface
# ----------------------------------------------------------------------------


@dataclass
class SimState:
    z: np.ndarray
    zd: np.ndarray
    step: int = 0
    contact: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=bool))

    def copy(self) -> "SimState":
        return SimState(self.z.copy(), self.zd.copy(), self.step, self.contact.copy())

    @property
    def joints(self) -> np.ndarray:
        return self.z[3:7]

    @property
    def joint_vel(self) -> np.ndarray:
        return self.zd[3:7]

    @property
    def pitch(self) -> float:
        return float(self.z[2])


class BipedSim:
    """Stateless stepping functions bound to one immutable model."""

    def __init__(self, model: BipedModel | None = None):
        self.model = model or BipedModel()
        self.params = self.model.param_vector()
        self._buf = np.empty(8)

    # -- coordinates -------------------------------------------------------

    def pelvis(self, state: SimState) -> np.ndarray:
        """[x_p, z_p, vx_p, vz_p, foot_l_x, foot_l_z, foot_r_x, foot_r_z]."""
        out = np.empty(8)
        _pelvis_and_feet(state.z, state.zd, self.params, out)
        return out

    def q(self, state: SimState) -> np.ndarray:
        pv = self.pelvis(state)
        return np.concatenate(([pv[0], pv[1]], state.z[2:7]))

    def qdot(self, state: SimState) -> np.ndarray:
        pv = self.pelvis(state)
        return np.concatenate(([pv[2], pv[3]], state.zd[2:7]))

    def from_pelvis(self, q, qdot=None) -> SimState:
        """State with the given pelvis-based coordinates (and velocities)."""
        q = np.asarray(q, dtype=float)
        qdot = np.zeros(7) if qdot is None else np.asarray(qdot, dtype=float)
        z = q.copy()
        zd = qdot.copy()
        probe = np.empty(8)
        # COM = pelvis + mean link offset; evaluate the offset at the origin
        z0 = np.concatenate(([0.0, 0.0], q[2:]))
        zd0 = np.concatenate(([0.0, 0.0], qdot[2:]))
        _pelvis_and_feet(z0, zd0, self.params, probe)
        z[0] = q[0] - probe[0]
        z[1] = q[1] - probe[1]
        zd[0] = qdot[0] - probe[2]
        zd[1] = qdot[1] - probe[3]
        return SimState(z, zd)

    def foot_heights(self, state: SimState) -> tuple[float, float]:
        pv = self.pelvis(state)
        return float(pv[5]), float(pv[7])

    def standing_state(self, joints=None, height: float | None = None) -> SimState:
        """Zero-velocity state with the lowest foot touching the ground."""
        joints = self.model.nominal_pose() if joints is None else np.asarray(joints, dtype=float)
        q = np.concatenate(([0.0, 0.0, 0.0], joints))
        probe = self.from_pelvis(q)
        feet = self.pelvis(probe)
        lift = -min(feet[5], feet[7]) if height is None else height
        q[1] = lift
        return self.from_pelvis(q)

    def reset(self, seed, phi0_choices=(0.0, math.pi), joints=None):
        """Standing, motionless robot and a phase offset drawn from ``phi0_choices``.

        ``seed`` may be an int or a ``numpy.random.Generator``.
        """
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        phi0 = phi0_choices[int(rng.integers(len(phi0_choices)))]
        return self.standing_state(joints), float(phi0)

    # -- stepping ----------------------------------------------------------

    def clamp_targets(self, targets) -> np.ndarray:
        return np.clip(np.asarray(targets, dtype=float), self.model.joint_lower, self.model.joint_upper)

    def step_lowlevel(self, state: SimState, targets, n: int = 1) -> SimState:
        """Advance ``n`` substeps of sim_dt; returns a new state."""
        new = state.copy()
        tgt = np.asarray(targets, dtype=float)
        if not np.all(np.isfinite(tgt)):
            raise ValueError("joint targets must be finite")
        log = np.empty((1, LOG_COLS))
        status = _run(new.z, new.zd, tgt, self.params, n, log, False, 0.0)
        if status >= 0:
            raise SimulationBlowup(state.step + status)
        new.step = state.step + n
        self._update_contact(new)
        return new

    def step_policy(self, state: SimState, action) -> SimState:
        """Hold the clamped targets for one policy period (all substeps)."""
        return self.step_lowlevel(state, self.clamp_targets(action), self.model.substeps)

    def step_batch(self, Z: np.ndarray, ZD: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """In-place policy step for a stack of states; returns per-row status
        (-1 ok, otherwise the failing substep)."""
        tgt = np.clip(targets, self.model.joint_lower, self.model.joint_upper)
        status = np.empty(Z.shape[0], dtype=np.int64)
        _run_batch(Z, ZD, np.ascontiguousarray(tgt), self.params, self.model.substeps, status)
        return status

    def trace(self, state: SimState, targets, n: int | None = None, t0: float = 0.0):
        """Like step_policy but also returns one raw log row per substep
        (see ``trace_rows`` for the pelvis-based version)."""
        n = self.model.substeps if n is None else n
        new = state.copy()
        log = np.empty((n, LOG_COLS))
        status = _run(new.z, new.zd, self.clamp_targets(targets), self.params, n, log, True, t0)
        if status >= 0:
            raise SimulationBlowup(state.step + status)
        new.step = state.step + n
        self._update_contact(new)
        return new, log

    def trace_rows(self, log: np.ndarray) -> np.ndarray:
        """Convert raw trace rows to t, q[7], qdot[7], foot_l, foot_r, contact[2], torques[4]."""
        out = np.empty((log.shape[0], 1 + 7 + 7 + 2 + 2 + 4))
        buf = np.empty(8)
        for i, row in enumerate(log):
            z, zd = row[1:8], row[8:15]
            _pelvis_and_feet(z, zd, self.params, buf)
            out[i, 0] = row[0]
            out[i, 1:8] = (buf[0], buf[1], *z[2:7])
            out[i, 8:15] = (buf[2], buf[3], *zd[2:7])
            out[i, 15:17] = (buf[5], buf[7])
            out[i, 17:19] = row[15:17]
            out[i, 19:23] = row[17:21]
        return out

    def _update_contact(self, state: SimState):
        feet = self.pelvis(state)
        state.contact = np.array([feet[5] < 0.0, feet[7] < 0.0])

    # -- observation -------------------------------------------------------

    def observation(self, state: SimState, phase_vec, command) -> np.ndarray:
        pv = self.pelvis(state)
        th = state.z[2]
        obs = np.empty(OBS_DIM)
        obs[0:4] = state.z[3:7]
        obs[4:8] = state.zd[3:7] / VEL_SCALE
        obs[8:12] = orientation_quat(th)
        obs[12] = state.zd[2] / VEL_SCALE
        obs[13] = pv[2] / VEL_SCALE
        obs[14] = 0.0
        obs[15] = pv[1]
        obs[16] = phase_vec[0]
        obs[17] = phase_vec[1]
        obs[18] = command[0] / VEL_SCALE
        obs[19] = command[1] / VEL_SCALE
        return obs

    # -- diagnostics -------------------------------------------------------

    def momentum(self, state: SimState) -> np.ndarray:
        wpos = np.empty((5, 2))
        wvel = np.empty((5, 2))
        _link_state(state.z, state.zd, self.params, wpos, wvel)
        m = self._link_masses()
        return (m[:, None] * wvel).sum(axis=0)

    def energy(self, state: SimState) -> float:
        """Kinetic + gravitational energy of the links (contact springs excluded)."""
        wpos = np.empty((5, 2))
        wvel = np.empty((5, 2))
        _link_state(state.z, state.zd, self.params, wpos, wvel)
        m = self._link_masses()
        inertia = self.params[[P_I_TORSO, P_I_THIGH, P_I_SHIN, P_I_THIGH, P_I_SHIN]]
        s = state.zd[2:7]
        omega = np.array([s[0], s[0] + s[1], s[0] + s[1] + s[2], s[0] + s[3], s[0] + s[3] + s[4]])
        kin = 0.5 * float((m * (wvel**2).sum(axis=1)).sum() + (inertia * omega**2).sum())
        pot = float((m * wpos[:, 1]).sum()) * self.model.gravity
        return kin + pot

    def _link_masses(self):
        md = self.model
        return np.array([md.m_torso, md.m_thigh, md.m_shin, md.m_thigh, md.m_shin])


def orientation_quat(pitch: float) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a pure pitch rotation about +y."""
    return np.array([math.cos(0.5 * pitch), 0.0, math.sin(0.5 * pitch), 0.0])


def with_model(model: BipedModel, **changes) -> BipedModel:
    return replace(model, **changes)
