"""Pure-numpy fallback for the RK4 integrator; same contract as the compiled one."""
import numpy as np

OK, POSITIVITY, STABILITY = 0, 1, 2


def _apply_rows(B, p):
    out = B[:, 2] * p
    out[:-1] += B[:-1, 3] * p[1:]
    out[:-2] += B[:-2, 4] * p[2:]
    out[1:] += B[1:, 1] * p[:-1]
    out[2:] += B[2:, 0] * p[:-2]
    return out


def _rhs(B, w, c0, kappa, q_floor, p):
    lp = _apply_rows(B, p)
    q = c0 + lp
    i = int(np.argmin(q))
    if not (q[i] > 0.0):
        return POSITIVITY, None, 0.0, i, q[i]
    if q[i] < q_floor:
        return STABILITY, None, 0.0, i, q[i]
    k = np.log1p(lp / c0)
    m = float(w @ k)
    return OK, k - m + kappa * p, m, -1, 0.0


def rk4_integrate(rows, w, c0, kappa, psi0, dt, nsteps, sample_every, record_every, q_floor):
    """Integrate ``nsteps`` classical RK4 steps of the projected flow.

    Returns a dict with ``samples`` (state every ``sample_every`` steps, first
    and last included), ``m`` and ``energy`` (gauge source and unnormalised
    ``psi'^T K psi'`` every ``record_every`` steps), the final ``psi`` and a
    failure ``status`` (0 ok, 1 positivity, 2 stability) with its location.
    """
    rows = np.ascontiguousarray(rows, dtype=float)
    w = np.ascontiguousarray(w, dtype=float)
    psi = np.array(psi0, dtype=float, copy=True)
    n = psi.size
    samples = np.empty((nsteps // sample_every + 1, n))
    mrec = np.empty(nsteps // record_every + 1)
    erec = np.empty_like(mrec)
    status, fail_step, node, qbad = OK, -1, -1, 0.0
    h2, h6 = 0.5 * dt, dt / 6.0
    for s in range(nsteps + 1):
        status, k1, m, node, qbad = _rhs(rows, w, c0, kappa, q_floor, psi)
        if status:
            fail_step = s
            break
        if s % record_every == 0:
            mrec[s // record_every] = m
            erec[s // record_every] = -float(np.sum(w * k1 * _apply_rows(rows, k1)))
        if s % sample_every == 0:
            samples[s // sample_every] = psi
        if s == nsteps:
            break
        status, k2, _, node, qbad = _rhs(rows, w, c0, kappa, q_floor, psi + h2 * k1)
        if status:
            fail_step = s
            break
        status, k3, _, node, qbad = _rhs(rows, w, c0, kappa, q_floor, psi + h2 * k2)
        if status:
            fail_step = s
            break
        status, k4, _, node, qbad = _rhs(rows, w, c0, kappa, q_floor, psi + dt * k3)
        if status:
            fail_step = s
            break
        psi = psi + h6 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return {
        "samples": samples,
        "m": mrec,
        "energy": erec,
        "psi": psi,
        "status": status,
        "fail_step": fail_step,
        "fail_node": node,
        "fail_q": qbad,
    }
