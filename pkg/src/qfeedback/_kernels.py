"""Compiled inner loops for the filter integrator.

Everything here works on raw ``complex128`` arrays with N <= ~16 and is
written with explicit loops so numba can keep small matrices in registers.
All kernels release the GIL; they hold no global state, so running them from
several threads gives bit-identical results to running them serially.

Integer codes shared with :mod:`qfeedback.control`:

* regime: 0 drive, 1 feedback
* last band entry: 0 not in band, 1 from above, 2 from below
* controller mode: 0 fixed field, 1 pure feedback, 2 hysteresis switching
"""

import numpy as np
from numba import njit

DRIVE = 0
FEEDBACK = 1

NOT_IN_BAND = 0
FROM_ABOVE = 1
FROM_BELOW = 2

MODE_FIXED = 0
MODE_FEEDBACK = 1
MODE_SWITCHING = 2

OK = 0
FAIL_TRACE = 1
FAIL_NONFINITE = 2

N_SAMPLE_COLS = 7
N_EVENT_COLS = 4

_JIT = dict(cache=True, nogil=True, fastmath=False)


@njit(**_JIT)
def _matmul(a, b, out):
    n = a.shape[0]
    for i in range(n):
        for j in range(n):
            acc = 0j
            for k in range(n):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc


@njit(**_JIT)
def _trace_prod(a, b):
    # Tr[A B]
    n = a.shape[0]
    acc = 0j
    for i in range(n):
        for j in range(n):
            acc += a[i, j] * b[j, i]
    return acc


@njit(**_JIT)
def _cholesky_ok(m, shift, work):
    # True iff m + shift*I admits a Cholesky factorisation (m Hermitian).
    n = m.shape[0]
    for i in range(n):
        for j in range(i + 1):
            s = m[i, j]
            if i == j:
                s += shift
            for k in range(j):
                s -= work[i, k] * np.conj(work[j, k])
            if i == j:
                d = s.real
                if not d > 0.0:
                    return False
                work[i, i] = np.sqrt(d)
            else:
                work[i, j] = s / work[j, j].real
    return True


@njit(**_JIT)
def density_check(m, tol_herm, tol_trace, tol_psd):
    """0 if `m` is a density matrix within tolerances, else 1 (Hermiticity), 2 (trace), 3 (PSD)."""
    n = m.shape[0]
    acc = 0.0
    tr = 0j
    for i in range(n):
        tr += m[i, i]
        for j in range(n):
            d = m[i, j] - np.conj(m[j, i])
            acc += d.real * d.real + d.imag * d.imag
    if not np.sqrt(acc) <= tol_herm:
        return 1
    if not abs(tr - 1.0) <= tol_trace:
        return 2
    h = np.empty((n, n), dtype=np.complex128)
    for i in range(n):
        for j in range(n):
            h[i, j] = 0.5 * (m[i, j] + np.conj(m[j, i]))
    work = np.empty((n, n), dtype=np.complex128)
    if not _cholesky_ok(h, tol_psd, work):
        return 3
    return 0


@njit(**_JIT)
def jacobi_eigh(a, v, w, max_sweeps=60):
    """Cyclic Jacobi for a Hermitian matrix; destroys `a`.

    Eigenvalues go to `w` (unsorted), eigenvectors to the columns of `v`.
    Returns False if it did not converge.
    """
    n = a.shape[0]
    for i in range(n):
        for j in range(n):
            v[i, j] = 0j
        v[i, i] = 1.0 + 0j
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += a[i, j].real ** 2 + a[i, j].imag ** 2
    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += a[p, q].real ** 2 + a[p, q].imag ** 2
        if off <= 1e-32 * total or off == 0.0:
            for i in range(n):
                w[i] = a[i, i].real
            return True
        for p in range(n):
            for q in range(p + 1, n):
                apq = a[p, q]
                r = abs(apq)
                if r == 0.0:
                    continue
                ph = apq / r  # e^{i phi}
                app = a[p, p].real
                aqq = a[q, q].real
                theta = (aqq - app) / (2.0 * r)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                g_qp = -s * np.conj(ph)
                g_qq = c * np.conj(ph)
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = akp * c + akq * g_qp
                    a[k, q] = akp * s + akq * g_qq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk + np.conj(g_qp) * aqk
                    a[q, k] = s * apk + np.conj(g_qq) * aqk
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = vkp * c + vkq * g_qp
                    v[k, q] = vkp * s + vkq * g_qq
                a[p, q] = 0j
                a[q, p] = 0j
                a[p, p] = a[p, p].real + 0j
                a[q, q] = a[q, q].real + 0j
    return False


@njit(**_JIT)
def _clip_negative(m, work, v, w):
    # m <- V max(W, 0) V*, in place
    n = m.shape[0]
    for i in range(n):
        for j in range(n):
            work[i, j] = m[i, j]
    # Jacobi beats LAPACK only for the smallest sizes
    if n > 3 or not jacobi_eigh(work, v, w):
        w2, v2 = np.linalg.eigh(m)
        for i in range(n):
            w[i] = w2[i]
            for j in range(n):
                v[i, j] = v2[i, j]
    for k in range(n):
        if w[k] < 0.0:
            w[k] = 0.0
    for i in range(n):
        for j in range(i, n):
            acc = 0j
            for k in range(n):
                acc += v[i, k] * w[k] * np.conj(v[j, k])
            m[i, j] = acc
            m[j, i] = np.conj(acc)
        m[i, i] = m[i, i].real + 0j


@njit(**_JIT)
def project_buffered(m, eps, work, v, w):
    """Hermitize, clip eigenvalues below zero (unless certified >= -eps), renormalize.

    `work`, `v` (n x n complex) and `w` (n real) are scratch space.
    """
    n = m.shape[0]
    for i in range(n):
        for j in range(n):
            if not (np.isfinite(m[i, j].real) and np.isfinite(m[i, j].imag)):
                return FAIL_NONFINITE
    for i in range(n):
        m[i, i] = m[i, i].real + 0j
        for j in range(i + 1, n):
            z = 0.5 * (m[i, j] + np.conj(m[j, i]))
            m[i, j] = z
            m[j, i] = np.conj(z)
    if not _cholesky_ok(m, eps, work):
        _clip_negative(m, work, v, w)
    tr = 0.0
    for i in range(n):
        tr += m[i, i].real
    if not tr > 0.0:
        return FAIL_TRACE
    inv = 1.0 / tr
    for i in range(n):
        for j in range(n):
            m[i, j] *= inv
    return OK


@njit(**_JIT)
def project_inplace(m, eps):
    n = m.shape[0]
    work = np.empty((n, n), dtype=np.complex128)
    v = np.empty((n, n), dtype=np.complex128)
    w = np.empty(n)
    return project_buffered(m, eps, work, v, w)


@njit(**_JIT)
def _coupling(c):
    # (c*, c*c, diag(c), c is diagonal)
    n = c.shape[0]
    cd = np.conj(c.T).copy()
    cdc = np.empty((n, n), dtype=np.complex128)
    _matmul(cd, c, cdc)
    z = np.empty(n, dtype=np.complex128)
    diag = True
    for i in range(n):
        z[i] = c[i, i]
        for j in range(n):
            if i != j and c[i, j] != 0:
                diag = False
    return cd, cdc, z, diag


@njit(**_JIT)
def _diag_increment(rho, t1, z, sqeta, dw, dt, mean, out):
    # increment for c = diag(z); t1 holds H rho
    n = rho.shape[0]
    for i in range(n):
        for j in range(n):
            zi = z[i]
            zj = np.conj(z[j])
            comm = t1[i, j] - np.conj(t1[j, i])
            a = zi * zj - 0.5 * (zi.real * zi.real + zi.imag * zi.imag + zj.real * zj.real + zj.imag * zj.imag)
            out[i, j] = -1j * comm * dt + (a * dt + sqeta * (zi + zj - mean) * dw) * rho[i, j]


@njit(**_JIT)
def em_update(rho, h, c, cd, cdc, zc, diag, sqeta, dw, dt, t1, t2, t3, t4):
    """In-place Euler-Maruyama increment of the nonlinear filter (no projection).

    Relies on rho being exactly Hermitian so that rho H = (H rho)* etc.
    When ``diag`` is set, ``c = diag(z)`` and the products are elementwise.
    """
    n = rho.shape[0]
    _matmul(h, rho, t1)  # H rho
    if diag:
        mean = 0.0
        for i in range(n):
            mean += 2.0 * (zc[i] * rho[i, i]).real
        _diag_increment(rho, t1, zc, sqeta, dw, dt, mean, t3)
    else:
        _matmul(c, rho, t2)  # c rho
        _matmul(t2, cd, t3)  # c rho c*
        _matmul(cdc, rho, t4)  # c*c rho
        mean = 0.0
        for i in range(n):
            mean += 2.0 * t2[i, i].real  # Tr[(c + c*) rho]
        for i in range(n):
            for j in range(n):
                comm = t1[i, j] - np.conj(t1[j, i])
                diss = t3[i, j] - 0.5 * (t4[i, j] + np.conj(t4[j, i]))
                diff = t2[i, j] + np.conj(t2[j, i]) - mean * rho[i, j]
                t3[i, j] = -1j * comm * dt + diss * dt + sqeta * diff * dw
    for i in range(n):
        for j in range(n):
            rho[i, j] += t3[i, j]


@njit(**_JIT)
def zakai_update(rt, h, c, cd, cdc, zc, diag, sqeta, dy, dt, t1, t2, t3, t4):
    """In-place Euler-Maruyama increment of the unnormalized (linear) filter."""
    n = rt.shape[0]
    _matmul(h, rt, t1)
    if diag:
        _diag_increment(rt, t1, zc, sqeta, dy, dt, 0.0, t3)
    else:
        _matmul(c, rt, t2)
        _matmul(t2, cd, t3)
        _matmul(cdc, rt, t4)
        for i in range(n):
            for j in range(n):
                comm = t1[i, j] - np.conj(t1[j, i])
                diss = t3[i, j] - 0.5 * (t4[i, j] + np.conj(t4[j, i]))
                diff = t2[i, j] + np.conj(t2[j, i])
                t3[i, j] = -1j * comm * dt + diss * dt + sqeta * diff * dy
    for i in range(n):
        for j in range(n):
            rt[i, j] += t3[i, j]


@njit(**_JIT)
def _hamiltonian(f, gs, u, h):
    n = f.shape[0]
    for i in range(n):
        for j in range(n):
            acc = f[i, j]
            for k in range(gs.shape[0]):
                acc += u[k] * gs[k, i, j]
            h[i, j] = acc


@njit(**_JIT)
def _transition(fid, gamma, regime, entry):
    # hysteresis update; returns (regime, entry)
    if fid >= gamma:
        return FEEDBACK, NOT_IN_BAND
    if fid <= 0.5 * gamma:
        return DRIVE, NOT_IN_BAND
    if entry == NOT_IN_BAND:
        entry = FROM_ABOVE if regime == FEEDBACK else FROM_BELOW
    if entry == FROM_ABOVE:
        return FEEDBACK, entry
    return DRIVE, entry


@njit(**_JIT)
def _controls(rho, regime, offsets, ks, drives, u):
    if regime == FEEDBACK:
        for k in range(u.shape[0]):
            u[k] = offsets[k] + _trace_prod(rho, ks[k]).real
    else:
        for k in range(u.shape[0]):
            u[k] = drives[k]


@njit(**_JIT)
def filter_step_inplace(rho, f, gs, u, c, sqeta, dw, dt, eps):
    n = rho.shape[0]
    cd, cdc, zc, diag = _coupling(c)
    h = np.empty((n, n), dtype=np.complex128)
    _hamiltonian(f, gs, u, h)
    t1 = np.empty((n, n), dtype=np.complex128)
    t2 = np.empty_like(t1)
    t3 = np.empty_like(t1)
    t4 = np.empty_like(t1)
    em_update(rho, h, c, cd, cdc, zc, diag, sqeta, dw, dt, t1, t2, t3, t4)
    return project_inplace(rho, eps)


@njit(**_JIT)
def run_path(rho, f, gs, c, rho_f, obs, sqeta, mode, gamma, regime, entry,
             offsets, ks, drives, dws, dt, stride, eps, samples, events):
    """Integrate one trajectory in place.

    ``dws`` holds one innovation increment per step; the number of steps is
    ``len(dws)``. Samples are written every ``stride`` steps (step 0 and, when
    divisible, the last step included). Switch events are appended to
    ``events`` until it is full; the true count is still returned.

    Returns (status, steps_done, n_events, min_fidelity, regime, entry).
    """
    n = rho.shape[0]
    m = gs.shape[0]
    nsteps = dws.shape[0]
    cd, cdc, zc, diag = _coupling(c)
    obs2 = np.empty((n, n), dtype=np.complex128)
    _matmul(obs, obs, obs2)
    h = np.empty((n, n), dtype=np.complex128)
    t1 = np.empty((n, n), dtype=np.complex128)
    t2 = np.empty_like(t1)
    t3 = np.empty_like(t1)
    t4 = np.empty_like(t1)
    pw = np.empty_like(t1)
    pv = np.empty_like(t1)
    pe = np.empty(n)
    u = np.zeros(m)
    n_events = 0
    min_fid = np.inf
    rec = 0
    for k in range(nsteps + 1):
        t = k * dt
        fid = _trace_prod(rho, rho_f).real
        if fid < min_fid:
            min_fid = fid
        if mode == MODE_SWITCHING:
            new_regime, entry = _transition(fid, gamma, regime, entry)
            if new_regime != regime:
                if n_events < events.shape[0]:
                    events[n_events, 0] = t
                    events[n_events, 1] = regime
                    events[n_events, 2] = new_regime
                    events[n_events, 3] = fid
                n_events += 1
                regime = new_regime
        _controls(rho, regime, offsets, ks, drives, u)
        if stride > 0 and k % stride == 0 and rec < samples.shape[0]:
            z = _trace_prod(rho, obs).real
            samples[rec, 0] = t
            samples[rec, 1] = fid
            samples[rec, 2] = _trace_prod(rho, obs2).real - z * z
            samples[rec, 3] = z
            samples[rec, 4] = u[0] if m > 0 else np.nan
            samples[rec, 5] = u[1] if m > 1 else np.nan
            samples[rec, 6] = regime
            rec += 1
        if k == nsteps:
            break
        _hamiltonian(f, gs, u, h)
        em_update(rho, h, c, cd, cdc, zc, diag, sqeta, dws[k], dt, t1, t2, t3, t4)
        status = project_buffered(rho, eps, pw, pv, pe)
        if status != OK:
            return status, k, n_events, min_fid, regime, entry
    return OK, nsteps, n_events, min_fid, regime, entry


@njit(**_JIT)
def run_batch(rho0, f, gs, c, sqeta, mode, offsets, ks, drives, dws, dt, eps, out, status):
    """Advance ``len(dws)`` independent copies of ``rho0`` under a memoryless law.

    Used for generator estimates; ``mode`` must be fixed or pure feedback.
    """
    n = rho0.shape[0]
    m = gs.shape[0]
    cd, cdc, zc, diag = _coupling(c)
    h = np.empty((n, n), dtype=np.complex128)
    t1 = np.empty((n, n), dtype=np.complex128)
    t2 = np.empty_like(t1)
    t3 = np.empty_like(t1)
    t4 = np.empty_like(t1)
    pw = np.empty_like(t1)
    pv = np.empty_like(t1)
    pe = np.empty(n)
    u = np.zeros(m)
    regime = FEEDBACK if mode == MODE_FEEDBACK else DRIVE
    rho = np.empty((n, n), dtype=np.complex128)
    for p in range(dws.shape[0]):
        rho[:, :] = rho0
        st = OK
        for k in range(dws.shape[1]):
            _controls(rho, regime, offsets, ks, drives, u)
            _hamiltonian(f, gs, u, h)
            em_update(rho, h, c, cd, cdc, zc, diag, sqeta, dws[p, k], dt, t1, t2, t3, t4)
            st = project_buffered(rho, eps, pw, pv, pe)
            if st != OK:
                break
        out[p, :, :] = rho
        status[p] = st


@njit(**_JIT)
def run_zakai_pair(rho, f, gs, c, sqeta, regime, offsets, ks, drives, dws, dt, eps):
    """Drive the normalized filter and the linear filter with the same noise.

    The observation increment for the linear filter is rebuilt from the
    innovation and the normalized state. Returns the max over steps of the
    Frobenius distance between the two normalized states, and a status.
    """
    n = rho.shape[0]
    m = gs.shape[0]
    cd, cdc, zc, diag = _coupling(c)
    h = np.empty((n, n), dtype=np.complex128)
    t1 = np.empty((n, n), dtype=np.complex128)
    t2 = np.empty_like(t1)
    t3 = np.empty_like(t1)
    t4 = np.empty_like(t1)
    pw = np.empty_like(t1)
    pv = np.empty_like(t1)
    pe = np.empty(n)
    u = np.zeros(m)
    rt = rho.copy()
    worst = 0.0
    for k in range(dws.shape[0]):
        _controls(rho, regime, offsets, ks, drives, u)
        _hamiltonian(f, gs, u, h)
        mean = _trace_prod(c + cd, rho).real
        dy = dws[k] + sqeta * mean * dt
        zakai_update(rt, h, c, cd, cdc, zc, diag, sqeta, dy, dt, t1, t2, t3, t4)
        em_update(rho, h, c, cd, cdc, zc, diag, sqeta, dws[k], dt, t1, t2, t3, t4)
        st = project_buffered(rho, eps, pw, pv, pe)
        if st != OK:
            return worst, st
        tr = 0.0
        for i in range(n):
            tr += rt[i, i].real
        if not tr > 0.0:
            return worst, FAIL_TRACE
        # rescale to keep the linear filter away from under/overflow
        acc = 0.0
        for i in range(n):
            for j in range(n):
                rt[i, j] /= tr
                d = rt[i, j] - rho[i, j]
                acc += d.real * d.real + d.imag * d.imag
        dist = np.sqrt(acc)
        if dist > worst:
            worst = dist
    return worst, OK
