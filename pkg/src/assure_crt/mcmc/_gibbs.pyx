# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Gibbs / Metropolis-within-Gibbs sweep for the random-intercept model.

Mirrors ``_gibbs_py.run`` operation for operation and consumes the bit
generator in the same order, so both backends produce the same chain up to
floating-point summation order.
"""

import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport sqrt, log, exp, log1p, isfinite, fabs, pow, INFINITY
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport (
    random_standard_normal, random_standard_gamma, random_standard_uniform)

cnp.import_array()


cdef inline double softplus(double x) noexcept nogil:
    # log(1 + e^x) without overflow
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef double log_prior_working(int family, const double* fp, double t1, double t2) noexcept nogil:
    cdef double log_rho, log_1m_rho, rho
    if t2 < fp[2] or t2 > fp[3]:
        return -INFINITY
    if family == 1:
        if t1 < fp[0] or t1 > fp[1]:
            return -INFINITY
        return 0.0
    if family == 2:
        if exp(t1) < fp[0] or exp(t1) > fp[1]:
            return -INFINITY
        return t1
    log_rho = -softplus(-t1)
    log_1m_rho = -softplus(t1)
    if family == 3:
        rho = exp(log_rho)
        if rho < fp[0] or rho > fp[1]:
            return -INFINITY
        return log_rho + log_1m_rho
    # family 4: Beta(r, s) on rho, with the logit Jacobian rho * (1 - rho)
    return fp[0] * log_rho + fp[1] * log_1m_rho


cdef inline void working_to_var(int family, double t1, double t2, double* vb, double* vw) noexcept nogil:
    vw[0] = exp(t2)
    if family <= 2:
        vb[0] = exp(t1)
    else:
        vb[0] = vw[0] * exp(t1)


cdef double log_target(int family, const double* fp, double t1, double t2,
                       double J, double N, double c2, double rss) noexcept nogil:
    cdef double lp = log_prior_working(family, fp, t1, t2)
    cdef double vb, vw
    if lp == -INFINITY:
        return lp
    working_to_var(family, t1, t2, &vb, &vw)
    return lp - 0.5 * J * log(vb) - 0.5 * c2 / vb - 0.5 * N * log(vw) - 0.5 * rss / vw


def run(
    const cnp.int64_t[::1] n,
    const double[::1] sums,
    const double[::1] ybar,
    double within,
    const cnp.int64_t[::1] arms,
    double m_lam, double v_lam, double m_del, double v_del,
    int family,
    const double[::1] fparams,
    double lam, double delta, double vb, double vw,
    double[::1] c,
    bint fixed_var,
    Py_ssize_t burn_in, Py_ssize_t n_keep, Py_ssize_t thin,
    double target_acc, bint adapt,
    double[::1] step,
    rng,
):
    cdef Py_ssize_t J = n.shape[0]
    cdef Py_ssize_t total_iter = burn_in + n_keep * thin
    cdef Py_ssize_t it, j, k = 0, i
    cdef double N = 0.0, Nt = 0.0, Jt = 0.0
    cdef double sa, sat, b1, b2, p11, p22, p12, det, s11, s22, s12, l11, l21, l22, z1, z2
    cdef double tau_w = 1.0 / vw, tau_b = 1.0 / vb
    cdef double prec, num, s, m, d, rss, c2, t[2], prop, cur_lt, prop_lt, logr, u, a
    cdef double acc_count[2]
    cdef double fp[4]
    cdef int status = 0
    cdef Py_ssize_t fail_iter = -1
    cdef bitgen_t* bg

    for j in range(J):
        N += n[j]
        if arms[j] == 1:
            Nt += n[j]
            Jt += 1.0
    for i in range(4):
        fp[i] = fparams[i]
    acc_count[0] = 0.0
    acc_count[1] = 0.0

    out_lam = np.empty(n_keep)
    out_del = np.empty(n_keep)
    out_vb = np.empty(n_keep)
    out_vw = np.empty(n_keep)
    cdef double[::1] o_lam = out_lam, o_del = out_del, o_vb = out_vb, o_vw = out_vw

    if family == 1 or family == 2:
        t[0] = log(vb)
        t[1] = log(vw)
    elif family >= 3:
        t[0] = log(vb) - log(vw)
        t[1] = log(vw)

    bit_generator = rng.bit_generator
    bg = <bitgen_t*> PyCapsule_GetPointer(bit_generator.capsule, "BitGenerator")

    with bit_generator.lock, nogil:
        for it in range(total_iter):
            # lambda
            s = 0.0
            for j in range(J):
                s += sums[j] - n[j] * (arms[j] * delta + c[j])
            prec = 1.0 / v_lam + tau_w * N
            num = m_lam / v_lam + tau_w * s
            lam = num / prec + sqrt(1.0 / prec) * random_standard_normal(bg)
            # delta
            s = 0.0
            for j in range(J):
                if arms[j] == 1:
                    s += sums[j] - n[j] * (lam + c[j])
            prec = 1.0 / v_del + tau_w * Nt
            num = m_del / v_del + tau_w * s
            delta = num / prec + sqrt(1.0 / prec) * random_standard_normal(bg)
            # cluster effects
            for j in range(J):
                prec = tau_b + tau_w * n[j]
                m = tau_w * (sums[j] - n[j] * (lam + arms[j] * delta)) / prec
                c[j] = m + sqrt(1.0 / prec) * random_standard_normal(bg)
            # interweaving: redraw (lambda, delta) holding alpha_j = lambda + X_j delta + c_j fixed
            sa = 0.0
            sat = 0.0
            for j in range(J):
                c[j] += lam + arms[j] * delta
                sa += c[j]
                if arms[j] == 1:
                    sat += c[j]
            b1 = m_lam / v_lam + tau_b * sa
            b2 = m_del / v_del + tau_b * sat
            p11 = 1.0 / v_lam + tau_b * J
            p22 = 1.0 / v_del + tau_b * Jt
            p12 = tau_b * Jt
            det = 1.0 / (v_lam * v_del) + tau_b * (Jt / v_lam + J / v_del) + tau_b * tau_b * Jt * (J - Jt)
            s11 = p22 / det
            s22 = p11 / det
            s12 = -p12 / det
            l11 = sqrt(s11)
            l21 = s12 / l11
            l22 = s22 - l21 * l21
            l22 = sqrt(l22) if l22 > 0 else 0.0
            z1 = random_standard_normal(bg)
            z2 = random_standard_normal(bg)
            lam = s11 * b1 + s12 * b2 + l11 * z1
            delta = s12 * b1 + s22 * b2 + l21 * z1 + l22 * z2
            for j in range(J):
                c[j] -= lam + arms[j] * delta
            # variance block
            if not fixed_var:
                rss = within
                c2 = 0.0
                for j in range(J):
                    d = ybar[j] - lam - arms[j] * delta - c[j]
                    rss += n[j] * d * d
                    c2 += c[j] * c[j]
                if family == 0:
                    tau_w = random_standard_gamma(bg, fp[2] + 0.5 * N) / (fp[3] + 0.5 * rss)
                    tau_b = random_standard_gamma(bg, fp[0] + 0.5 * J) / (fp[1] + 0.5 * c2)
                    vw = 1.0 / tau_w
                    vb = 1.0 / tau_b
                else:
                    for i in range(2):
                        cur_lt = log_target(family, fp, t[0], t[1], J, N, c2, rss)
                        prop = t[i] + step[i] * random_standard_normal(bg)
                        if i == 0:
                            prop_lt = log_target(family, fp, prop, t[1], J, N, c2, rss)
                        else:
                            prop_lt = log_target(family, fp, t[0], prop, J, N, c2, rss)
                        logr = prop_lt - cur_lt
                        if logr != logr:
                            logr = -INFINITY
                        u = random_standard_uniform(bg)
                        if log(u) < logr:
                            t[i] = prop
                            if it >= burn_in:
                                acc_count[i] += 1.0
                        if adapt and it < burn_in:
                            a = 1.0 if logr >= 0 else exp(logr)
                            step[i] *= exp((a - target_acc) / pow(it + 1.0, 0.6))
                    working_to_var(family, t[0], t[1], &vb, &vw)
                    tau_b = 1.0 / vb
                    tau_w = 1.0 / vw
            if not (isfinite(lam) and isfinite(delta)) or tau_w != tau_w or tau_b != tau_b:
                status = 1
                fail_iter = it
                break
            if it >= burn_in and (it - burn_in) % thin == thin - 1:
                o_lam[k] = lam
                o_del[k] = delta
                o_vb[k] = vb
                o_vw[k] = vw
                k += 1

    acc = np.array([acc_count[0], acc_count[1]]) / max(n_keep * thin, 1)
    return out_lam, out_del, out_vb, out_vw, acc, np.asarray(step), status, fail_iter, (lam, delta, vb, vw)
