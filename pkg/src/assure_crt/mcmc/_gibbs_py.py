"""Pure numpy fallback for the compiled sweep in ``_gibbs.pyx``.

Same signature, same update order and the same random-number consumption
(scalar ``standard_normal`` / ``standard_gamma`` / ``random`` calls map onto
the C routines the compiled kernel calls directly).
"""

import math

import numpy as np


def _softplus(x):
    return x + math.log1p(math.exp(-x)) if x > 0 else math.log1p(math.exp(x))


def _log_prior_working(family, fp, t1, t2):
    if t2 < fp[2] or t2 > fp[3]:
        return -math.inf
    if family == 1:
        return 0.0 if fp[0] <= t1 <= fp[1] else -math.inf
    if family == 2:
        vb = math.exp(t1)
        return t1 if fp[0] <= vb <= fp[1] else -math.inf
    log_rho = -_softplus(-t1)
    log_1m_rho = -_softplus(t1)
    if family == 3:
        rho = math.exp(log_rho)
        return log_rho + log_1m_rho if fp[0] <= rho <= fp[1] else -math.inf
    return fp[0] * log_rho + fp[1] * log_1m_rho


def _working_to_var(family, t1, t2):
    vw = math.exp(t2)
    return (math.exp(t1) if family <= 2 else vw * math.exp(t1)), vw


def _log_target(family, fp, t1, t2, J, N, c2, rss):
    lp = _log_prior_working(family, fp, t1, t2)
    if lp == -math.inf:
        return lp
    vb, vw = _working_to_var(family, t1, t2)
    return lp - 0.5 * J * math.log(vb) - 0.5 * c2 / vb - 0.5 * N * math.log(vw) - 0.5 * rss / vw


def lambda_conditional(n, sums, arms, delta, c, tau_w, m_lam, v_lam):
    """Mean and variance of ``lambda`` given everything else."""
    s = float(np.sum(sums - n * (arms * delta + c)))
    prec = 1.0 / v_lam + tau_w * float(n.sum())
    return (m_lam / v_lam + tau_w * s) / prec, 1.0 / prec


def delta_conditional(n, sums, arms, lam, c, tau_w, m_del, v_del):
    """Mean and variance of ``delta`` given everything else."""
    treated = arms == 1
    s = float(np.sum((sums - n * (lam + c))[treated]))
    prec = 1.0 / v_del + tau_w * float(n[treated].sum())
    return (m_del / v_del + tau_w * s) / prec, 1.0 / prec


def cluster_conditional(n, sums, arms, lam, delta, tau_b, tau_w):
    """Means and variances of the cluster effects given everything else."""
    prec = tau_b + tau_w * n
    return tau_w * (sums - n * (lam + arms * delta)) / prec, 1.0 / prec


def shift_conditional(arms, alpha, tau_b, m_lam, v_lam, m_del, v_del):
    """Joint normal of ``(lambda, delta)`` given the cluster means ``alpha``.

    ``alpha_j = lambda + X_j delta + c_j``; the outcomes drop out, so this is a
    two-parameter regression of ``alpha`` on ``[1, X_j]`` with variance
    ``1 / tau_b``. Returns the mean and the lower Cholesky factor
    ``(l11, l21, l22)`` of the covariance.
    """
    J = float(alpha.size)
    Jt = float(np.sum(arms))
    b1 = m_lam / v_lam + tau_b * float(np.sum(alpha))
    b2 = m_del / v_del + tau_b * float(np.sum(alpha * arms))
    p11 = 1.0 / v_lam + tau_b * J
    p22 = 1.0 / v_del + tau_b * Jt
    p12 = tau_b * Jt
    # expanded to avoid cancellation when tau_b is large
    det = 1.0 / (v_lam * v_del) + tau_b * (Jt / v_lam + J / v_del) + tau_b * tau_b * Jt * (J - Jt)
    s11, s22, s12 = p22 / det, p11 / det, -p12 / det
    mean = ((s11 * b1 + s12 * b2), (s12 * b1 + s22 * b2))
    l11 = math.sqrt(s11)
    l21 = s12 / l11
    l22 = math.sqrt(max(s22 - l21 * l21, 0.0))
    return mean, (l11, l21, l22)


def precision_conditionals(n, ybar, within, arms, lam, delta, c, fp):
    """Gamma ``(shape, rate)`` of the within and between precisions."""
    d = ybar - lam - arms * delta - c
    rss = within + float(np.sum(n * d * d))
    return (fp[2] + 0.5 * float(n.sum()), fp[3] + 0.5 * rss), (fp[0] + 0.5 * n.size, fp[1] + 0.5 * float(np.sum(c * c)))


def run(n, sums, ybar, within, arms, m_lam, v_lam, m_del, v_del, family, fparams,
        lam, delta, vb, vw, c, fixed_var, burn_in, n_keep, thin, target_acc, adapt,
        step, rng):
    n = np.asarray(n, dtype=float)
    arms = np.asarray(arms, dtype=float)
    J = n.size
    N = float(n.sum())
    fp = [float(v) for v in fparams]
    step = np.array(step, dtype=float)
    tau_w, tau_b = 1.0 / vw, 1.0 / vb
    out = np.empty((4, n_keep))
    acc_count = [0.0, 0.0]
    if family in (1, 2):
        t = [math.log(vb), math.log(vw)]
    elif family >= 3:
        t = [math.log(vb) - math.log(vw), math.log(vw)]
    status, fail_iter, k = 0, -1, 0

    for it in range(burn_in + n_keep * thin):
        mean, var = lambda_conditional(n, sums, arms, delta, c, tau_w, m_lam, v_lam)
        lam = mean + math.sqrt(var) * rng.standard_normal()

        mean, var = delta_conditional(n, sums, arms, lam, c, tau_w, m_del, v_del)
        delta = mean + math.sqrt(var) * rng.standard_normal()

        mean_c, var_c = cluster_conditional(n, sums, arms, lam, delta, tau_b, tau_w)
        c = mean_c + np.sqrt(var_c) * rng.standard_normal(J)

        # interweaving: redraw (lambda, delta) holding the cluster means fixed
        alpha = lam + arms * delta + c
        (m1, m2), (l11, l21, l22) = shift_conditional(arms, alpha, tau_b, m_lam, v_lam, m_del, v_del)
        z1 = rng.standard_normal()
        z2 = rng.standard_normal()
        lam = m1 + l11 * z1
        delta = m2 + l21 * z1 + l22 * z2
        c = alpha - lam - arms * delta

        if not fixed_var:
            if family == 0:
                (shape_w, rate_w), (shape_b, rate_b) = precision_conditionals(n, ybar, within, arms, lam, delta, c, fp)
                tau_w = rng.standard_gamma(shape_w) / rate_w
                tau_b = rng.standard_gamma(shape_b) / rate_b
                vw, vb = 1.0 / tau_w, 1.0 / tau_b
            else:
                d = ybar - lam - arms * delta - c
                rss = within + float(np.sum(n * d * d))
                c2 = float(np.sum(c * c))
                for i in range(2):
                    cur = _log_target(family, fp, t[0], t[1], J, N, c2, rss)
                    prop = t[i] + step[i] * rng.standard_normal()
                    trial = list(t)
                    trial[i] = prop
                    logr = _log_target(family, fp, trial[0], trial[1], J, N, c2, rss) - cur
                    if math.isnan(logr):
                        logr = -math.inf
                    u = rng.random()
                    if math.log(u) < logr:
                        t[i] = prop
                        if it >= burn_in:
                            acc_count[i] += 1.0
                    if adapt and it < burn_in:
                        a = 1.0 if logr >= 0 else math.exp(logr)
                        step[i] *= math.exp((a - target_acc) / ((it + 1.0) ** 0.6))
                vb, vw = _working_to_var(family, t[0], t[1])
                tau_b, tau_w = 1.0 / vb, 1.0 / vw
        if not (math.isfinite(lam) and math.isfinite(delta)) or math.isnan(tau_w) or math.isnan(tau_b):
            status, fail_iter = 1, it
            break
        if it >= burn_in and (it - burn_in) % thin == thin - 1:
            out[:, k] = (lam, delta, vb, vw)
            k += 1

    acc = np.array(acc_count) / max(n_keep * thin, 1)
    return out[0], out[1], out[2], out[3], acc, step, status, fail_iter, (lam, delta, vb, vw)
