"""Independent reference computations used by the unit and acceptance tests.

Each one takes a route separate from the package: brute-force search,
finite differences, quadrature, or plain loops over events.
"""
import numpy as np
from scipy import integrate, special

from onlineph import DataBlock, fit_cox


def golden_section_max(f, lo, hi, tol=1e-10):
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def fd_gradient(f, beta, h=1e-5):
    beta = np.asarray(beta, float)
    out = np.empty_like(beta)
    for j in range(beta.size):
        e = np.zeros_like(beta)
        e[j] = h
        out[j] = (f(beta + e) - f(beta - e)) / (2 * h)
    return out


def fd_jacobian(g, beta, h=1e-5):
    beta = np.asarray(beta, float)
    cols = []
    for j in range(beta.size):
        e = np.zeros_like(beta)
        e[j] = h
        cols.append((g(beta + e) - g(beta - e)) / (2 * h))
    return np.column_stack(cols)


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b)))


def chi2_density(x, df):
    k = 0.5 * df
    return np.exp((k - 1) * np.log(x) - 0.5 * x - k * np.log(2.0) - special.gammaln(k))


def chi2_tail_by_quadrature(x, df):
    val, _ = integrate.quad(chi2_density, x, np.inf, args=(df,), epsabs=1e-13, epsrel=1e-12)
    return val


def event_by_event_statistic(block: DataBlock, kind, h_mode="simplified"):
    """Independent recomputation: loop over events, build risk-set sums directly."""
    beta = fit_cox(block).beta_hat
    order = np.argsort(block.time, kind="stable")
    t, s, x = block.time[order], block.status[order], block.covariates[order]
    n, p = x.shape
    risk = np.exp(x @ beta)
    ev = np.flatnonzero(s == 1)
    times = t[ev]
    if kind == "identity":
        g = times.copy()
    elif kind == "log":
        g = np.log(times)
    else:
        g = np.empty(len(ev))
        for i, tt in enumerate(times):
            surv = 1.0
            for u in np.unique(times[times < tt]):
                surv *= 1 - np.sum(times == u) / np.sum(t >= u)
            g[i] = surv
    g = g - g.mean()
    q = np.zeros(p)
    info = np.zeros((p, p))
    a = np.zeros((p, p))
    b = np.zeros((p, p))
    for i, j in enumerate(ev):
        at_risk = t >= t[j]
        w = risk[at_risk]
        xs = x[at_risk]
        mean = w @ xs / w.sum()
        v = (xs - mean).T @ ((xs - mean) * w[:, None]) / w.sum()
        q += g[i] * (x[j] - mean)
        info += v
        a += g[i] ** 2 * v
        b += g[i] * v
    if h_mode == "simplified":
        h = (g @ g / len(g)) * info
    else:
        h = a - b @ np.linalg.solve(info, b.T)
    return float(q @ np.linalg.solve(h, q))
