"""Physics formulas and curve fits behind the characterization data.

Fits use damped least squares (Levenberg-Marquardt) with analytic Jacobians.
Starting points come from deterministic grid searches, so repeated fits of
the same data give identical results.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.constants as sc
from scipy.optimize import least_squares

from .errors import DomainError, KindMismatchError, ResolutionError
from .medium import SpectralProfile


@dataclass(frozen=True)
class PhysicalConstants:
    bohr_magneton: float = sc.physical_constants["Bohr magneton"][0]
    boltzmann: float = sc.k
    hbar: float = sc.hbar
    planck: float = sc.h
    light_speed: float = sc.c


CONSTANTS = PhysicalConstants()


def zeeman_splitting(g: float, B: float, constants: PhysicalConstants = CONSTANTS) -> float:
    """Splitting ``g mu_B B / h`` in Hz."""
    if B < 0 or g <= 0:
        raise DomainError("need B >= 0 and g > 0")
    return g * constants.bohr_magneton * B / constants.planck


def phonon_density(B, T_k, g: float, hbar_power: int = 3, constants: PhysicalConstants = CONSTANTS):
    """Planck energy density of phonons resonant with the Zeeman splitting.

    ``u = (mu_B g B)^3 / (pi^2 hbar^p c^3) / (exp(mu_B g B / k_B T) - 1)``.
    ``hbar_power=3`` is the dimensionally consistent form; ``2`` reproduces
    the expression as commonly printed. ``B = 0`` returns the limit 0.
    Accepts scalars or arrays.
    """
    B = np.asarray(B, dtype=float)
    T_k = np.asarray(T_k, dtype=float)
    if np.any(B < 0) or np.any(T_k <= 0) or g <= 0:
        raise DomainError("need B >= 0, T > 0 and g > 0")
    energy = constants.bohr_magneton * g * B
    x = energy / (constants.boltzmann * T_k)
    prefactor = energy**3 / (math.pi**2 * constants.hbar**hbar_power * constants.light_speed**3)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        occupation = np.where(x > 0, 1.0 / np.expm1(np.minimum(x, 700.0)), 0.0)
        u = np.where(x > 700.0, 0.0, prefactor * occupation)
    u = np.where(B == 0, 0.0, u)
    return float(u) if u.ndim == 0 else u


@dataclass
class FitResult:
    params: dict
    residual_rms: float
    converged: bool
    model: str = field(default="", compare=False)

    def to_dict(self):
        return {"params": dict(self.params), "residual_rms": self.residual_rms, "converged": self.converged}

    def to_json(self):
        return json.dumps(self.to_dict())

    def __getitem__(self, key):
        return self.params[key]


# exponential decay

def _exp_model(t, x, n):
    y = np.full_like(t, x[-1])
    for i in range(n):
        a, logtau = x[2 * i], x[2 * i + 1]
        y = y + a * np.exp(-t / np.exp(logtau))
    return y


def _exp_jac(t, x, n):
    J = np.empty((t.size, 2 * n + 1))
    for i in range(n):
        a, tau = x[2 * i], np.exp(x[2 * i + 1])
        e = np.exp(-t / tau)
        J[:, 2 * i] = e
        J[:, 2 * i + 1] = a * e * t / tau
    J[:, -1] = 1.0
    return J


def _tau_grid(t):
    dt = np.min(np.diff(t))
    span = t[-1] - t[0]
    return np.geomspace(max(dt / 2, span * 1e-6), 5 * span, 48)


def _best_linear(t, y, taus):
    cols = [np.exp(-(t - t[0]) / tau) for tau in taus] + [np.ones_like(t)]
    A = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    rss = float(np.sum((A @ coef - y) ** 2))
    # amplitudes are referenced to t[0]; shift them back to t = 0
    amps = [c * math.exp(t[0] / tau) for c, tau in zip(coef[:-1], taus)]
    return rss, amps, float(coef[-1])


def fit_exponential(t, y, n_terms: int = 1) -> FitResult:
    """Fit ``y = sum_i a_i exp(-t/tau_i) + c`` with one or two terms.

    Parameters come back as ``a1, tau1[, a2, tau2], c`` with ``tau1 < tau2``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if n_terms not in (1, 2):
        raise DomainError("n_terms must be 1 or 2")
    if t.shape != y.shape or t.size < 2 * (n_terms + 1):
        raise DomainError(f"need at least {2 * (n_terms + 1)} points")
    if np.any(np.diff(t) <= 0):
        raise DomainError("t must be strictly increasing")

    if np.ptp(y) <= 1e-14 * max(abs(float(np.mean(y))), 1.0):
        params = {}
        for i in range(n_terms):
            params[f"a{i + 1}"] = 0.0
            params[f"tau{i + 1}"] = float(t[-1] - t[0])
        params["c"] = float(np.mean(y))
        return FitResult(params, float(np.sqrt(np.mean((y - y.mean()) ** 2))), True, "exponential")

    grid = _tau_grid(t)
    starts = []
    if n_terms == 1:
        best = min((_best_linear(t, y, [tau]) + (tau,) for tau in grid), key=lambda r: r[0])
        starts.append(np.array([best[1][0], math.log(best[3]), best[2]]))
    else:
        cands = []
        for i, t1 in enumerate(grid):
            for t2 in grid[i + 1 :]:
                rss, amps, c = _best_linear(t, y, [t1, t2])
                cands.append((rss, amps, c, t1, t2))
        rss, amps, c, t1, t2 = min(cands, key=lambda r: r[0])
        starts.append(np.array([amps[0], math.log(t1), amps[1], math.log(t2), c]))
        # nested start: the one-term optimum plus an inactive term, so adding
        # a term can never raise the residual
        one = fit_exponential(t, y, 1)
        starts.append(
            np.array([one["a1"], math.log(one["tau1"]), 0.0, math.log(one["tau1"] * 10), one["c"]])
        )

    best = None
    for x0 in starts:
        sol = least_squares(
            lambda x: _exp_model(t, x, n_terms) - y,
            x0,
            jac=lambda x: _exp_jac(t, x, n_terms),
            method="lm",
            xtol=1e-15,
            ftol=1e-15,
            gtol=1e-15,
            max_nfev=5000,
        )
        cost = float(np.sum(sol.fun**2))
        if best is None or cost < best[0]:
            best = (cost, sol)
    cost, sol = best
    x = sol.x
    terms = sorted(((x[2 * i], math.exp(x[2 * i + 1])) for i in range(n_terms)), key=lambda p: p[1])
    params = {}
    for i, (a, tau) in enumerate(terms):
        params[f"a{i + 1}"] = float(a)
        params[f"tau{i + 1}"] = float(tau)
    params["c"] = float(x[-1])
    return FitResult(params, math.sqrt(cost / t.size), bool(sol.status > 0), "exponential")


# Lorentzian holes

def _lor(x, w):
    u = 2 * x / w
    d = 1 + u * u
    L = 1 / d
    dLdx = -4 * u / (w * d * d)
    dLdw = 2 * u * u / (w * d * d)
    return L, dLdx, dLdw


def _hole_model(f, x, n):
    base, amp, c, w = x[:4]
    L, dLdx, dLdw = _lor(f - c, w)
    y = base + amp * L
    cols = [np.ones_like(f), L, -amp * dLdx, amp * dLdw]
    if n:
        s, ws = x[4], x[5]
        ds = np.zeros_like(f)
        dws = np.zeros_like(f)
        dc_side = np.zeros_like(f)
        amp_cols = []
        for k in range(1, n + 1):
            b = x[5 + k]
            Lp, dxp, dwp = _lor(f - c - k * s, ws)
            Lm, dxm, dwm = _lor(f - c + k * s, ws)
            y = y + b * (Lp + Lm)
            dc_side += -b * (dxp + dxm)
            ds += b * k * (-dxp + dxm)
            dws += b * (dwp + dwm)
            amp_cols.append(Lp + Lm)
        cols[2] = cols[2] + dc_side
        cols += [ds, dws] + amp_cols
    return y, np.column_stack(cols)


def _half_max_width(f, y, i_peak, base):
    half = base + (y[i_peak] - base) / 2
    lo = i_peak
    while lo > 0 and y[lo] > half:
        lo -= 1
    hi = i_peak
    while hi < y.size - 1 and y[hi] > half:
        hi += 1
    return max(f[hi] - f[lo], 2 * (f[1] - f[0]))


def _fit_holes(f, y, x0, n):
    sol = least_squares(
        lambda x: _hole_model(f, x, n)[0] - y,
        x0,
        jac=lambda x: _hole_model(f, x, n)[1],
        method="lm",
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
        max_nfev=20000,
    )
    return float(np.sum(sol.fun**2)), sol


def fit_lorentzian_holes(spectrum: SpectralProfile, n_side_pairs: int = 0) -> FitResult:
    """Fit a transmission hole as a central Lorentzian plus symmetric side holes.

    Side pair ``k`` sits at ``center +- k * spacing``; all side holes share one
    width. Parameters: ``baseline, amplitude, center, fwhm`` and, with side
    pairs, ``spacing, side_fwhm, side_amplitude1..n``.
    """
    if spectrum.kind != "transmission":
        raise KindMismatchError("fit_lorentzian_holes expects a transmission spectrum")
    if n_side_pairs < 0 or int(n_side_pairs) != n_side_pairs:
        raise DomainError("n_side_pairs must be a non-negative integer")
    f = spectrum.detuning
    y = spectrum.values
    step = spectrum.detuning_step
    n_params = 4 + (2 + n_side_pairs if n_side_pairs else 0)
    if y.size < 3 * n_params:
        raise ResolutionError("too few samples for the requested number of holes")

    edge = max(y.size // 10, 1)
    base0 = float(np.median(np.concatenate([y[:edge], y[-edge:]])))
    i_peak = int(np.argmax(y))
    amp0 = float(y[i_peak] - base0)
    w0 = _half_max_width(f, y, i_peak, base0)
    x_central = np.array([base0, amp0, f[i_peak], w0])

    if n_side_pairs == 0:
        cost, sol = _fit_holes(f, y, x_central, 0)
        return _hole_result(sol, cost, 0, f.size)

    inner = fit_lorentzian_holes(spectrum, n_side_pairs - 1)
    p = inner.params
    c = p["center"]
    half_span = min(c - f[0], f[-1] - c)
    max_spacing = half_span / n_side_pairs
    if max_spacing < 2 * step:
        raise ResolutionError("side holes cannot be resolved on this grid")

    # peak search for the spacing on the residual of the central fit
    central = fit_lorentzian_holes(spectrum, 0)
    q = central.params
    resid = y - (q["baseline"] + q["amplitude"] * _lor(f - q["center"], q["fwhm"])[0])
    trial = np.arange(2 * step, max_spacing, step)
    if trial.size == 0:
        raise ResolutionError("side holes cannot be resolved on this grid")
    score = np.zeros(trial.size)
    for k in range(1, n_side_pairs + 1):
        score += np.interp(c + k * trial, f, resid) + np.interp(c - k * trial, f, resid)
    # the strongest few local maxima of the score each seed one start
    interior = np.flatnonzero((score[1:-1] >= score[:-2]) & (score[1:-1] > score[2:])) + 1
    peaks = interior[np.argsort(-score[interior], kind="stable")][:4]
    if peaks.size == 0:
        peaks = np.array([int(np.argmax(score))])
    starts = []
    for i in peaks:
        s0 = float(trial[i])
        b0 = [float(max(np.interp(c + k * s0, f, resid), 0.0)) for k in range(1, n_side_pairs + 1)]
        starts.append(np.concatenate([[q["baseline"], q["amplitude"], q["center"], q["fwhm"], s0, q["fwhm"]], b0]))
    s0 = float(trial[peaks[0]])

    nested = [p["baseline"], p["amplitude"], p["center"], p["fwhm"]]
    if n_side_pairs > 1:
        nested += [p["spacing"], p["side_fwhm"]] + [p[f"side_amplitude{k}"] for k in range(1, n_side_pairs)] + [0.0]
    else:
        nested += [s0, p["fwhm"], 0.0]
    starts.append(np.array(nested, dtype=float))

    best = None
    for x0 in starts:
        cost, sol = _fit_holes(f, y, x0, n_side_pairs)
        if best is None or cost < best[0]:
            best = (cost, sol)
    return _hole_result(best[1], best[0], n_side_pairs, f.size)


def _hole_result(sol, cost, n, size):
    x = sol.x
    params = {"baseline": x[0], "amplitude": x[1], "center": x[2], "fwhm": abs(x[3])}
    if n:
        params["spacing"] = abs(x[4])
        params["side_fwhm"] = abs(x[5])
        for k in range(1, n + 1):
            params[f"side_amplitude{k}"] = x[5 + k]
    params = {k: float(v) for k, v in params.items()}
    return FitResult(params, math.sqrt(cost / size), bool(sol.status > 0), "lorentzian")


def lorentzian_hole_spectrum(
    grid, center, fwhm, amplitude, baseline, spacing=None, side_fwhm=None, side_amplitudes=()
) -> SpectralProfile:
    """Synthetic transmission spectrum with the same model the fit uses."""
    f = grid.detuning
    y = baseline + amplitude * _lor(f - center, fwhm)[0]
    for k, b in enumerate(side_amplitudes, start=1):
        y = y + b * (_lor(f - center - k * spacing, side_fwhm)[0] + _lor(f - center + k * spacing, side_fwhm)[0])
    return SpectralProfile(grid.start, grid.step, np.clip(y, 0, 1), "transmission")
