"""Jones calculus for the polarization-compensation optics.

Waveplate matrices follow the conventions used for the memory setup, where
the half-wave plate is written as a pure rotation by twice its angle. The
compensation problem asks for plate angles that turn an unknown retarder
into the identity up to a global phase.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import DomainError

TILTED_HWP_SANDWICH = "TILTED_HWP_SANDWICH"
HWP_QWP_HWP = "HWP_QWP_HWP"
CONFIGS = (TILTED_HWP_SANDWICH, HWP_QWP_HWP)

GRID_POINTS = 16


def hwp(phi):
    c, s = math.cos(2 * phi), math.sin(2 * phi)
    return np.array([[c, -s], [s, c]], dtype=complex)


def qwp(phi):
    c, s = math.cos(2 * phi), math.sin(2 * phi)
    return np.array([[1 - 1j * c, -1j * s], [-1j * s, 1 + 1j * c]]) / math.sqrt(2)


def h0(gamma):
    """Tilted HWP at 0 degrees: relative phase ``gamma`` on V."""
    return np.array([[1, 0], [0, np.exp(1j * gamma)]], dtype=complex)


def arb(phi, gamma):
    """Retarder with retardance ``gamma`` and fast axis set by ``phi``."""
    c, s = math.cos(gamma / 2), math.sin(gamma / 2)
    c2, s2 = math.cos(2 * phi), math.sin(2 * phi)
    return np.array([[c - 1j * s * c2, -1j * s * s2], [-1j * s * s2, c + 1j * s * c2]])


_KINDS = {"HWP": (hwp, 1), "QWP": (qwp, 1), "H0": (h0, 1), "ARB": (arb, 2)}


def waveplate(kind: str, *angles: float) -> np.ndarray:
    try:
        fn, nargs = _KINDS[kind.upper()]
    except KeyError:
        raise DomainError(f"unknown waveplate kind {kind!r}") from None
    if len(angles) != nargs:
        raise DomainError(f"{kind} takes {nargs} angle(s), got {len(angles)}")
    return fn(*angles)


def compose(chain) -> np.ndarray:
    """Product of a chain of Jones matrices; the first element acts first."""
    out = np.eye(2, dtype=complex)
    for m in chain:
        out = np.asarray(m) @ out
    return out


def is_unitary(m, tol: float = 1e-9) -> bool:
    m = np.asarray(m)
    return m.shape == (2, 2) and np.linalg.norm(m.conj().T @ m - np.eye(2)) < tol


# states

H = np.array([1, 0], dtype=complex)
V = np.array([0, 1], dtype=complex)
D = np.array([1, 1], dtype=complex) / math.sqrt(2)
R = np.array([1, -1j], dtype=complex) / math.sqrt(2)
BASIS = {"H": H, "V": V, "D": D, "R": R}


def state(label_or_amplitudes) -> np.ndarray:
    if isinstance(label_or_amplitudes, str):
        return BASIS[label_or_amplitudes.upper()].copy()
    v = np.asarray(label_or_amplitudes, dtype=complex)
    n = np.linalg.norm(v)
    if v.shape != (2,) or n == 0:
        raise DomainError("a polarization state has two non-zero amplitudes")
    return v / n


def project(psi, analyzer) -> float:
    """Probability ``|<analyzer|psi>|^2``."""
    psi, analyzer = np.asarray(psi), np.asarray(analyzer)
    for v in (psi, analyzer):
        if abs(np.linalg.norm(v) - 1) > 1e-9:
            raise DomainError("states must be normalized")
    return float(abs(np.vdot(analyzer, psi)) ** 2)


# compensation

def phase_residual(m) -> tuple:
    """``min_theta ||m - e^{i theta} I||_F`` and the minimizing ``theta``."""
    m = np.asarray(m)
    tr = np.trace(m)
    theta = float(np.angle(tr)) if abs(tr) > 0 else 0.0
    r2 = float(np.sum(np.abs(m) ** 2)) + 2.0 - 2.0 * abs(tr)
    return math.sqrt(max(r2, 0.0)), theta


def config_chain(config: str, j_arb, angles) -> np.ndarray:
    if config == TILTED_HWP_SANDWICH:
        phi1, phi2, gamma = angles
        # I = HWP(phi2) . J_arb . HWP(phi1) . H0(gamma)
        return hwp(phi2) @ j_arb @ hwp(phi1) @ h0(gamma)
    if config == HWP_QWP_HWP:
        phi1, phi2, phi3 = angles
        # I ~ J_arb . HWP(phi3) . QWP(phi2) . HWP(phi1)
        return j_arb @ hwp(phi3) @ qwp(phi2) @ hwp(phi1)
    raise DomainError(f"unknown configuration {config!r}")


def _angle_ranges(config):
    if config == TILTED_HWP_SANDWICH:
        return [(0, math.pi), (0, math.pi), (0, 2 * math.pi)]
    return [(0, math.pi)] * 3


@dataclass(frozen=True)
class CompensationSolution:
    angles: list
    global_phase: float
    residual: float
    config: str = field(default=TILTED_HWP_SANDWICH, compare=False)

    def to_dict(self):
        return {"angles_rad": list(self.angles), "global_phase_rad": self.global_phase, "residual": self.residual}

    def to_json(self):
        return json.dumps(self.to_dict())


def _grid_residuals(config, j_arb, axes):
    # vectorized trace / norm over the full grid
    a, b, c = np.meshgrid(*axes, indexing="ij")
    a, b, c = a.ravel(), b.ravel(), c.ravel()

    def hwp_v(p):
        cc, ss = np.cos(2 * p), np.sin(2 * p)
        out = np.empty(p.shape + (2, 2), dtype=complex)
        out[..., 0, 0], out[..., 0, 1], out[..., 1, 0], out[..., 1, 1] = cc, -ss, ss, cc
        return out

    def qwp_v(p):
        cc, ss = np.cos(2 * p), np.sin(2 * p)
        out = np.empty(p.shape + (2, 2), dtype=complex)
        out[..., 0, 0], out[..., 0, 1] = 1 - 1j * cc, -1j * ss
        out[..., 1, 0], out[..., 1, 1] = -1j * ss, 1 + 1j * cc
        return out / math.sqrt(2)

    def h0_v(g):
        out = np.zeros(g.shape + (2, 2), dtype=complex)
        out[..., 0, 0], out[..., 1, 1] = 1, np.exp(1j * g)
        return out

    if config == TILTED_HWP_SANDWICH:
        m = hwp_v(b) @ j_arb @ hwp_v(a) @ h0_v(c)
    else:
        m = j_arb @ hwp_v(c) @ qwp_v(b) @ hwp_v(a)
    tr = np.abs(np.trace(m, axis1=-2, axis2=-1))
    nrm = np.sum(np.abs(m) ** 2, axis=(-2, -1))
    r = np.sqrt(np.maximum(nrm + 2 - 2 * tr, 0))
    return np.column_stack([a, b, c]), r


def solve_compensation(j_arb, config: str = TILTED_HWP_SANDWICH, n_starts: int = 4) -> CompensationSolution:
    """Plate angles that bring ``j_arb`` closest to the identity up to phase.

    A 16-point grid per angle seeds ``n_starts`` local least-squares
    refinements (over the angles and the global phase); the best one wins.
    """
    j_arb = np.asarray(j_arb, dtype=complex)
    if not is_unitary(j_arb, 1e-8):
        raise DomainError("j_arb must be a unitary 2x2 matrix")
    if config not in CONFIGS:
        raise DomainError(f"unknown configuration {config!r}")
    axes = [lo + (hi - lo) * np.arange(GRID_POINTS) / GRID_POINTS for lo, hi in _angle_ranges(config)]
    points, res = _grid_residuals(config, j_arb, axes)
    order = np.argsort(res, kind="stable")[:n_starts]

    def fun(x):
        m = config_chain(config, j_arb, x[:3]) - np.exp(1j * x[3]) * np.eye(2)
        return np.concatenate([m.real.ravel(), m.imag.ravel()])

    best = None
    for i in order:
        x0 = points[i]
        _, theta0 = phase_residual(config_chain(config, j_arb, x0))
        sol = least_squares(fun, np.append(x0, theta0), method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
        r, theta = phase_residual(config_chain(config, j_arb, sol.x[:3]))
        if best is None or r < best[0]:
            best = (r, sol.x[:3], theta)
    if res[order[0]] < best[0]:
        x0 = points[order[0]]
        r, theta = phase_residual(config_chain(config, j_arb, x0))
        best = (r, x0, theta)
    r, angles, theta = best
    # every plate matrix is periodic over its grid range, so wrapping is exact
    angles = [float(np.mod(a, hi - lo)) for a, (lo, hi) in zip(angles, _angle_ranges(config))]
    return CompensationSolution(angles, float(theta), float(r), config)


def config_worst_case(config: str, n_samples: int, seed: int = 0) -> float:
    """Largest compensation residual over random retarders ``arb(phi, gamma)``.

    Each sample draws from its own child seed, so the value for sample ``i``
    does not depend on how many samples are taken or in what order.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    worst = 0.0
    for child in np.random.SeedSequence(seed).spawn(n_samples):
        rng = np.random.default_rng(child)
        phi = rng.uniform(0, math.pi)
        gamma = rng.uniform(0, 2 * math.pi)
        worst = max(worst, solve_compensation(arb(phi, gamma), config).residual)
    return worst
