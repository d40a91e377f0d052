"""Single-qubit (polarization) process tomography.

Processes are chi matrices in the operator basis ``{I, X, -iY, Z}``
normalized so that the identity process is ``chi[0, 0] = 1`` and a
trace-preserving map has ``Tr chi = 1``. Measurements form a 4x4 table of
probabilities: input state i (H, V, D, R) detected with analyzer j (same set).
"""

from __future__ import annotations

import csv
import io
import json

import numpy as np
from scipy.optimize import least_squares

from .errors import ConvergenceError, DomainError
from .polarization import BASIS

LABELS = ("H", "V", "D", "R")

PAULI_BASIS = np.array(
    [
        [[1, 0], [0, 1]],
        [[0, 1], [1, 0]],
        [[0, -1], [1, 0]],  # -i * sigma_y
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)

STATES = np.array([BASIS[k] for k in LABELS])
PROJECTORS = np.array([np.outer(s, s.conj()) for s in STATES])

PHYS_TOL = 1e-9


def identity_chi() -> np.ndarray:
    chi = np.zeros((4, 4), dtype=complex)
    chi[0, 0] = 1
    return chi


def pauli_chi(index: int) -> np.ndarray:
    chi = np.zeros((4, 4), dtype=complex)
    chi[index, index] = 1
    return chi


def chi_from_kraus(kraus) -> np.ndarray:
    """chi matrix of a channel given by Kraus operators."""
    chi = np.zeros((4, 4), dtype=complex)
    for k in kraus:
        e = np.array([np.trace(a.conj().T @ k) / 2 for a in PAULI_BASIS])
        chi += np.outer(e, e.conj())
    return chi


def random_chi(rng, rank: int = 4) -> np.ndarray:
    """Random CPTP process from a random Stinespring isometry."""
    g = rng.normal(size=(2 * rank, 2)) + 1j * rng.normal(size=(2 * rank, 2))
    q, _ = np.linalg.qr(g)
    kraus = [q[2 * i : 2 * i + 2, :] for i in range(rank)]
    return chi_from_kraus(kraus)


def check_physical(chi, tol: float = PHYS_TOL) -> np.ndarray:
    chi = np.asarray(chi, dtype=complex)
    if chi.shape != (4, 4):
        raise DomainError("chi must be 4x4")
    if np.abs(chi - chi.conj().T).max() > tol:
        raise DomainError("chi is not Hermitian")
    if np.linalg.eigvalsh((chi + chi.conj().T) / 2).min() < -tol:
        raise DomainError("chi is not positive semidefinite")
    if abs(np.trace(chi) - 1) > tol:
        raise DomainError("chi does not have unit trace")
    return chi


def apply_process(chi, rho, check: bool = True) -> np.ndarray:
    """``sum_nm chi_nm A_n rho A_m^dagger``."""
    if check:
        chi = check_physical(chi)
    rho = np.asarray(rho, dtype=complex)
    return np.einsum("nm,nij,jk,mlk->il", chi, PAULI_BASIS, rho, PAULI_BASIS.conj())


def _predict(chi) -> np.ndarray:
    """Noise-free table p[i, j] = Tr(P_j E(rho_i))."""
    out = np.einsum("nm,nab,ibc,mdc->iad", chi, PAULI_BASIS, PROJECTORS, PAULI_BASIS.conj())
    return np.einsum("jda,iad->ij", PROJECTORS, out).real


def simulate_tomography(chi, noise_sigma: float = 0.0, seed: int = 0) -> np.ndarray:
    """The sixteen input/analyzer probabilities, with optional Gaussian noise clamped to [0, 1]."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    chi = check_physical(chi)
    p = _predict(chi)
    if noise_sigma > 0:
        p = p + np.random.default_rng(seed).normal(scale=noise_sigma, size=p.shape)
    return np.clip(p, 0.0, 1.0)


def _linear_inversion(table) -> np.ndarray:
    # the map chi -> table is linear; 16 real unknowns for a Hermitian chi
    basis = []
    for i in range(4):
        for j in range(i, 4):
            m = np.zeros((4, 4), dtype=complex)
            m[i, j] = m[j, i] = 1
            basis.append(m)
            if i != j:
                m = np.zeros((4, 4), dtype=complex)
                m[i, j], m[j, i] = 1j, -1j
                basis.append(m)
    A = np.column_stack([_predict(b).ravel() for b in basis])
    coef, *_ = np.linalg.lstsq(A, np.asarray(table, dtype=float).ravel(), rcond=None)
    return sum(c * b for c, b in zip(coef, basis))


_TRIL = np.tril_indices(4)
_OFF = np.tril_indices(4, -1)


def _chi_from_params(x) -> np.ndarray:
    L = np.zeros((4, 4), dtype=complex)
    L[np.diag_indices(4)] = x[:4]
    L[_OFF] = x[4:10] + 1j * x[10:16]
    c = L @ L.conj().T
    return c / np.trace(c).real


def _params_from_chi(chi) -> np.ndarray:
    w, v = np.linalg.eigh((chi + chi.conj().T) / 2)
    w = np.clip(w, 0, None)
    psd = (v * w) @ v.conj().T
    psd = psd / np.trace(psd).real
    L = np.linalg.cholesky(psd + 1e-10 * np.eye(4))
    return np.concatenate([L[np.diag_indices(4)].real, L[_OFF].real, L[_OFF].imag])


class Reconstruction(np.ndarray):
    """chi matrix carrying the fit residual as ``.residual``."""

    def __new__(cls, chi, residual):
        obj = np.asarray(chi).view(cls)
        obj.residual = residual
        return obj

    def __array_finalize__(self, obj):
        self.residual = getattr(obj, "residual", None)


def reconstruct_chi(table, max_nfev: int = 20000) -> Reconstruction:
    """Least-squares physical chi for a measurement table.

    chi is parameterized as ``L L^dagger / Tr(L L^dagger)`` with lower-triangular
    ``L`` so every iterate is Hermitian, positive and trace one. The start
    point is the linear-inversion estimate projected onto that set.
    """
    table = np.asarray(table, dtype=float)
    if table.shape != (4, 4) or np.any(table < 0) or np.any(table > 1):
        raise DomainError("table must be 4x4 with entries in [0, 1]")

    def fun(x):
        return (_predict(_chi_from_params(x)) - table).ravel()

    x0 = _params_from_chi(_linear_inversion(table))
    sol = least_squares(fun, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
    chi = _chi_from_params(sol.x)
    residual = float(np.sqrt(np.mean(sol.fun**2)))
    if sol.status <= 0:
        raise ConvergenceError("chi reconstruction did not converge", best=Reconstruction(chi, residual))
    return Reconstruction(chi, residual)


def _psd_sqrt(m):
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def process_fidelity(chi_a, chi_b) -> float:
    """``(Tr sqrt(sqrt(a) b sqrt(a)))^2`` for physical chi matrices."""
    a = check_physical(chi_a, 1e-6)
    b = check_physical(chi_b, 1e-6)
    sa = _psd_sqrt(a)
    w = np.linalg.eigvalsh(sa @ b @ sa)
    f = float(np.sum(np.sqrt(np.clip(w, 0, None))) ** 2)
    return min(max(f, 0.0), 1.0)


def frequency_bin_fidelity(alpha_out: float, beta_out: float) -> float:
    """Fraction of counts found in the intended frequency/time bin."""
    if alpha_out < 0 or beta_out < 0:
        raise DomainError("counts must be non-negative")
    total = alpha_out + beta_out
    if total <= 0:
        raise DomainError("fidelity is undefined without counts")
    return alpha_out / total


# serialization

def table_to_csv(table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["input"] + list(LABELS))
    for label, row in zip(LABELS, np.asarray(table)):
        w.writerow([label] + [repr(float(v)) for v in row])
    return buf.getvalue()


def table_from_csv(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], [r for r in rows[1:] if r]
    if [h.strip().upper() for h in header[1:]] != list(LABELS):
        raise DomainError("table columns must be H,V,D,R")
    by_label = {r[0].strip().upper(): [float(v) for v in r[1:]] for r in body}
    try:
        return np.array([by_label[k] for k in LABELS])
    except KeyError as exc:
        raise DomainError(f"table is missing row {exc.args[0]}") from None


def chi_to_json(chi, fidelity: dict | None = None) -> str:
    chi = np.asarray(chi)
    d = {"basis": ["I", "X", "-iY", "Z"], "chi": [[[float(z.real), float(z.imag)] for z in row] for row in chi]}
    if fidelity is not None:
        d["fidelity"] = fidelity
    return json.dumps(d)


def chi_from_json(text: str) -> np.ndarray:
    d = json.loads(text)
    return np.array([[complex(re, im) for re, im in row] for row in d["chi"]])
