"""Density matrices, sensing scenarios and the reduced-signal constructions.

A sensing scenario is the pair of noise and signal states together with the
signal strength ``theta0`` that defines the mixed state

    rho(theta) = (1 - theta) rho_n + theta rho_s = rho_n + theta * Delta.

Everything else in the package consumes the objects defined here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_TOL = 1e-10
RANK_TOL = 1e-9


class StateError(ValueError):
    """Raised when a matrix or scenario violates its invariants."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


def hermitian_eigh(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of the Hermitian part of ``a`` (ascending order)."""
    a = np.asarray(a, dtype=complex)
    return np.linalg.eigh(0.5 * (a + a.conj().T))


def apply_fn(a: np.ndarray, fn) -> np.ndarray:
    """Apply a scalar function to a Hermitian matrix through its eigenbasis."""
    w, v = hermitian_eigh(a)
    return (v * fn(w)) @ v.conj().T


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, positive semidefinite, unit-trace matrix.

    Validation runs on construction; the stored array is read-only.
    """

    entries: np.ndarray
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise StateError(f"density matrix must be square, got shape {a.shape}")
        if self.tol < 0:
            raise StateError("tol must be nonnegative")
        herm_dev = np.max(np.abs(a - a.conj().T))
        if herm_dev > self.tol:
            raise StateError(f"matrix is not Hermitian (deviation {herm_dev:.3e})")
        tr = np.trace(a).real
        if abs(tr - 1.0) > self.tol:
            raise StateError(f"trace is {tr!r}, expected 1")
        lo = np.linalg.eigvalsh(0.5 * (a + a.conj().T))[0]
        if lo < -self.tol:
            raise StateError(f"matrix is not positive semidefinite (min eigenvalue {lo:.3e})")
        object.__setattr__(self, "entries", _frozen(a))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        return hermitian_eigh(self.entries)

    def spectrum(self, rank_tol: float = RANK_TOL) -> Spectrum:
        return Spectrum.from_values(np.linalg.eigvalsh(self.entries), rank_tol=rank_tol)

    def rank(self, rank_tol: float = RANK_TOL) -> int:
        return int(np.sum(np.linalg.eigvalsh(self.entries) > rank_tol))

    def allclose(self, other: DensityMatrix | np.ndarray, atol: float = 1e-10) -> bool:
        b = other.entries if isinstance(other, DensityMatrix) else np.asarray(other)
        return bool(np.allclose(self.entries, b, atol=atol, rtol=0))

    @classmethod
    def diag(cls, values: Sequence[float], tol: float = DEFAULT_TOL) -> DensityMatrix:
        return cls(np.diag(np.asarray(values, dtype=complex)), tol=tol)

    @classmethod
    def pure(cls, ket: Sequence[complex]) -> DensityMatrix:
        v = np.asarray(ket, dtype=complex)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()))

    @classmethod
    def maximally_mixed(cls, dim: int) -> DensityMatrix:
        return cls(np.eye(dim, dtype=complex) / dim)


def as_density(rho) -> DensityMatrix:
    return rho if isinstance(rho, DensityMatrix) else DensityMatrix(np.asarray(rho))


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Nonincreasing probability vector, e.g. the eigenvalues of a state."""

    values: np.ndarray
    rank_tol: float = RANK_TOL

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise StateError("spectrum must be a nonempty 1-d array")
        if np.any(v < 0):
            raise StateError("spectrum entries must be nonnegative")
        if np.any(np.diff(v) > 0):
            raise StateError("spectrum must be sorted nonincreasing")
        if abs(v.sum() - 1.0) > 1e-10:
            raise StateError(f"spectrum sums to {v.sum()!r}, expected 1")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_values(cls, values, rank_tol: float = RANK_TOL) -> Spectrum:
        """Sort, clip eigen-solver dust below zero, and build a spectrum."""
        v = np.sort(np.asarray(values, dtype=float))[::-1]
        v = np.where(v < 0, 0.0, v)
        v = v / v.sum()
        return cls(v, rank_tol=rank_tol)

    @property
    def rank(self) -> int:
        return int(np.sum(self.values > self.rank_tol))

    def nonzero(self) -> np.ndarray:
        return self.values[self.values > 0]

    def __len__(self):
        return self.values.size


def support_projectors(rho, rank_tol: float = RANK_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Projectors onto the support of ``rho`` and onto its orthogonal complement.

    The support is spanned by the eigenvectors with eigenvalue above
    ``rank_tol``. Accepts a :class:`DensityMatrix` or any Hermitian array.
    """
    a = rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    w, v = hermitian_eigh(a)
    keep = v[:, w > rank_tol]
    pi_par = keep @ keep.conj().T
    pi_perp = np.eye(a.shape[0], dtype=complex) - pi_par
    return pi_par, pi_perp


@dataclass(frozen=True, eq=False)
class SensingScenario:
    """One detection problem: noise state, signal state and signal strength.

    ``lambda_gap`` (optional) is the promised spectral gap: every nonzero
    eigenvalue of ``rho_n`` lies at or above ``(theta0 + lambda_gap)/(1 - theta0)``.
    """

    rho_n: DensityMatrix
    rho_s: DensityMatrix
    theta0: float
    lambda_gap: float | None = None
    seed: int | None = None
    rank_tol: float = RANK_TOL
    pi_perp: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.rho_n.dim != self.rho_s.dim:
            raise StateError(f"dimension mismatch: {self.rho_n.dim} vs {self.rho_s.dim}")
        if not 0.0 < self.theta0 < 1.0:
            raise StateError(f"theta0 must lie in (0, 1), got {self.theta0}")
        if self.lambda_gap is not None:
            if self.lambda_gap < 0:
                raise StateError("lambda_gap must be nonnegative")
            floor = (self.theta0 + self.lambda_gap) / (1.0 - self.theta0)
            w = np.linalg.eigvalsh(self.rho_n.entries)
            nz = w[w > self.rank_tol]
            if nz.size and nz.min() < floor - 1e-10:
                raise StateError(
                    f"noise eigenvalue {nz.min():.6g} lies below the gap floor {floor:.6g}"
                )
        _, pp = support_projectors(self.rho_n, self.rank_tol)
        pp.setflags(write=False)
        object.__setattr__(self, "pi_perp", pp)

    @property
    def dim(self) -> int:
        return self.rho_n.dim

    @property
    def delta(self) -> np.ndarray:
        return self.rho_s.entries - self.rho_n.entries

    @property
    def delta_perp(self) -> np.ndarray:
        return self.pi_perp @ self.delta @ self.pi_perp

    @property
    def r_n(self) -> int:
        return self.rho_n.rank(self.rank_tol)

    @property
    def r_s(self) -> int:
        return self.rho_s.rank(self.rank_tol)

    @property
    def r(self) -> int:
        return self.r_n + self.r_s

    def state(self, theta: float | None = None) -> DensityMatrix:
        """The mixed state rho(theta); defaults to theta0."""
        return mix_state(self.rho_n, self.rho_s, self.theta0 if theta is None else theta)

    def is_orthogonal(self, tol: float = 1e-10) -> bool:
        return abs(np.trace(self.rho_n.entries @ self.rho_s.entries).real) <= tol

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "rho_n": _matrix_to_pairs(self.rho_n.entries),
            "rho_s": _matrix_to_pairs(self.rho_s.entries),
            "theta0": self.theta0,
            "lambda_gap": self.lambda_gap,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict, tol: float = DEFAULT_TOL) -> SensingScenario:
        expected = {"dim", "rho_n", "rho_s", "theta0", "lambda_gap", "seed"}
        unknown = set(data) - expected
        if unknown:
            raise StateError(f"unknown scenario fields: {sorted(unknown)}")
        missing = {"dim", "rho_n", "rho_s", "theta0"} - set(data)
        if missing:
            raise StateError(f"missing scenario fields: {sorted(missing)}")
        dim = int(data["dim"])
        rho_n = _matrix_from_pairs(data["rho_n"], dim)
        rho_s = _matrix_from_pairs(data["rho_s"], dim)
        return cls(
            DensityMatrix(rho_n, tol=tol),
            DensityMatrix(rho_s, tol=tol),
            float(data["theta0"]),
            lambda_gap=None if data.get("lambda_gap") is None else float(data["lambda_gap"]),
            seed=None if data.get("seed") is None else int(data["seed"]),
        )

    @classmethod
    def from_json(cls, text: str) -> SensingScenario:
        return cls.from_dict(json.loads(text))


def _matrix_to_pairs(a: np.ndarray) -> list[list[float]]:
    return [[float(z.real), float(z.imag)] for z in np.asarray(a).ravel()]


def _matrix_from_pairs(pairs, dim: int) -> np.ndarray:
    arr = np.asarray(pairs, dtype=float)
    if arr.shape != (dim * dim, 2):
        raise StateError(f"expected {dim * dim} complex pairs, got shape {arr.shape}")
    return (arr[:, 0] + 1j * arr[:, 1]).reshape(dim, dim)


def mix_state(rho_n: DensityMatrix, rho_s: DensityMatrix, theta: float) -> DensityMatrix:
    """Return (1 - theta) rho_n + theta rho_s."""
    if rho_n.dim != rho_s.dim:
        raise StateError(f"dimension mismatch: {rho_n.dim} vs {rho_s.dim}")
    if not 0.0 <= theta <= 1.0:
        raise StateError(f"theta must lie in [0, 1], got {theta}")
    out = rho_n.entries + theta * (rho_s.entries - rho_n.entries)
    return DensityMatrix(out, tol=max(rho_n.tol, rho_s.tol))


def depolarize(rho: DensityMatrix, gamma: float) -> DensityMatrix:
    """Depolarizing channel (1 - gamma) rho + gamma I/d."""
    if not 0.0 <= gamma <= 1.0:
        raise StateError(f"gamma must lie in [0, 1], got {gamma}")
    d = rho.dim
    return DensityMatrix((1 - gamma) * rho.entries + gamma * np.eye(d) / d, tol=rho.tol)


def orthogonal_reduction(
    rho_n: DensityMatrix,
    rho_s: DensityMatrix,
    vartheta0: float,
    rank_tol: float = RANK_TOL,
) -> tuple[float, DensityMatrix]:
    """Keep only the part of the signal orthogonal to the noise support.

    Returns the reduced signal ``vartheta0 * tr(rho_s P)`` and the normalized
    state ``P rho_s P / tr(rho_s P)`` where ``P`` projects onto ker(rho_n).
    """
    _, pp = support_projectors(rho_n, rank_tol)
    weight = float(np.trace(rho_s.entries @ pp).real)
    if weight <= rank_tol:
        raise StateError("fully support-preserving signal: no component outside supp(rho_n)")
    perp = pp @ rho_s.entries @ pp / weight
    return vartheta0 * weight, DensityMatrix(0.5 * (perp + perp.conj().T), tol=rho_s.tol)


def kraus_reduced_signal(
    kraus_ops: Sequence[np.ndarray],
    n_noise: int,
    n_signal: int,
    rho_i: DensityMatrix,
    rank_tol: float = RANK_TOL,
) -> tuple[float, SensingScenario]:
    """Split a channel's Kraus terms into noise and signal parts.

    Kraus operators ``0..n_noise`` make up the noise and the following
    ``n_signal`` operators the signal. Returns the reduced signal (weight of
    the signal output outside the noise support) and the unreduced scenario
    whose ``theta0`` is the raw signal probability.
    """
    ops = [np.asarray(k, dtype=complex) for k in kraus_ops]
    if len(ops) != n_noise + n_signal + 1:
        raise StateError(f"expected {n_noise + n_signal + 1} Kraus operators, got {len(ops)}")
    d = rho_i.dim
    completeness = sum(k.conj().T @ k for k in ops)
    if np.max(np.abs(completeness - np.eye(d))) > 1e-8:
        raise StateError("Kraus operators are not normalized (sum K^dag K != I)")
    rho = rho_i.entries
    outs = [k @ rho @ k.conj().T for k in ops]
    noise_out = sum(outs[: n_noise + 1])
    signal_out = sum(outs[n_noise + 1 :])
    vartheta = float(np.trace(signal_out).real)
    if vartheta <= rank_tol:
        raise StateError("signal Kraus operators annihilate the input state (vartheta = 0)")
    if vartheta >= 1.0 - rank_tol:
        raise StateError("noise Kraus operators annihilate the input state")
    rho_n = DensityMatrix(_herm(noise_out / (1.0 - vartheta)), tol=1e-8)
    rho_s = DensityMatrix(_herm(signal_out / vartheta), tol=1e-8)
    _, pp = support_projectors(rho_n, rank_tol)
    theta = float(np.trace(pp @ signal_out).real)
    return theta, SensingScenario(rho_n, rho_s, vartheta, rank_tol=rank_tol)


def _herm(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def dissipator(op: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Lindblad dissipator L rho L^dag - {L^dag L, rho}/2."""
    op = np.asarray(op, dtype=complex)
    ldl = op.conj().T @ op
    return op @ rho @ op.conj().T - 0.5 * (ldl @ rho + rho @ ldl)


def lindblad_reduced_signal(
    hamiltonian: np.ndarray,
    lindblad_ops: Sequence[np.ndarray],
    kappas: Sequence[float],
    n_noise: int,
    n_signal: int,
    rho_i: DensityMatrix,
    t: float,
    rank_tol: float = RANK_TOL,
) -> float:
    """First-order (short-time) reduced signal of weak jump operators.

    The first ``n_noise`` jump operators are noise, the next ``n_signal`` the
    signal. The perpendicular projector comes from the state evolved under
    the Hamiltonian and the noise jumps only.

    Raises :class:`StateError` ("t too large") when the first-order state
    ``rho_i + t * drho`` is not positive semidefinite. Negativity of order
    ``(t ||[H, rho_i]||)^2`` is tolerated since the expansion drops that order.
    """
    ops = [np.asarray(op, dtype=complex) for op in lindblad_ops]
    kappas = [float(k) for k in kappas]
    if len(ops) != n_noise + n_signal or len(kappas) != len(ops):
        raise StateError("need one rate per jump operator and n_noise + n_signal operators")
    if any(k < 0 for k in kappas):
        raise StateError("rates must be nonnegative")
    if t < 0:
        raise StateError("t must be nonnegative")
    h = np.asarray(hamiltonian, dtype=complex)
    rho = rho_i.entries
    coherent = -1j * (h @ rho - rho @ h)
    diss = [k * dissipator(op, rho) for k, op in zip(kappas, ops)]
    noise_rate = coherent + sum(diss[:n_noise], np.zeros_like(rho))
    full_rate = noise_rate + sum(diss[n_noise:], np.zeros_like(rho))

    slack = 1e-10 + (t * np.linalg.norm(coherent, 2)) ** 2
    for rate in (full_rate, noise_rate):
        lo = np.linalg.eigvalsh(_herm(rho + t * rate))[0]
        if lo < -slack:
            raise StateError(f"t too large: short-time state has eigenvalue {lo:.3e}")

    _, pp = support_projectors(_herm(rho + t * noise_rate), rank_tol)
    theta0 = sum(
        t * np.trace(pp @ d).real for d in diss[n_noise:]
    )
    return float(theta0)


def haar_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR of a complex Ginibre matrix with phase fix."""
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    ph = np.diagonal(r) / np.abs(np.diagonal(r))
    return q * ph


def haar_unitaries(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Stack of ``n`` independent Haar unitaries, shape (n, d, d)."""
    z = (rng.standard_normal((n, d, d)) + 1j * rng.standard_normal((n, d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    diag = np.diagonal(r, axis1=1, axis2=2)
    return q * (diag / np.abs(diag))[:, None, :]


def simplex_sample(k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform point on the probability simplex, sorted nonincreasing."""
    e = rng.exponential(size=k)
    return np.sort(e / e.sum())[::-1]


def random_density_matrix(
    d: int, rng: np.random.Generator, rank: int | None = None
) -> DensityMatrix:
    """Hilbert-Schmidt (Ginibre) random state of the given rank."""
    k = d if rank is None else rank
    g = rng.standard_normal((d, k)) + 1j * rng.standard_normal((d, k))
    rho = g @ g.conj().T
    rho = rho / np.trace(rho).real
    return DensityMatrix(_herm(rho))


def random_scenario(
    d: int,
    r_n: int,
    r_s: int,
    theta0: float,
    lambda_gap: float | None = None,
    seed: int = 0,
) -> SensingScenario:
    """Scenario with orthogonal noise and signal supports in a Haar-random frame.

    Noise and signal eigenvalues are uniform on the simplex. With a spectral
    gap, the noise eigenvalues are mapped affinely onto the region above the
    gap floor ``(theta0 + lambda_gap)/(1 - theta0)``.
    """
    if r_n < 1 or r_s < 1 or r_n + r_s > d:
        raise StateError(f"need 1 <= r_n, 1 <= r_s and r_n + r_s <= d (got {r_n}, {r_s}, {d})")
    if not 0.0 < theta0 < 1.0:
        raise StateError(f"theta0 must lie in (0, 1), got {theta0}")
    rng = np.random.default_rng(seed)
    u = haar_unitary(d, rng)
    lam_n = simplex_sample(r_n, rng)
    if lambda_gap is not None:
        floor = (theta0 + lambda_gap) / (1.0 - theta0)
        max_rank = int(np.floor((1.0 - theta0) / (theta0 + lambda_gap) + 1e-12))
        if r_n > max_rank:
            raise StateError(
                f"infeasible: r_n={r_n} exceeds floor((1-theta0)/(theta0+lambda_gap))={max_rank}"
            )
        lam_n = floor + (1.0 - r_n * floor) * lam_n
    lam_s = simplex_sample(r_s, rng)
    vn = u[:, :r_n]
    vs = u[:, r_n : r_n + r_s]
    rho_n = _herm((vn * lam_n) @ vn.conj().T)
    rho_s = _herm((vs * lam_s) @ vs.conj().T)
    return SensingScenario(
        DensityMatrix(rho_n), DensityMatrix(rho_s), theta0, lambda_gap=lambda_gap, seed=seed
    )


def support_extending_scenario(
    d: int,
    r_n: int,
    theta0: float,
    seed: int = 0,
    overlap: float = 0.25,
    noise_floor: float = 0.5,
) -> SensingScenario:
    """Non-orthogonal scenario whose perturbation is dominated by its
    component outside the noise support.

    The signal is ``(1 - overlap) * sigma_perp + overlap * sigma_generic``
    with ``sigma_perp`` supported on ker(rho_n) and ``sigma_generic`` a full
    rank Ginibre state. Noise eigenvalues are kept at or above
    ``noise_floor / r_n``, which keeps the perturbation small relative to the
    noise spectrum.
    """
    if not 1 <= r_n < d:
        raise StateError("need 1 <= r_n < d for a support-extending scenario")
    if not 0.0 <= overlap < 1.0:
        raise StateError("overlap must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    u = haar_unitary(d, rng)
    lam_n = noise_floor / r_n + (1.0 - noise_floor) * simplex_sample(r_n, rng)
    mu = simplex_sample(d - r_n, rng)
    vn, vp = u[:, :r_n], u[:, r_n:]
    rho_n = _herm((vn * lam_n) @ vn.conj().T)
    sigma_perp = (vp * mu) @ vp.conj().T
    generic = random_density_matrix(d, rng).entries
    rho_s = _herm((1.0 - overlap) * sigma_perp + overlap * generic)
    return SensingScenario(DensityMatrix(rho_n), DensityMatrix(rho_s), theta0, seed=seed)
