"""Classical simulation of weak Schur sampling and the tests built on it.

The Young diagram produced by weak Schur sampling on M copies of a state is
distributed as the RSK shape of an i.i.d. word drawn from the state's
spectrum. Sampling therefore only needs the spectrum.
"""

from __future__ import annotations

import bisect
import enum
import itertools
import math
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .statemodel import Spectrum, haar_unitary


class Decision(str, enum.Enum):
    H0 = "H0"
    H1 = "H1"


class UnstableRankEstimate(ValueError):
    """Phase-1 rank estimates have no strict majority."""


@dataclass(frozen=True)
class YoungDiagram:
    rows: tuple[int, ...]

    def __post_init__(self):
        rows = tuple(int(r) for r in self.rows if r != 0)
        if any(r < 0 for r in rows):
            raise ValueError("rows must be positive")
        if any(a < b for a, b in zip(rows, rows[1:])):
            raise ValueError(f"rows must be nonincreasing, got {rows}")
        object.__setattr__(self, "rows", rows)

    @property
    def m(self) -> int:
        return sum(self.rows)

    def __len__(self) -> int:
        return len(self.rows)

    def __str__(self) -> str:
        return ";".join(str(r) for r in self.rows)


def rsk_shape(word: Sequence[int]) -> tuple[int, ...]:
    """Shape of the RSK insertion tableau of ``word`` (row insertion)."""
    rows: list[list[int]] = []
    for x in word:
        for row in rows:
            i = bisect.bisect_right(row, x)
            if i == len(row):
                row.append(x)
                break
            row[i], x = x, row[i]
        else:
            rows.append([x])
    return tuple(len(r) for r in rows)


def rsk_shapes(words: np.ndarray, alphabet: int) -> np.ndarray:
    """Batched RSK shapes for an array of words, shape (n, M) -> (n, alphabet).

    Each tableau row is stored as a vector of letter counts, which is all
    row insertion needs: the bumped entry is the smallest letter in the row
    strictly larger than the inserted one. Rows beyond ``alphabet`` can never
    be created, so the result is padded with zeros to that length.
    """
    words = np.asarray(words, dtype=np.int64)
    n, m = words.shape
    counts = np.zeros((n, alphabet, alphabet), dtype=np.int64)
    letters = np.arange(alphabet)
    rows_idx = np.arange(n)
    for step in range(m):
        x = words[:, step].copy()
        active = np.ones(n, dtype=bool)
        for row in range(alphabet):
            c = counts[:, row, :]
            bigger = (c > 0) & (letters[None, :] > x[:, None])
            has = bigger.any(axis=1)
            y = bigger.argmax(axis=1)
            counts[rows_idx[active], row, x[active]] += 1
            bump = active & has
            counts[rows_idx[bump], row, y[bump]] -= 1
            x = np.where(bump, y, x)
            active = bump
            if not active.any():
                break
    return counts.sum(axis=2)


def _letters(spectrum: Spectrum) -> np.ndarray:
    p = spectrum.nonzero()
    return p / p.sum()


def sample_rows(spectrum: Spectrum, m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` Schur-Weyl distributed diagrams as a padded (n, rank) array."""
    if m < 1:
        raise ValueError("M must be at least 1")
    p = _letters(spectrum)
    if p.size == 1:
        out = np.zeros((n, 1), dtype=np.int64)
        out[:, 0] = m
        return out
    words = rng.choice(p.size, size=(n, m), p=p)
    return rsk_shapes(words, p.size)


def sample_young_diagram(spectrum: Spectrum, m: int, seed: int) -> YoungDiagram:
    """One weak Schur sampling outcome on ``m`` copies, deterministic in ``seed``."""
    if m < 1:
        raise ValueError("M must be at least 1")
    rng = np.random.default_rng(seed)
    p = _letters(spectrum)
    word = rng.choice(p.size, size=m, p=p)
    return YoungDiagram(rsk_shape(word.tolist()))


def estimate_spectrum(diagram: YoungDiagram) -> Spectrum:
    """Empirical Young diagram estimator rows / M."""
    rows = np.asarray(diagram.rows, dtype=float)
    return Spectrum.from_values(rows / rows.sum())


def rank_test(diagram: YoungDiagram, r_n: int) -> Decision:
    """H1 iff the diagram has more than ``r_n`` rows (``r_n = 1``: purity test)."""
    if r_n < 1:
        raise ValueError("r_n must be at least 1")
    return Decision.H1 if len(diagram) > r_n else Decision.H0


def gap_band(theta0: float, lambda_gap: float, lo: float = 0.5, hi: float = 0.5):
    """Signal band [lo * theta0, theta0 + hi * lambda_gap) used by the gap test."""
    return lo * theta0, theta0 + hi * lambda_gap


def spectral_gap_test(
    diagram: YoungDiagram,
    theta0: float,
    lambda_gap: float,
    band: tuple[float, float] = (0.5, 0.5),
) -> Decision:
    """H1 iff some estimated eigenvalue falls in the signal band.

    Estimated eigenvalues at or above ``theta0 + lambda_gap/2`` are taken as
    noise and those below ``theta0/2`` as estimation dust. ``band`` scales the
    two edges.
    """
    if lambda_gap <= 0:
        raise ValueError("lambda_gap must be positive")
    lo, hi = gap_band(theta0, lambda_gap, *band)
    est = estimate_spectrum(diagram).values
    return Decision.H1 if np.any((est >= lo) & (est < hi)) else Decision.H0


def estimate_noise_rank(
    diagram: YoungDiagram, theta0: float, lambda_gap: float, hi: float = 0.5
) -> int:
    est = estimate_spectrum(diagram).values
    return int(np.sum(est >= theta0 + hi * lambda_gap))


def hybrid_gap_test(
    phase1: Sequence[YoungDiagram],
    phase2: YoungDiagram,
    theta0: float,
    lambda_gap: float,
) -> Decision:
    """Estimate the noise rank from phase-1 diagrams, then rank-test phase 2.

    Phase-1 diagrams vote on the number of estimated eigenvalues above
    ``theta0 + lambda_gap/2``; the vote needs a strict majority.
    """
    if not phase1:
        raise ValueError("phase 1 needs at least one diagram")
    votes = Counter(estimate_noise_rank(d, theta0, lambda_gap) for d in phase1)
    r_hat, count = votes.most_common(1)[0]
    if 2 * count <= len(phase1):
        raise UnstableRankEstimate(f"rank estimation unstable: votes {dict(votes)}")
    return Decision.H1 if len(phase2) > r_hat else Decision.H0


# --- brute-force Schur-Weyl oracle -------------------------------------------------


def partitions(m: int, max_parts: int | None = None) -> list[tuple[int, ...]]:
    """Partitions of ``m`` in reverse lexicographic order."""
    out: list[tuple[int, ...]] = []

    def rec(rem, cap, acc):
        if rem == 0:
            out.append(tuple(acc))
            return
        if max_parts is not None and len(acc) == max_parts:
            return
        for part in range(min(rem, cap), 0, -1):
            rec(rem - part, part, acc + [part])

    rec(m, m, [])
    return out


@lru_cache(maxsize=None)
def standard_tableaux_count(shape: tuple[int, ...]) -> int:
    """Number of standard Young tableaux (dimension of the S(M) irrep), by
    recursively removing corner boxes."""
    if sum(shape) == 0:
        return 1
    total = 0
    for i, r in enumerate(shape):
        below = shape[i + 1] if i + 1 < len(shape) else 0
        if r > below:
            smaller = list(shape)
            smaller[i] -= 1
            total += standard_tableaux_count(tuple(x for x in smaller if x))
    return total


def schur_polynomial(shape: tuple[int, ...], x: Sequence[float]) -> float:
    """s_shape(x) by brute-force enumeration of semistandard tableaux."""
    n = len(x)
    if len(shape) > n:
        return 0.0
    cells = [(i, j) for i, r in enumerate(shape) for j in range(r)]
    fill: dict[tuple[int, int], int] = {}
    total = 0.0

    def rec(k, weight):
        nonlocal total
        if k == len(cells):
            total += weight
            return
        i, j = cells[k]
        lo = 0
        if j > 0:
            lo = max(lo, fill[(i, j - 1)])
        if i > 0:
            lo = max(lo, fill[(i - 1, j)] + 1)
        for v in range(lo, n):
            fill[(i, j)] = v
            rec(k + 1, weight * x[v])
        fill.pop((i, j), None)

    rec(0, 1.0)
    return total


def schur_weyl_probabilities(spectrum, m: int) -> dict[tuple[int, ...], float]:
    """Exact Schur-Weyl distribution P(lambda) = dim(S(M) irrep) * s_lambda(spectrum).

    Brute force; intended for M <= 4 and small rank.
    """
    x = list(spectrum.values if isinstance(spectrum, Spectrum) else spectrum)
    return {
        lam: standard_tableaux_count(lam) * schur_polynomial(lam, x)
        for lam in partitions(m)
    }


# --- Schur basis and the twirl ---------------------------------------------------

# Characters of S(2) and S(3) keyed by cycle type.
_CHARACTERS: dict[int, dict[tuple[int, ...], dict[tuple[int, ...], int]]] = {
    2: {
        (2,): {(1, 1): 1, (2,): 1},
        (1, 1): {(1, 1): 1, (2,): -1},
    },
    3: {
        (3,): {(1, 1, 1): 1, (2, 1): 1, (3,): 1},
        (2, 1): {(1, 1, 1): 2, (2, 1): 0, (3,): -1},
        (1, 1, 1): {(1, 1, 1): 1, (2, 1): -1, (3,): 1},
    },
}
SUPPORTED = {(m, d) for m in (2, 3) for d in (2, 3)}


def cycle_type(perm: Sequence[int]) -> tuple[int, ...]:
    seen, lengths = set(), []
    for start in range(len(perm)):
        if start in seen:
            continue
        n, j = 0, start
        while j not in seen:
            seen.add(j)
            j = perm[j]
            n += 1
        lengths.append(n)
    return tuple(sorted(lengths, reverse=True))


def permutation_operator(perm: Sequence[int], d: int) -> np.ndarray:
    """Operator sending tensor factor k to position perm[k] on (C^d)^{(x)M}."""
    m = len(perm)
    dim = d**m
    idx = np.arange(dim).reshape((d,) * m)
    # new axis order: output factor perm[k] takes input factor k
    inv = np.argsort(perm)
    permuted = np.transpose(idx, inv).ravel()
    op = np.zeros((dim, dim))
    op[np.arange(dim), permuted] = 1.0
    return op


def permutation_operators(m: int, d: int) -> list[tuple[tuple[int, ...], np.ndarray]]:
    return [(p, permutation_operator(p, d)) for p in itertools.permutations(range(m))]


@dataclass(frozen=True, eq=False)
class SchurBasis:
    m: int
    d: int
    projectors: tuple[tuple[tuple[int, ...], np.ndarray], ...]

    def partitions(self) -> list[tuple[int, ...]]:
        return [lam for lam, _ in self.projectors]

    def projector(self, lam: tuple[int, ...]) -> np.ndarray:
        for key, p in self.projectors:
            if key == lam:
                return p
        raise KeyError(lam)


def build_schur_basis(m: int, d: int) -> SchurBasis:
    """Isotypic projectors of the S(M) x U(d) action on (C^d)^{(x)M}.

    Built as central idempotents (dim/M!) sum_pi chi(pi) U_pi; partitions with
    more than ``d`` rows give the zero operator and are dropped.
    """
    if (m, d) not in SUPPORTED:
        raise ValueError(f"unsupported (M, d) = ({m}, {d}); supported: {sorted(SUPPORTED)}")
    ops = permutation_operators(m, d)
    out = []
    for lam, chi in _CHARACTERS[m].items():
        dim_lam = chi[(1,) * m]
        proj = sum(chi[cycle_type(p)] * u for p, u in ops) * dim_lam / math.factorial(m)
        if np.trace(proj).real > 0.5:
            out.append((lam, proj.astype(complex)))
    return SchurBasis(m, d, tuple(out))


@dataclass(frozen=True, eq=False)
class TwirlResult:
    twirled: np.ndarray
    coeffs: dict[tuple[int, ...], float]
    residual: float


def twirl(op: np.ndarray, m: int, d: int, tol: float = 1e-8) -> TwirlResult:
    """Average ``op`` over copy permutations and over U^{(x)M}, U Haar.

    The Haar average is the orthogonal projection (trace inner product) onto
    the span of permutation operators. The result is expanded as
    sum_lambda c_lambda Pi_lambda; ``residual`` is the normalized Frobenius
    distance from that span.
    """
    basis = build_schur_basis(m, d)
    op = np.asarray(op, dtype=complex)
    dim = d**m
    if op.shape != (dim, dim):
        raise ValueError(f"operator must be {dim}x{dim}")
    if np.max(np.abs(op - op.conj().T)) > tol:
        raise ValueError("operator must be Hermitian")
    w = np.linalg.eigvalsh(0.5 * (op + op.conj().T))
    if w[0] < -tol or w[-1] > 1 + tol:
        raise ValueError("operator must satisfy 0 <= op <= I")

    perms = [u for _, u in permutation_operators(m, d)]
    avg = sum(u.T @ op @ u for u in perms) / len(perms)

    gram = np.array([[np.trace(a.T @ b) for b in perms] for a in perms], dtype=float)
    rhs = np.array([np.trace(a.T @ avg) for a in perms])
    c = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    twirled = sum(ci * u for ci, u in zip(c, perms))
    twirled = 0.5 * (twirled + twirled.conj().T)

    coeffs = {}
    recon = np.zeros_like(twirled)
    for lam, proj in basis.projectors:
        cl = float(np.trace(twirled @ proj).real / np.trace(proj).real)
        coeffs[lam] = cl
        recon = recon + cl * proj
    norm = np.linalg.norm(twirled)
    residual = float(np.linalg.norm(twirled - recon) / norm) if norm > 0 else 0.0
    return TwirlResult(twirled, coeffs, residual)


def random_povm_element(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Random 0 <= E <= I: Haar eigenbasis with uniform eigenvalues in [0, 1]."""
    u = haar_unitary(dim, rng)
    return (u * rng.uniform(0, 1, size=dim)) @ u.conj().T
