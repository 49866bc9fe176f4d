"""Transfer matrices for the walk eigenvalue recursion, and norm scans.

A solution of U psi = z psi satisfies a two-term recursion in the vector
v(n) = [psi_{n+1}^+, psi_n^-], propagated by a one-step 2x2 matrix that
depends on the local coin angle and on z.  The matrices are unimodular, so
products over windows control growth and decay of generalized
eigenfunctions.  At z = i the four-site products over the blocks '0110'
and '1001' collapse to the identity, which pins all products over
Thue-Morse windows to a finite set; the scans below measure that.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .substitution import (
    LEGALITY_SEARCH_FACTOR,
    THUE_MORSE,
    CoinAngles,
    SubshiftWindow,
    SubstitutionRule,
    angle_at,
    fixed_point_prefix,
    sequence_window,
)
from .walk import WalkState

COMMUTING_POINT = 1j  # all four-site block products equal the identity here


@dataclass(frozen=True)
class SpectralParameter:
    """Nonzero spectral point z, optionally tracked as z = e^{i tau + eta}."""

    z: complex
    tau: float | None = None
    eta: float | None = None

    def __post_init__(self) -> None:
        if self.z == 0:
            raise ValueError("spectral parameter must be nonzero")

    @classmethod
    def from_phase(cls, tau: float, eta: float) -> "SpectralParameter":
        if eta <= 0:
            raise ValueError("eta must be positive (point outside the unit circle)")
        return cls(z=cmath.exp(complex(eta, tau)), tau=tau, eta=eta)


def _as_complex(z: complex | SpectralParameter) -> complex:
    zc = z.z if isinstance(z, SpectralParameter) else complex(z)
    if zc == 0:
        raise ValueError("spectral parameter must be nonzero")
    return zc


def one_step_matrix(angle: float, z: complex | SpectralParameter) -> np.ndarray:
    """One-step matrix sec(angle) * [[1/z, -sin], [-sin, z]]; determinant 1."""
    if not 0.0 < angle < math.pi / 2:
        raise ValueError(f"angle must lie strictly in (0, pi/2), got {angle}")
    zc = _as_complex(z)
    sec = 1.0 / math.cos(angle)
    s = math.sin(angle)
    return sec * np.array([[1.0 / zc, -s], [-s, zc]], dtype=np.complex128)


def unimodular_inverse(T: np.ndarray) -> np.ndarray:
    """Inverse via the 2x2 adjugate (exact for the computed determinant)."""
    det = T[0, 0] * T[1, 1] - T[0, 1] * T[1, 0]
    return np.array([[T[1, 1], -T[0, 1]], [-T[1, 0], T[0, 0]]], dtype=np.complex128) / det


def product(window: SubshiftWindow, n: int, m: int, angles: CoinAngles,
            z: complex | SpectralParameter) -> np.ndarray:
    """Ordered product over sites [m, n): highest site index applied last.

    Satisfies the cocycle identity T(n,m) T(m,k) = T(n,k); for n < m the
    result is the inverse of T(m,n).
    """
    zc = _as_complex(z)
    if n == m:
        return np.eye(2, dtype=np.complex128)
    lo, hi = min(n, m), max(n, m)
    if not (window.n_min <= lo and hi - 1 <= window.n_max):
        raise ValueError(f"sites [{lo}, {hi - 1}] not covered by window "
                         f"[{window.n_min}, {window.n_max}]")
    T = np.eye(2, dtype=np.complex128)
    for k in range(lo, hi):
        T = one_step_matrix(angle_at(window, k, angles), zc) @ T
    if n < m:
        T = unimodular_inverse(T)
    return T


def operator_norm(T: np.ndarray) -> float:
    """Largest singular value of a 2x2 matrix, in closed form."""
    f = float(np.sum(np.abs(T) ** 2))
    d = abs(T[0, 0] * T[1, 1] - T[0, 1] * T[1, 0]) ** 2
    disc = math.sqrt(max(f * f - 4.0 * d, 0.0))
    return math.sqrt((f + disc) / 2.0)


def check_commutation_identity(angles: CoinAngles) -> dict[str, float]:
    """Max-entry deviation from the identity of both four-site block products
    at z = i (the product over '0110' and the product over '1001')."""
    at = one_step_matrix(angles.theta, COMMUTING_POINT)
    af = one_step_matrix(angles.phi, COMMUTING_POINT)
    eye = np.eye(2)
    # product over a block reads its symbols from the highest site down
    prod_0110 = af @ at @ at @ af
    prod_1001 = at @ af @ af @ at
    return {
        "residual_0110": float(np.abs(prod_0110 - eye).max()),
        "residual_1001": float(np.abs(prod_1001 - eye).max()),
    }


# ---------------------------------------------------------------------------
# norm scans
#
# Products over a window are accumulated as prefixes P(r) = T(r, 0); then
# T(n, m) = P(n) P(m)^{-1} and, with G = P^* P,
#     ||T(n, m)||_F^2 = tr(G(n) G(m)^{-1}),
# a real 4-vector dot product.  All one-step matrices are unimodular, so the
# largest singular value is a monotone function of the Frobenius norm and the
# max over all O(span^2) pairs reduces to a masked max of one dense matrix
# product.  Determinant drift of the computed prefixes is pure rounding
# (<= span * eps) and is far below every reported tolerance.

def _prefix_products(mats: np.ndarray) -> np.ndarray:
    """Cumulative products P[k] = mats[k-1] ... mats[0], P[0] = I."""
    out = np.empty((len(mats) + 1, 2, 2), dtype=np.complex128)
    out[0] = np.eye(2)
    acc = out[0]
    for k, m in enumerate(mats):
        acc = m @ acc
        out[k + 1] = acc
    return out


def _gh_vectors(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-prefix 4-vectors g, h with tr(G(n) G(m)^{-1}) = g(n) . h(m)."""
    G = np.einsum("...ji,...jl->...il", P.conj(), P)
    g00 = G[..., 0, 0].real
    g11 = G[..., 1, 1].real
    g01 = G[..., 0, 1]
    detg = g00 * g11 - np.abs(g01) ** 2
    rt2 = math.sqrt(2.0)
    g = np.stack([g00, g11, rt2 * g01.real, rt2 * g01.imag], axis=-1)
    h = np.stack([g11 / detg, g00 / detg,
                  rt2 * (-g01.real) / detg, rt2 * (-g01.imag) / detg], axis=-1)
    return g, h


def _sigma_from_frobenius_sq(f: float) -> float:
    disc = math.sqrt(max(f * f - 4.0, 0.0))
    return math.sqrt(max((f + disc) / 2.0, 1.0))


def _max_pair_norm(P: np.ndarray, chunk: int = 256) -> float:
    """Max of ||P[n] P[m]^{-1}|| over all pairs n > m for one prefix array."""
    K = len(P)
    if K < 2:
        return 1.0
    g, h = _gh_vectors(P)
    best_f = 2.0
    for r0 in range(1, K, chunk):
        r1 = min(r0 + chunk, K)
        rows = np.arange(r0, r1)
        F = g[rows] @ h[:r1].T
        mask = np.arange(r1)[None, :] < rows[:, None]
        best_f = max(best_f, float(np.where(mask, F, 2.0).max()))
    return _sigma_from_frobenius_sq(best_f)


def _max_pair_norm_batch(P: np.ndarray) -> float:
    """Batched variant for P of shape (patterns, K, 2, 2) with small K."""
    K = P.shape[1]
    if K < 2:
        return 1.0
    g, h = _gh_vectors(P)
    F = np.matmul(g, h.transpose(0, 2, 1))
    mask = np.tril(np.ones((K, K), dtype=bool), -1)
    best_f = max(2.0, float(np.where(mask[None, :, :], F, 2.0).max()))
    return _sigma_from_frobenius_sq(best_f)


def _symbol_matrices(angles: CoinAngles, z: complex) -> dict[str, np.ndarray]:
    return {"0": one_step_matrix(angles.phi, z), "1": one_step_matrix(angles.theta, z)}


def uniform_bound_scan(angles: CoinAngles, max_span: int,
                       offsets: Iterable[int] = tuple(range(8)),
                       rule: SubstitutionRule = THUE_MORSE) -> float:
    """Max of ||T(n, m; i)|| over 0 <= m < n <= max_span and the given window
    offsets.  Block cancellation at z = i makes this max stabilize once the
    span covers a couple of four-site blocks."""
    if max_span < 0:
        raise ValueError("max_span must be nonnegative")
    if max_span == 0:
        return 1.0
    mats = _symbol_matrices(angles, COMMUTING_POINT)
    best = 1.0
    for j in offsets:
        window = sequence_window(j, 0, max_span - 1, rule=rule)
        steps = np.stack([mats[ch] for ch in window.symbols])
        best = max(best, _max_pair_norm(_prefix_products(steps)))
    return best


@dataclass(frozen=True)
class WindowBoundReport:
    """Result of a perturbed scan around z = i at window scale 1/epsilon."""

    epsilon: float
    max_norm: float
    n_z_samples: int
    offsets: tuple[int, ...]
    max_span: int

    def to_json(self) -> dict:
        return {"epsilon": self.epsilon, "max_norm": self.max_norm,
                "n_z_samples": self.n_z_samples, "offsets": list(self.offsets),
                "max_span": self.max_span}


def _distinct_patterns(offsets: Sequence[int], span: int,
                       rule: SubstitutionRule) -> list[str]:
    prefix = fixed_point_prefix(rule, max(offsets) + span + 1)
    return sorted({prefix[j: j + span] for j in offsets})


def window_bound_scan(angles: CoinAngles, eps: float, z_samples: int = 16,
                      offsets: Iterable[int] | None = None,
                      rule: SubstitutionRule = THUE_MORSE,
                      n_radii: int = 5) -> WindowBoundReport:
    """Max transfer norm over a z-grid in the disk |z - i| < eps and all
    products with span at most 1/eps.

    The z-grid is the center plus ``n_radii`` concentric rings (radius
    midpoints of equal-width annuli) with ``z_samples`` angles each.  When
    ``offsets`` is omitted, the scan saturates over window positions: it uses
    every start position within the linear-recurrence margin, so every legal
    factor of the scanned length appears.  Sparse offset sets undersample the
    position quantifier and can distort comparisons between eps values.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    if z_samples < 1:
        raise ValueError("z_samples must be >= 1")
    span = int(math.floor(1.0 / eps))
    if offsets is None:
        offsets = range(LEGALITY_SEARCH_FACTOR * span)
    offsets = tuple(offsets)
    patterns = _distinct_patterns(offsets, span, rule)
    mats0 = np.empty((len(patterns), span), dtype=np.uint8)
    for i, pat in enumerate(patterns):
        mats0[i] = np.frombuffer(pat.encode(), dtype=np.uint8) - ord("0")

    zs = [complex(COMMUTING_POINT)]
    for k in range(1, n_radii + 1):
        r = (2 * k - 1) / (2 * n_radii) * eps
        for m_i in range(z_samples):
            zs.append(COMMUTING_POINT + r * cmath.exp(2j * math.pi * m_i / z_samples))

    best = 1.0
    eye = np.eye(2, dtype=np.complex128)
    for z in zs:
        mats = _symbol_matrices(angles, z)
        P = np.empty((len(patterns), span + 1, 2, 2), dtype=np.complex128)
        P[:, 0] = eye
        for k in range(span):
            sel0 = mats0[:, k] == 0
            P[sel0, k + 1] = np.einsum("ij,njk->nik", mats["0"], P[sel0, k])
            P[~sel0, k + 1] = np.einsum("ij,njk->nik", mats["1"], P[~sel0, k])
        best = max(best, _max_pair_norm_batch(P))
    return WindowBoundReport(epsilon=eps, max_norm=best, n_z_samples=z_samples,
                             offsets=offsets, max_span=span)


def verify_eigenrecursion(state: WalkState, window: SubshiftWindow, angles: CoinAngles,
                          z: complex | SpectralParameter,
                          excluded: Iterable[int] = ()) -> float:
    """Max residual of the one-step recursion over the evaluable interior sites.

    At each site n the recursion maps [psi_n^+, psi_{n-1}^-] to
    [psi_{n+1}^+, psi_n^-]; sites in ``excluded`` are skipped (a resolvent
    vector with a source at the origin violates the recursion at n = -1 only).
    """
    zc = _as_complex(z)
    excluded = set(excluded)
    lo = max(state.n_min + 1, window.n_min)
    hi = min(state.n_max - 1, window.n_max)
    sites = [n for n in range(lo, hi + 1) if n not in excluded]
    if not sites:
        raise ValueError("no evaluable sites: state/window overlap too small")
    idx = np.array(sites) - state.n_min
    gam = np.array([angle_at(window, n, angles) for n in sites])
    sec = 1.0 / np.cos(gam)
    sn = np.sin(gam)
    psi_p = state.plus[idx]
    psi_p_up = state.plus[idx + 1]
    psi_m = state.minus[idx]
    psi_m_dn = state.minus[idx - 1]
    res_top = psi_p_up - sec * (psi_p / zc - sn * psi_m_dn)
    res_bot = psi_m - sec * (-sn * psi_p + zc * psi_m_dn)
    return float(np.sqrt(np.abs(res_top) ** 2 + np.abs(res_bot) ** 2).max())


def propagate_solution(window: SubshiftWindow, angles: CoinAngles,
                       z: complex | SpectralParameter, n_lo: int, n_hi: int,
                       seed: tuple[complex, complex] = (1.0, 0.0)) -> WalkState:
    """Build a recursion solution on [n_lo, n_hi] by forward propagation from
    the seed [psi_{n_lo}^+, psi_{n_lo - 1}^-]."""
    zc = _as_complex(z)
    if n_hi < n_lo:
        raise ValueError("empty propagation range")
    v = np.array(seed, dtype=np.complex128)
    width = n_hi - n_lo + 1
    plus = np.empty(width, dtype=np.complex128)
    minus = np.empty(width, dtype=np.complex128)
    for i, n in enumerate(range(n_lo, n_hi + 1)):
        plus[i] = v[0]
        v = one_step_matrix(angle_at(window, n, angles), zc) @ v
        minus[i] = v[1]
    return WalkState(n_min=n_lo, plus=plus, minus=minus)
