"""
Ground-state NV spin Hamiltonian with Stark, Zeeman, hyperfine and quadrupole terms.

Matrices are in angular-frequency units (rad/s). The basis is the product
basis |m_s> ⊗ |m_I> with both quantum numbers ordered (+1, 0, -1); the
electronic-only Hamiltonian uses |m_s> alone in the same order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.optimize import linear_sum_assignment

from .nvcore import CONSTANTS, FieldVector, NVParameters, PhysicsDomainError

TWO_PI = 2.0 * math.pi
M_VALUES = (1, 0, -1)


class NonHermitianError(ValueError):
    pass


class StrongMixingError(PhysicsDomainError):
    pass


def _spin1_matrices():
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    # <m+1|S+|m> = sqrt(2) for S=1
    sp = np.sqrt(2.0) * np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]], dtype=complex)
    sm = sp.conj().T
    sx = (sp + sm) / 2
    sy = (sp - sm) / 2j
    return sx, sy, sz


@dataclass(frozen=True)
class SpinMatrices:
    """Spin-1 operators (ħ = 1) for the electron (S) and the ¹⁴N nucleus (I)."""

    Sx: np.ndarray
    Sy: np.ndarray
    Sz: np.ndarray
    Ix: np.ndarray
    Iy: np.ndarray
    Iz: np.ndarray
    identity3: np.ndarray

    @classmethod
    def build(cls) -> SpinMatrices:
        sx, sy, sz = _spin1_matrices()
        ix, iy, iz = _spin1_matrices()
        return cls(sx, sy, sz, ix, iy, iz, np.eye(3, dtype=complex))


SPIN = SpinMatrices.build()


@dataclass(frozen=True)
class HamiltonianMatrix:
    entries: np.ndarray

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def labels(self) -> list[tuple[int, int | None]]:
        """Basis labels (m_s, m_I); m_I is None for the electronic-only matrix."""
        if self.dim == 3:
            return [(ms, None) for ms in M_VALUES]
        return [(ms, mi) for ms in M_VALUES for mi in M_VALUES]


def build_electronic_hamiltonian(p: NVParameters, E: FieldVector, B: FieldVector) -> HamiltonianMatrix:
    s = SPIN
    one = s.identity3
    gamma = p.g_e * CONSTANTS.mu_B / CONSTANTS.hbar  # rad s^-1 T^-1
    axial = TWO_PI * (p.D_gs_over_h + p.d_par_over_h * E.z)
    h = axial * (s.Sz @ s.Sz - (2.0 / 3.0) * one)
    h = h + TWO_PI * p.d_perp_over_h * (
        E.x * (s.Sy @ s.Sy - s.Sx @ s.Sx) + E.y * (s.Sx @ s.Sy + s.Sy @ s.Sx)
    )
    h = h + gamma * (B.x * s.Sx + B.y * s.Sy + B.z * s.Sz)
    return HamiltonianMatrix(h)


def build_full_hamiltonian(p: NVParameters, E: FieldVector, B: FieldVector) -> HamiltonianMatrix:
    s = SPIN
    one = s.identity3
    h_el = build_electronic_hamiltonian(p, E, B).entries
    hf = TWO_PI * (
        p.A_par_over_h * np.kron(s.Sz, s.Iz)
        + p.A_perp_over_h * (np.kron(s.Sx, s.Ix) + np.kron(s.Sy, s.Iy))
        + p.P_over_h * np.kron(one, s.Iz @ s.Iz)
    )
    return HamiltonianMatrix(np.kron(h_el, one) + hf)


@dataclass(frozen=True)
class EigenSystem:
    eigenvalues: np.ndarray  # rad/s, ascending
    eigenvectors: np.ndarray  # columns
    basis_labels: tuple
    labels: tuple | None = None

    @property
    def frequencies_hz(self) -> np.ndarray:
        return self.eigenvalues / TWO_PI

    def __iter__(self) -> Iterator:
        return iter(zip(self.eigenvalues, self.eigenvectors.T))


def eigensolve(H: HamiltonianMatrix | np.ndarray, *, label: bool | None = None) -> EigenSystem:
    """Full Hermitian eigendecomposition (LAPACK via numpy), ascending eigenvalues.

    Raises NonHermitianError when max|H - H†| exceeds 1e-9·max|H|. States are
    labelled by default only for HamiltonianMatrix input.
    """
    if isinstance(H, HamiltonianMatrix):
        m = H.entries
        basis = tuple(H.labels())
        label = True if label is None else label
    else:
        m = np.asarray(H, dtype=complex)
        basis = tuple(range(m.shape[0]))
        label = bool(label)
        if label and m.shape[0] in (3, 9):
            basis = tuple(HamiltonianMatrix(m).labels())
    scale = np.max(np.abs(m)) if m.size else 0.0
    asym = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
    if asym > 1e-9 * max(scale, np.finfo(float).tiny):
        raise NonHermitianError(f"matrix is not Hermitian: max|H - H^dagger| = {asym:.3e} (max|H| = {scale:.3e})")
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    es = EigenSystem(w, v, basis)
    return label_states(es) if label else es


def label_states(es: EigenSystem, min_overlap: float = 0.4) -> EigenSystem:
    """Assign each eigenstate a distinct basis label by maximum |overlap|².

    Greedy by descending overlap; if the greedy pass collides the assignment
    is repaired with an optimal (Hungarian) matching on the overlap matrix.
    """
    weights = np.abs(es.eigenvectors) ** 2  # weights[basis, state]
    n = weights.shape[1]
    best = weights.max(axis=0)
    if np.any(best < min_overlap):
        k = int(np.argmin(best))
        raise StrongMixingError(
            f"state {k} has maximum basis overlap {best[k]:.3f} < {min_overlap}; fields outside the supported regime"
        )
    assignment = np.full(n, -1)
    used: set[int] = set()
    collided = False
    for k in np.argsort(-best, kind="stable"):
        b = int(np.argmax(weights[:, k]))
        if b in used:
            collided = True
            break
        assignment[k] = b
        used.add(b)
    if collided:
        rows, cols = linear_sum_assignment(-weights)  # rows: basis, cols: state
        assignment = np.empty(n, dtype=int)
        assignment[cols] = rows
    labels = tuple(es.basis_labels[int(b)] for b in assignment)
    return EigenSystem(es.eigenvalues, es.eigenvectors, es.basis_labels, labels)


@dataclass(frozen=True)
class Transition:
    frequency: float  # Hz
    branch: str  # "+" or "-"
    m_I: int


@dataclass(frozen=True)
class ResonanceSet:
    transitions: tuple[Transition, ...]

    def get(self, branch: str, m_I: int) -> float:
        for t in self.transitions:
            if t.branch == branch and t.m_I == m_I:
                return t.frequency
        raise KeyError((branch, m_I))

    def sorted_frequencies(self) -> np.ndarray:
        return np.sort([t.frequency for t in self.transitions])

    def branch_frequencies(self, branch: str) -> np.ndarray:
        return np.sort([t.frequency for t in self.transitions if t.branch == branch])

    def __len__(self) -> int:
        return len(self.transitions)


def sector_assignment(es: EigenSystem) -> tuple[dict[int, int], dict[int, tuple[int, int]]]:
    """Split the nine states of a 9x9 eigensystem into nuclear sectors.

    Returns ({m_I: lower state}, {m_I: (lower upper state, higher upper state)}).
    The three states with the most m_s=0 weight are the lower levels. Sector
    membership uses the m_I weight summed over m_s, which stays close to 1
    even when m_s=±1 are fully mixed. Degenerate states that get mixed
    arbitrarily share an energy, so frequencies built from the result do not
    depend on how the tie is broken.
    """
    amp2 = (np.abs(es.eigenvectors) ** 2).reshape(3, 3, -1)  # [ms, mi, state]
    w0 = amp2[M_VALUES.index(0)].sum(axis=0)
    nuc = amp2.sum(axis=0)  # [mi, state]
    lower = np.sort(np.argsort(-w0, kind="stable")[:3])
    if np.min(w0[lower]) < 0.5:
        raise StrongMixingError("m_s=0 states are not separable from m_s=±1")
    upper = np.array([k for k in range(9) if k not in set(lower)])
    rows, cols = linear_sum_assignment(-nuc[:, lower])
    low = {M_VALUES[r]: int(lower[c]) for r, c in zip(rows, cols)}
    rows, cols = linear_sum_assignment(-np.repeat(nuc[:, upper], 2, axis=0))
    up: dict[int, list[int]] = {mi: [] for mi in M_VALUES}
    for r, c in zip(rows, cols):
        up[M_VALUES[r // 2]].append(int(upper[c]))
    pairs = {mi: tuple(sorted(ks, key=lambda k: es.eigenvalues[k])) for mi, ks in up.items()}
    return low, pairs


def resonance_frequencies(p: NVParameters, E: FieldVector, B: FieldVector) -> ResonanceSet:
    """Six allowed m_s=0 -> upper transitions, one per (branch, m_I).

    Within each nuclear sector the higher upper level is the "+" branch,
    which stays well defined when a transverse electric field mixes m_s=±1
    completely.
    """
    es = eigensolve(build_full_hamiltonian(p, E, B), label=False)
    low, pairs = sector_assignment(es)
    out = []
    for mi in M_VALUES:
        lam0 = es.eigenvalues[low[mi]]
        lo, hi = pairs[mi]
        out.append(Transition((es.eigenvalues[hi] - lam0) / TWO_PI, "+", mi))
        out.append(Transition((es.eigenvalues[lo] - lam0) / TWO_PI, "-", mi))
    return ResonanceSet(tuple(out))


def effective_two_level_splitting(
    p: NVParameters, E_perp: float, B_z: float, E_z: float = 0.0
) -> tuple[float, float]:
    """(f_plus, f_minus) in Hz for the m_I=0 pair, ignoring the nuclear spin."""
    if E_perp < 0:
        raise ValueError("E_perp must be >= 0")
    centre = p.D_gs_over_h + p.d_par_over_h * E_z
    half = math.hypot(p.gamma_hz_per_t * B_z, p.d_perp_over_h * E_perp)
    return centre + half, centre - half


def mixing_angle(p: NVParameters, E_perp: float, B_z: float) -> float:
    """tan θ = d⊥E⊥ / (g_e μ_B B_z)."""
    stark = p.d_perp_over_h * E_perp
    zeeman = p.gamma_hz_per_t * B_z
    if stark == 0.0 and zeeman == 0.0:
        raise PhysicsDomainError("mixing angle undefined when both E_perp and B_z vanish")
    theta = math.atan2(stark, zeeman)
    return theta % math.pi


def two_level_eigenstates(theta: float, phi_E: float) -> dict[str, np.ndarray]:
    """|S0>, |S+>, |S->  in the (+1, 0, -1) basis for mixing angle θ and field azimuth φ_E."""
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    ep, em = np.exp(0.5j * phi_E), np.exp(-0.5j * phi_E)
    return {
        "0": np.array([0, 1, 0], dtype=complex),
        "+": np.array([ep * c, 0, -em * s], dtype=complex),
        "-": np.array([ep * s, 0, em * c], dtype=complex),
    }


def transition_rate(theta: float, phi_E: float, branch: str) -> float:
    """Relative microwave transition rate 0 -> ± for a drive along x.

    Closed form (1 ∓ sinθ cosφ_E)/2, i.e. |<S±|S_x|S0>|²; the two branches sum to 1.
    """
    if branch not in ("+", "-"):
        raise ValueError("branch must be '+' or '-'")
    sign = 1.0 if branch == "+" else -1.0
    return 0.5 * (1.0 - sign * math.sin(theta) * math.cos(phi_E))


def transition_rate_matrix_element(theta: float, phi_E: float, branch: str) -> float:
    """|<S±|S_x|S0>|² evaluated directly from the eigenvectors."""
    st = two_level_eigenstates(theta, phi_E)
    amp = st[branch].conj() @ SPIN.Sx @ st["0"]
    return float(abs(amp) ** 2)
