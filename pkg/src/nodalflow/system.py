"""Coefficients of the coupled cubic system and its cyclic block symmetry."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SYM_TOL = 1e-14


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    return all(n % d for d in range(2, int(n ** 0.5) + 1))


@dataclass(frozen=True, eq=False)
class SystemParams:
    """``-u_j'' + lam_j u_j = sum_i coupling[i, j] u_i^2 u_j`` with ``coupling[j, j] = mu_j``."""

    lam: np.ndarray
    coupling: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float).ravel()
        B = np.array(self.coupling, dtype=float)
        if B.ndim != 2 or B.shape != (lam.size, lam.size):
            raise ValueError(f"coupling must be {lam.size}x{lam.size}, got {B.shape}")
        if np.any(lam <= 0):
            raise ValueError("lambda_j must be positive")
        if np.any(np.diag(B) < 0):
            # mu = 0 is allowed for linear checks; validate() reports it under (B)
            raise ValueError("mu_j (coupling diagonal) must be non-negative")
        scale = max(1.0, float(np.abs(B).max()))
        if np.abs(B - B.T).max() > SYM_TOL * scale:
            raise ValueError("coupling matrix must be symmetric")
        lam.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "coupling", B)

    @property
    def n_comp(self) -> int:
        return self.lam.size

    @property
    def mu(self) -> np.ndarray:
        return np.diag(self.coupling)

    @property
    def offdiag(self) -> np.ndarray:
        """Coupling with the diagonal zeroed."""
        B = self.coupling.copy()
        np.fill_diagonal(B, 0.0)
        return B

    @classmethod
    def uniform(cls, n_comp: int, lam: float, mu: float, beta: float) -> "SystemParams":
        B = np.full((n_comp, n_comp), float(beta))
        np.fill_diagonal(B, mu)
        return cls(np.full(n_comp, float(lam)), B)

    def is_uniform(self) -> bool:
        off = self.coupling[~np.eye(self.n_comp, dtype=bool)]
        return (np.ptp(self.lam) == 0.0 and np.ptp(self.mu) == 0.0
                and (off.size == 0 or np.ptp(off) == 0.0))


@dataclass(frozen=True)
class BlockStructure:
    """``N = p*B`` components in ``B`` consecutive blocks of ``p``.

    ``p = 1`` is accepted as the trivial group (scalar problems and systems
    without symmetry); then sigma is the identity.
    """

    p: int
    prescription: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "prescription", tuple(int(x) for x in self.prescription))
        if self.p != 1 and not _is_prime(self.p):
            raise ValueError(f"p must be prime (or 1 for the trivial group), got {self.p}")
        if not self.prescription:
            raise ValueError("prescription must list one nodal number per block")
        if any(x < 0 for x in self.prescription):
            raise ValueError("prescribed nodal numbers must be non-negative")

    @property
    def blocks(self) -> int:
        return len(self.prescription)

    @property
    def n_comp(self) -> int:
        return self.p * self.blocks

    def component_prescription(self) -> np.ndarray:
        """Target nodal number for every component."""
        return np.repeat(np.array(self.prescription, dtype=int), self.p)

    def check(self, n_comp: int) -> None:
        if self.n_comp != n_comp:
            raise ValueError(f"p*B = {self.n_comp} does not match N = {n_comp}")

    def permutation(self) -> np.ndarray:
        """Index array ``perm`` with ``(sigma U)[j] = U[perm[j]]``."""
        idx = np.arange(self.n_comp).reshape(self.blocks, self.p)
        return np.roll(idx, -1, axis=1).ravel()


@dataclass
class AssumptionReport:
    holds_A: bool
    holds_B: bool
    holds_C: bool
    holds_D: bool
    holds_uniform_bound: bool
    uniform: bool
    margins: dict = field(default_factory=dict)

    @property
    def all_hold(self) -> bool:
        return self.holds_A and self.holds_B and self.holds_C and self.holds_D

    def passes(self) -> bool:
        """Exit criterion: (A)-(D), or the uniform-case beta bound."""
        return self.all_hold or (self.uniform and self.holds_uniform_bound)

    def table(self) -> str:
        rows = [("A", "lambda constant on blocks", self.holds_A),
                ("B", "offdiagonal beta <= 0, mu > 0", self.holds_B),
                ("C", "coupling invariant under block shifts", self.holds_C),
                ("D", "mu_j + sum of in-block beta <= 0", self.holds_D),
                ("uniform_bound", "uniform beta <= -mu/(p-1)", self.holds_uniform_bound)]
        lines = [f"{'cond':<15}{'description':<40}{'holds':<7}margin"]
        for key, desc, ok in rows:
            margin = self.margins.get(key)
            mtxt = "n/a" if margin is None else f"{margin + 0.0:.6g}"
            lines.append(f"{key:<15}{desc:<40}{str(ok):<7}{mtxt}")
        return "\n".join(lines)


def validate(params: SystemParams, blocks: BlockStructure) -> AssumptionReport:
    """Check the block hypotheses (A)-(D) and the uniform beta bound.

    Margins are slacks: non-negative iff the condition holds.
    """
    blocks.check(params.n_comp)
    p, nb = blocks.p, blocks.blocks
    lam, B, mu = params.lam, params.coupling, params.mu
    margins = {}

    # (A): spread of lambda inside each block
    spread = max(float(np.ptp(lam[b * p:(b + 1) * p])) for b in range(nb))
    margins["A"] = -spread
    holds_A = spread == 0.0

    off = params.offdiag
    mask = ~np.eye(params.n_comp, dtype=bool)
    worst_off = float(off[mask].max()) if params.n_comp > 1 else -np.inf
    margins["B"] = min(-worst_off, float(mu.min()))
    holds_B = worst_off <= 0.0 and bool(np.all(mu > 0))
    if params.n_comp == 1:
        margins["B"] = float(mu.min())

    # (C): apply the adjacent row/column swaps of each block in sequence
    dev = 0.0
    for b in range(nb):
        M = B.copy()
        for i in range(p - 1):
            k = b * p + i
            M[[k, k + 1], :] = M[[k + 1, k], :]
            M[:, [k, k + 1]] = M[:, [k + 1, k]]
        dev = max(dev, float(np.abs(M - B).max()))
    margins["C"] = -dev
    holds_C = dev <= SYM_TOL * max(1.0, float(np.abs(B).max()))

    # (D): mu_j + in-block couplings
    worst = -np.inf
    for j in range(params.n_comp):
        b = j // p
        block = range(b * p, (b + 1) * p)
        total = mu[j] + sum(B[i, j] for i in block if i != j)
        worst = max(worst, total)
    margins["D"] = -float(worst)
    holds_D = worst <= 0.0
    if p == 1:
        # sigma is the identity: there is no fixed-point set to steer away from
        margins["D"] = None
        holds_D = True

    uniform = params.is_uniform()
    holds_uniform_bound = False
    if uniform and p >= 2 and params.n_comp > 1:
        beta = float(off[0, 1])
        bound = -float(mu[0]) / (p - 1)
        margins["uniform_bound"] = bound - beta
        holds_uniform_bound = beta <= bound
    return AssumptionReport(holds_A, holds_B, holds_C, holds_D, holds_uniform_bound,
                            uniform, margins)


def sigma(blocks: BlockStructure, state: np.ndarray) -> np.ndarray:
    """Cyclic shift ``(u_1, ..., u_p) -> (u_2, ..., u_p, u_1)`` inside every block."""
    state = np.asarray(state)
    if state.shape[0] != blocks.n_comp:
        raise ValueError(f"state has {state.shape[0]} components, blocks expect {blocks.n_comp}")
    return state[blocks.permutation()]


@dataclass(frozen=True)
class Transform:
    """``U -> signs * sigma^power(U)``; ``perm`` is the composed index map."""

    power: int
    signs: tuple[float, ...]
    perm: tuple[int, ...]

    def __call__(self, state: np.ndarray) -> np.ndarray:
        out = np.asarray(state)[list(self.perm)]
        return out * np.array(self.signs)[:, None]


def symmetry_group(blocks: BlockStructure) -> list[Transform]:
    """All compositions of sigma powers with componentwise sign flips."""
    n = blocks.n_comp
    step = blocks.permutation()
    out = []
    perm = np.arange(n)
    for power in range(blocks.p):
        for mask in range(2 ** n):
            signs = tuple(-1.0 if (mask >> j) & 1 else 1.0 for j in range(n))
            out.append(Transform(power, signs, tuple(int(k) for k in perm)))
        perm = perm[step]
    return out
