"""Initial data: the cone of signed bumps and the cyclically symmetric family.

Cells are nested equal-width intervals: the domain is split into one region
per block, each region into ``P_b + 1`` bump cells, and each bump cell into
``K`` sub-cells.  Every sub-cell is split once more into ``2p`` slots carrying
unit-L4 quartic bubbles.  The circle parameter ``t`` enters through hat
functions ``g_s`` centred at ``pi*s/p`` with half-width ``pi/p``; they form a
partition of unity, so ``w(t) = sum_s g_s(t) w_s`` never vanishes, and the
slots active at ``t`` and at ``t + 2pi/p`` are disjoint whenever ``p >= 2``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .system import BlockStructure

TWO_PI = 2.0 * math.pi
MIN_CELL_SPACINGS = 4


def bubble(grid: Grid, a: float, b: float) -> np.ndarray:
    """``c ((r - a)(b - r))^2`` on ``[a, b]``, zero outside, with discrete ``|w|_4 = 1``."""
    if b - a < MIN_CELL_SPACINGS * grid.h:
        raise ValueError(f"cell [{a:.6g}, {b:.6g}] is narrower than "
                         f"{MIN_CELL_SPACINGS} grid spacings")
    r = grid.nodes
    w = np.where((r > a) & (r < b), ((r - a) * (b - r)) ** 2, 0.0)
    n4 = float(np.sum(grid.mass * w ** 4)) ** 0.25
    if n4 == 0.0:
        raise ValueError(f"cell [{a:.6g}, {b:.6g}] contains no grid node")
    return w / n4


def _split(a: float, b: float, n: int) -> list[tuple[float, float]]:
    edges = np.linspace(a, b, n + 1)
    return [(float(edges[i]), float(edges[i + 1])) for i in range(n)]


@dataclass
class PhaseVector:
    """Entries ``z = alpha * exp(i theta)``, one per sub-cell ``(b, q, k)`` in lexicographic order."""

    amplitudes: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=float).ravel()
        self.phases = np.mod(np.asarray(self.phases, dtype=float).ravel(), TWO_PI)
        if self.amplitudes.shape != self.phases.shape:
            raise ValueError("amplitudes and phases must have the same length")
        if np.any(self.amplitudes < 0):
            raise ValueError("amplitudes must be non-negative")

    def __len__(self):
        return self.amplitudes.size

    def rotated(self, angle: float) -> "PhaseVector":
        """``exp(i angle) z``."""
        return PhaseVector(self.amplitudes.copy(), self.phases + angle)

    @classmethod
    def from_complex(cls, z) -> "PhaseVector":
        z = np.asarray(z, dtype=complex)
        return cls(np.abs(z), np.angle(z))

    def to_record(self) -> dict:
        return {"amplitudes": self.amplitudes.tolist(), "phases": self.phases.tolist()}


@dataclass
class BumpBasis:
    grid: Grid
    blocks: BlockStructure
    K: int
    regions: list            # per block: (a, b)
    bump_cells: dict         # (b, q) -> (a, b), q 1-based
    sub_cells: dict          # (b, q, k) -> (a, b), k 1-based
    slot_cells: dict         # (b, q, k, s) -> (a, b), s 0-based
    slot_profiles: dict      # (b, q, k, s) -> array
    cone_cells: dict         # (j, q) -> (a, b)
    cone_profiles: dict      # (j, q) -> array

    @property
    def n_slots(self) -> int:
        return 2 * self.blocks.p

    def cell_keys(self) -> list[tuple[int, int, int]]:
        return sorted(self.sub_cells)

    def n_entries(self) -> int:
        return len(self.sub_cells)

    def weights(self, t: float) -> np.ndarray:
        """Hat coefficients ``g_s(t)``, a partition of unity on the circle."""
        n = self.n_slots
        width = TWO_PI / n
        centres = np.arange(n) * width
        d = np.abs(np.mod(t - centres + math.pi, TWO_PI) - math.pi)
        return np.clip(1.0 - d / width, 0.0, None)

    def cell_profile(self, key, t: float) -> np.ndarray:
        g = self.weights(t)
        out = np.zeros(self.grid.m)
        for s in np.flatnonzero(g):
            out += g[s] * self.slot_profiles[key + (int(s),)]
        return out

    def to_record(self) -> dict:
        def cells(d):
            return [{"key": list(k), "interval": list(v)} for k, v in sorted(d.items())]
        return {"p": self.blocks.p, "prescription": list(self.blocks.prescription),
                "K": self.K, "slots_per_cell": self.n_slots,
                "profile": "c*((r-a)*(b-r))**2 with discrete |w|_4 = 1",
                "regions": [list(r) for r in self.regions],
                "bump_cells": cells(self.bump_cells), "sub_cells": cells(self.sub_cells),
                "slot_cells": cells(self.slot_cells), "cone_cells": cells(self.cone_cells)}

    def to_json(self) -> str:
        return json.dumps(self.to_record(), indent=2)


def build_basis(grid: Grid, blocks: BlockStructure, K: int = 1) -> BumpBasis:
    if int(K) != K or K < 1:
        raise ValueError("K must be a positive integer")
    p = blocks.p
    dom = grid.domain
    regions = _split(dom.r_inner, dom.r_outer, blocks.blocks)
    bump_cells, sub_cells, slot_cells, slot_profiles = {}, {}, {}, {}
    cone_cells, cone_profiles = {}, {}
    for b, (ra, rb) in enumerate(regions):
        for q, cell in enumerate(_split(ra, rb, blocks.prescription[b] + 1), start=1):
            bump_cells[(b, q)] = cell
            # the cone puts component l of the block in the l-th sub-interval
            for ell, sub in enumerate(_split(*cell, p)):
                j = b * p + ell
                cone_cells[(j, q)] = sub
                cone_profiles[(j, q)] = bubble(grid, *sub)
            for k, sub in enumerate(_split(*cell, K), start=1):
                sub_cells[(b, q, k)] = sub
                for s, slot in enumerate(_split(*sub, 2 * p)):
                    slot_cells[(b, q, k, s)] = slot
                    slot_profiles[(b, q, k, s)] = bubble(grid, *slot)
    return BumpBasis(grid, blocks, int(K), regions, bump_cells, sub_cells, slot_cells,
                     slot_profiles, cone_cells, cone_profiles)


def cone_element(basis: BumpBasis, coefficients, eps: float) -> np.ndarray:
    """``u_j = sum_q (-1)^(q+1) alpha_{j,q} w_{j,q}`` with every ``alpha >= eps/100``.

    ``coefficients[j]`` lists ``alpha_{j,1..P_j+1}`` for component ``j``.
    """
    blocks = basis.blocks
    target = blocks.component_prescription()
    if len(coefficients) != blocks.n_comp:
        raise ValueError(f"need coefficients for {blocks.n_comp} components")
    floor = eps / 100.0
    U = np.zeros((blocks.n_comp, basis.grid.m))
    for j, alphas in enumerate(coefficients):
        alphas = np.asarray(alphas, dtype=float).ravel()
        if alphas.size != target[j] + 1:
            raise ValueError(f"component {j + 1} needs {target[j] + 1} coefficients")
        if np.any(alphas < floor):
            raise ValueError(f"coefficients must be >= eps/100 = {floor:g}")
        for q, a in enumerate(alphas, start=1):
            U[j] += (-1) ** (q + 1) * a * basis.cone_profiles[(j, q)]
    return U


def psi(basis: BumpBasis, blocks: BlockStructure, z: PhaseVector) -> np.ndarray:
    """Block ``b``, slot ``l``: ``sum_{q,k} (-1)^(q+1) alpha_bqk w_bqk(theta_bqk + 2 pi l/p)``."""
    keys = basis.cell_keys()
    if len(z) != len(keys):
        raise ValueError(f"phase vector has {len(z)} entries, basis needs {len(keys)}")
    p = blocks.p
    U = np.zeros((blocks.n_comp, basis.grid.m))
    for idx, key in enumerate(keys):
        b, q, _ = key
        alpha = z.amplitudes[idx]
        if alpha == 0.0:
            continue
        sign = (-1) ** (q + 1)
        for ell in range(p):
            t = z.phases[idx] + TWO_PI * ell / p
            U[b * p + ell] += sign * alpha * basis.cell_profile(key, t)
    return U


def sample_phase_vectors(basis: BumpBasis, count: int, rng_seed: int) -> list[PhaseVector]:
    """Amplitudes uniform in ``[0.5, 2]``, phases uniform in ``[0, 2 pi)``."""
    if count < 0:
        raise ValueError("count must be non-negative")
    rng = np.random.default_rng(rng_seed)
    n = basis.n_entries()
    out = []
    for _ in range(count):
        amps = rng.uniform(0.5, 2.0, n)
        phases = rng.uniform(0.0, TWO_PI, n)
        out.append(PhaseVector(amps, phases))
    return out


def sample_seeds(basis: BumpBasis, blocks: BlockStructure, count: int, rng_seed: int):
    if count < 1:
        raise ValueError("count must be >= 1")
    return [psi(basis, blocks, z) for z in sample_phase_vectors(basis, count, rng_seed)]


@dataclass
class InterleavedSeed:
    """A cone element whose bump cells are assigned to components in a given order.

    ``orders[b]`` lists, cell by cell from the inside out, which in-block
    component owns that cell of block region ``b``; component ``l`` appears
    ``P_b + 1`` times and its ``q``-th cell carries sign ``(-1)^(q+1)``.
    """

    orders: list
    amplitudes: list

    def to_record(self) -> dict:
        return {"orders": [list(map(int, o)) for o in self.orders],
                "amplitudes": [list(map(float, a)) for a in self.amplitudes]}


def interleaved_state(basis: BumpBasis, seed: InterleavedSeed) -> np.ndarray:
    blocks, grid = basis.blocks, basis.grid
    p = blocks.p
    U = np.zeros((blocks.n_comp, grid.m))
    for b, (ra, rb) in enumerate(basis.regions):
        order = list(seed.orders[b])
        amps = list(seed.amplitudes[b])
        n_cells = p * (blocks.prescription[b] + 1)
        if len(order) != n_cells or len(amps) != n_cells:
            raise ValueError(f"block {b + 1} needs {n_cells} cells")
        if sorted(order) != sorted(list(range(p)) * (blocks.prescription[b] + 1)):
            raise ValueError(f"block {b + 1}: every component needs P_b + 1 cells")
        seen = [0] * p
        for cell, ell, a in zip(_split(ra, rb, n_cells), order, amps):
            if a <= 0:
                raise ValueError("amplitudes must be positive")
            U[b * p + ell] += (-1) ** seen[ell] * a * bubble(grid, *cell)
            seen[ell] += 1
    return U


def sample_interleaved(basis: BumpBasis, count: int, rng_seed: int) -> list[InterleavedSeed]:
    """Uniformly random cell orders, amplitudes uniform in ``[0.5, 2]``."""
    rng = np.random.default_rng(rng_seed)
    blocks = basis.blocks
    out = []
    for _ in range(count):
        orders, amps = [], []
        for b in range(blocks.blocks):
            cells = list(range(blocks.p)) * (blocks.prescription[b] + 1)
            orders.append([int(x) for x in rng.permutation(cells)])
            amps.append([float(x) for x in rng.uniform(0.5, 2.0, len(cells))])
        out.append(InterleavedSeed(orders, amps))
    return out
