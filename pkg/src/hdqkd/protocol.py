"""Entanglement-based QKD measurement statistics and session simulation.

Generates the ideal outcome probabilities of the maximally correlated
pixel-entangled state measured in chosen bases, injects uniform or
block-biased noise into the matched-basis correlations, samples Poisson
coincidence counts, normalizes counts back to probabilities, and
decomposes observed errors into their uniform and in-block parts.

Probability tables hold joint probabilities p(a,b|k,l): Bob outcome a,
Alice outcome (sent state) b, Alice basis k, Bob basis l, all 1-based in
the public API.  Alice's state choice is uniform, so joint entries are
the per-sent-state conditionals divided by d.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InsufficientDataError,
    InvalidConfigError,
    InvalidDimensionError,
    InvalidInputError,
    InvalidNoiseError,
)
from .mub import Basis, grid_side

# Counter-based generator used for every stochastic operation, recorded in
# outputs so any run can be replayed from its seed.
GENERATOR_ID = "numpy-philox4x64"

NORMALIZATION_TOL = 1e-9


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class ProbabilityTable:
    """Joint outcome probabilities p(a,b|k,l), shape (d, d, K, L).

    Axis order: Bob outcome a, Alice sent state b, Alice basis k, Bob
    basis l (0-based internally).  Every (k,l) block sums to 1.
    """

    dim: int
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 4 or probs.shape[0] != self.dim or probs.shape[1] != self.dim:
            raise InvalidInputError(
                f"probs must be (d, d, K, L) with d={self.dim}, got {probs.shape}"
            )
        if probs.min() < 0.0:
            raise InvalidInputError("probabilities must be >= 0")
        sums = probs.sum(axis=(0, 1))
        if np.abs(sums - 1.0).max() > NORMALIZATION_TOL:
            raise InvalidInputError(
                f"each (k,l) block must sum to 1 "
                f"(max deviation {np.abs(sums - 1.0).max():.3e})"
            )
        object.__setattr__(self, "probs", probs)

    @property
    def bases_alice(self) -> int:
        return self.probs.shape[2]

    @property
    def bases_bob(self) -> int:
        return self.probs.shape[3]

    def setting(self, k: int, l: int) -> np.ndarray:
        """Joint d x d table for Alice basis k, Bob basis l (1-based)."""
        return self.probs[:, :, k - 1, l - 1].copy()


@dataclass(frozen=True)
class CountTable:
    """Coincidence counts c(a,b|k,l) with the acquisition metadata."""

    dim: int
    counts: np.ndarray
    integration_time: float
    coincidence_window: float = 400e-12
    seed: int | None = None
    generator: str = GENERATOR_ID

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 4 or counts.shape[0] != self.dim or counts.shape[1] != self.dim:
            raise InvalidInputError(
                f"counts must be (d, d, K, L) with d={self.dim}, got {counts.shape}"
            )
        if counts.min() < 0:
            raise InvalidInputError("counts must be >= 0")
        object.__setattr__(self, "counts", counts.astype(np.int64))


@dataclass(frozen=True)
class NoiseModel:
    """Matched-basis error model: uniform floor plus optional block bias.

    total_error is split into a uniform part spread over all d-1 wrong
    outcomes and, for kind="block_biased", a part spread over the
    sqrt(d)-1 wrong outcomes sharing the sent state's grid row or column.
    """

    kind: str
    total_error: float
    block_fraction: float = 0.0

    def __post_init__(self):
        if self.kind not in ("uniform", "block_biased"):
            raise InvalidNoiseError(f"unknown noise kind '{self.kind}'")
        if not 0.0 <= self.total_error < 1.0:
            raise InvalidNoiseError(f"total error {self.total_error} outside [0, 1)")
        if not 0.0 <= self.block_fraction <= 1.0:
            raise InvalidNoiseError(
                f"block fraction {self.block_fraction} outside [0, 1]"
            )
        if self.kind == "uniform" and self.block_fraction != 0.0:
            raise InvalidNoiseError("uniform noise cannot carry a block fraction")

    @property
    def uniform_error(self) -> float:
        return self.total_error * (1.0 - self.block_fraction)

    @property
    def block_error(self) -> float:
        return self.total_error * self.block_fraction

    @classmethod
    def from_components(cls, uniform_error: float, block_error: float) -> "NoiseModel":
        total = uniform_error + block_error
        if block_error == 0.0:
            return cls("uniform", total)
        return cls("block_biased", total, block_error / total)


@dataclass(frozen=True)
class NoiseDecomposition:
    """(E_t, E_u, E_b) with E_u + E_b = E_t by construction.

    block_error may come out slightly negative when the data are
    inconsistent with the block model; it is reported raw and flagged
    rather than silently clamped.
    """

    total_error: float
    uniform_error: float
    block_error: float
    clamped: bool = False

    def __post_init__(self):
        if abs(self.uniform_error + self.block_error - self.total_error) > 1e-9:
            raise InvalidInputError("error components must sum to the total")


def _block_mask(d: int, alignment: str) -> np.ndarray:
    """Boolean (a, b) table: outcome a shares sent state b's grid block."""
    side = grid_side(d)
    flat = np.arange(d)
    if alignment == "row":
        group = flat // side
    elif alignment == "col":
        group = flat % side
    else:
        raise InvalidInputError(f"alignment must be 'row' or 'col', got '{alignment}'")
    return group[:, None] == group[None, :]


def ideal_prob_table(alice_bases, bob_bases) -> ProbabilityTable:
    """Outcome probabilities of the maximally correlated d-mode pair state.

    For the state (1/sqrt(d)) sum_n |n>|n> measured in Alice basis A_k and
    Bob basis B_l (as supplied):

        p(a,b|k,l) = (1/d) * |sum_n conj(A_k[n,b]) * conj(B_l[n,a])|^2

    When Bob's basis is the entry-wise conjugate of Alice's, matched
    settings are perfectly correlated: p(a,b|k,k) = delta_ab / d.
    """
    alice = list(alice_bases)
    bob = list(bob_bases)
    if not alice or not bob:
        raise InvalidInputError("need at least one basis per party")
    d = alice[0].dim
    for basis in alice + bob:
        if basis.dim != d:
            raise InvalidInputError(
                f"basis '{basis.label}' has dim {basis.dim}, expected {d}"
            )
    probs = np.empty((d, d, len(alice), len(bob)))
    for k, a_k in enumerate(alice):
        for l, b_l in enumerate(bob):
            # (A_k^dagger conj(B_l))[b, a] = sum_n conj(A_k[n,b]) conj(B_l[n,a])
            m = a_k.amplitudes.conj().T @ b_l.amplitudes.conj()
            probs[:, :, k, l] = np.abs(m.T) ** 2 / d
    return ProbabilityTable(d, probs)


def apply_noise(
    table: ProbabilityTable,
    model: NoiseModel,
    alignments=None,
) -> ProbabilityTable:
    """Overwrite matched-basis settings with the noisy correlation model.

    Given sent state b the outcome conditional becomes: 1 - E_t on b,
    E_u/(d-1) on every wrong outcome, plus E_b/(sqrt(d)-1) extra on the
    sqrt(d)-1 wrong outcomes inside b's block.  Mismatched settings are
    left untouched.  alignments gives the block orientation ("row" or
    "col") per matched basis index; it defaults to "row" everywhere.
    """
    d = table.dim
    n_matched = min(table.bases_alice, table.bases_bob)
    if model.kind == "block_biased":
        side = grid_side(d)  # raises InvalidDimensionError for non-square d
    if model.total_error == 0.0:
        return table
    if alignments is None:
        alignments = ["row"] * n_matched
    if len(alignments) < n_matched:
        raise InvalidInputError(
            f"need an alignment per matched setting ({n_matched}), got {len(alignments)}"
        )
    probs = table.probs.copy()
    eye = np.eye(d, dtype=bool)
    for k in range(n_matched):
        cond = np.full((d, d), model.uniform_error / (d - 1))
        np.fill_diagonal(cond, 1.0 - model.total_error)
        if model.kind == "block_biased" and model.block_error > 0.0:
            in_block = _block_mask(d, alignments[k]) & ~eye
            cond[in_block] += model.block_error / (side - 1)
        probs[:, :, k, k] = cond / d
    return ProbabilityTable(d, probs)


def sample_counts(
    table: ProbabilityTable,
    pair_rate: float,
    time: float,
    accidental_rate: float = 0.0,
    seed: int = 0,
    coincidence_window: float = 400e-12,
) -> CountTable:
    """Poisson coincidence counts for every setting measured for `time`.

    c(a,b|k,l) ~ Poisson(time * (pair_rate * p(a,b|k,l) + accidental_rate/d^2)):
    true pairs follow the table, accidentals add a flat floor.  Bit-exact
    reproducible from the seed.
    """
    if pair_rate < 0.0 or accidental_rate < 0.0:
        raise InvalidInputError("rates must be >= 0")
    if time <= 0.0:
        raise InvalidInputError("integration time must be > 0")
    d = table.dim
    mean = time * (pair_rate * table.probs + accidental_rate / d**2)
    counts = _rng(seed).poisson(mean)
    return CountTable(
        d,
        counts,
        integration_time=time,
        coincidence_window=coincidence_window,
        seed=seed,
    )


def normalize_counts(counts: CountTable) -> ProbabilityTable:
    """Counts -> joint probabilities, normalizing per sent state.

    Conditional p(a|b,k,l) = c(a,b|k,l) / sum_a c(a,b|k,l); the joint
    table applies the uniform 1/d prior over Alice's sent states.
    """
    c = counts.counts.astype(float)
    totals = c.sum(axis=0)  # per (b, k, l)
    zero = np.argwhere(totals == 0)
    if zero.size:
        b, k, l = zero[0]
        raise InsufficientDataError(
            f"no counts for sent state b={b + 1} in setting k={k + 1}, l={l + 1}"
        )
    return ProbabilityTable(counts.dim, c / totals[None, :, :, :] / counts.dim)


def decompose_errors(
    table: ProbabilityTable,
    setting: int = 1,
    alignment: str = "row",
) -> NoiseDecomposition:
    """Split the matched-setting error into uniform and block parts.

    E_t is the total wrong-outcome probability.  The uniform component is
    estimated from the d - sqrt(d) outcomes outside the sent state's
    block, rescaled by (d-1)/(d-sqrt(d)) to account for all d-1 error
    states; the block component is the remainder.
    """
    d = table.dim
    side = grid_side(d)
    if not 1 <= setting <= min(table.bases_alice, table.bases_bob):
        raise InvalidInputError(f"no matched setting {setting} in the table")
    joint = table.probs[:, :, setting - 1, setting - 1]
    total = 1.0 - float(np.trace(joint))  # 1 - sum_a p(a,a|k,k)
    out_of_block = float(joint[~_block_mask(d, alignment)].sum())
    uniform = out_of_block * (d - 1) / (d - side)
    block = total - uniform
    return NoiseDecomposition(total, uniform, block, clamped=block < -1e-9)


@dataclass(frozen=True)
class SessionRecord:
    """Per-round outcomes of a simulated QKD session (1-based symbols)."""

    dim: int
    alice_basis: np.ndarray
    bob_basis: np.ndarray
    alice_symbol: np.ndarray
    bob_symbol: np.ndarray
    seed: int
    generator: str = GENERATOR_ID

    @property
    def n_rounds(self) -> int:
        return len(self.alice_basis)

    @property
    def sifted(self) -> np.ndarray:
        return self.alice_basis == self.bob_basis

    @property
    def sifted_fraction(self) -> float:
        return float(self.sifted.mean())

    @property
    def qber(self) -> float:
        """Error fraction on sifted rounds; NaN when nothing was sifted."""
        mask = self.sifted
        if not mask.any():
            return float("nan")
        return float((self.alice_symbol[mask] != self.bob_symbol[mask]).mean())

    def save_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            sifted = self.sifted
            for i in range(self.n_rounds):
                fh.write(
                    json.dumps(
                        {
                            "round": i + 1,
                            "k": int(self.alice_basis[i]),
                            "l": int(self.bob_basis[i]),
                            "alice": int(self.alice_symbol[i]),
                            "bob": int(self.bob_symbol[i]),
                            "sifted": bool(sifted[i]),
                        }
                    )
                    + "\n"
                )

    @classmethod
    def load_jsonl(cls, path, dim: int, seed: int = 0) -> "SessionRecord":
        ks, ls, alices, bobs = [], [], [], []
        with open(path) as fh:
            for line in fh:
                row = json.loads(line)
                ks.append(row["k"])
                ls.append(row["l"])
                alices.append(row["alice"])
                bobs.append(row["bob"])
        return cls(
            dim,
            np.array(ks),
            np.array(ls),
            np.array(alices),
            np.array(bobs),
            seed,
        )


def simulate_session(
    bases,
    n_rounds: int,
    noise: NoiseModel | None = None,
    seed: int = 0,
    basis_probs=None,
    alignments=None,
) -> SessionRecord:
    """Simulate n_rounds of entanglement-based QKD with independent
    basis choices.

    `bases` are Alice's measurement bases; Bob measures in their
    entry-wise conjugates, so matched settings are perfectly correlated
    before noise.  Basis choices follow basis_probs (uniform by default);
    the outcome pair of each round is drawn from the (noisy) joint table
    of its setting.  Deterministic for a fixed seed.
    """
    bases = list(bases)
    if not bases:
        raise InvalidConfigError("empty basis set")
    if n_rounds < 1:
        raise InvalidConfigError(f"n_rounds must be >= 1, got {n_rounds}")
    n_bases = len(bases)
    if basis_probs is None:
        basis_probs = np.full(n_bases, 1.0 / n_bases)
    basis_probs = np.asarray(basis_probs, dtype=float)
    if basis_probs.shape != (n_bases,) or abs(basis_probs.sum() - 1.0) > 1e-9:
        raise InvalidConfigError("basis probabilities must sum to 1")

    table = ideal_prob_table(bases, [b.conjugate() for b in bases])
    if noise is not None and noise.total_error > 0.0:
        table = apply_noise(table, noise, alignments)
    d = table.dim

    rng = _rng(seed)
    k_arr = rng.choice(n_bases, size=n_rounds, p=basis_probs)
    l_arr = rng.choice(n_bases, size=n_rounds, p=basis_probs)
    alice = np.zeros(n_rounds, dtype=np.int64)
    bob = np.zeros(n_rounds, dtype=np.int64)
    # Draw outcomes setting by setting in fixed (k,l) order so the result
    # is independent of how rounds happen to interleave.
    for k in range(n_bases):
        for l in range(n_bases):
            idx = np.nonzero((k_arr == k) & (l_arr == l))[0]
            if idx.size == 0:
                continue
            joint = table.probs[:, :, k, l].ravel()
            joint = joint / joint.sum()
            flat = rng.choice(d * d, size=idx.size, p=joint)
            bob[idx] = flat // d + 1
            alice[idx] = flat % d + 1
    return SessionRecord(d, k_arr + 1, l_arr + 1, alice, bob, seed)


# ---------------------------------------------------------------------------
# CSV serialization: header a,b,k,l,value plus a JSON sidecar.


def _write_table_csv(path, array: np.ndarray, fmt) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["a", "b", "k", "l", "value"])
        d1, d2, nk, nl = array.shape
        for k in range(nk):
            for l in range(nl):
                for a in range(d1):
                    for b in range(d2):
                        writer.writerow([a + 1, b + 1, k + 1, l + 1, fmt(array[a, b, k, l])])


def _read_table_csv(path, dtype) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["a", "b", "k", "l", "value"]:
            raise InvalidInputError(f"unexpected counts header {header}")
        for a, b, k, l, value in reader:
            rows.append((int(a), int(b), int(k), int(l), dtype(value)))
    d = max(r[0] for r in rows)
    nk = max(r[2] for r in rows)
    nl = max(r[3] for r in rows)
    array = np.zeros((d, d, nk, nl), dtype=dtype)
    for a, b, k, l, value in rows:
        array[a - 1, b - 1, k - 1, l - 1] = value
    return array


def save_counts_csv(counts: CountTable, path) -> None:
    path = str(path)
    _write_table_csv(path, counts.counts, int)
    sidecar = {
        "dim": counts.dim,
        "bases_alice": counts.counts.shape[2],
        "bases_bob": counts.counts.shape[3],
        "integration_time": counts.integration_time,
        "coincidence_window": counts.coincidence_window,
        "seed": counts.seed,
        "generator": counts.generator,
    }
    with open(path + ".meta.json", "w") as fh:
        json.dump(sidecar, fh, indent=2)


def load_counts_csv(path) -> CountTable:
    path = str(path)
    array = _read_table_csv(path, int)
    with open(path + ".meta.json") as fh:
        meta = json.load(fh)
    return CountTable(
        meta["dim"],
        array,
        integration_time=meta["integration_time"],
        coincidence_window=meta["coincidence_window"],
        seed=meta["seed"],
        generator=meta.get("generator", GENERATOR_ID),
    )


def save_probs_csv(table: ProbabilityTable, path, extra_meta: dict | None = None) -> None:
    path = str(path)
    _write_table_csv(path, table.probs, lambda v: repr(float(v)))
    sidecar = {
        "dim": table.dim,
        "bases_alice": table.bases_alice,
        "bases_bob": table.bases_bob,
    }
    sidecar.update(extra_meta or {})
    with open(path + ".meta.json", "w") as fh:
        json.dump(sidecar, fh, indent=2)


def load_probs_csv(path) -> ProbabilityTable:
    path = str(path)
    array = _read_table_csv(path, float)
    with open(path + ".meta.json") as fh:
        meta = json.load(fh)
    return ProbabilityTable(meta["dim"], array)
