"""Per-cluster combined channels and zero-forcing transmit precoding.

The precoder inverts the M x M matrix whose row m is the effective channel
of cluster m's representative user, so each cluster's beam has unit gain on
its own representative and zero gain on every other cluster's, then scales
all beams uniformly to spend the total power budget exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CONDITION_LIMIT = 1e8


class IllConditionedChannelError(ValueError):
    """Combined channel too close to singular for a trustworthy inversion."""

    def __init__(self, condition_number: float):
        self.condition_number = float(condition_number)
        super().__init__(
            f"combined cluster channel is ill-conditioned "
            f"(condition number {condition_number:.3e})"
        )


@dataclass(frozen=True, eq=False)
class ClusterChannelMatrix:
    """Square matrix of representative effective channels, one row per cluster."""

    matrix: np.ndarray
    condition_number: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"cluster channel matrix must be square, got {m.shape}")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "condition_number", float(np.linalg.cond(m)))

    @property
    def n_clusters(self) -> int:
        return int(self.matrix.shape[0])


@dataclass(frozen=True, eq=False)
class Precoder:
    """Beamforming vectors, column m serving cluster m."""

    columns: np.ndarray
    total_power: float

    def __post_init__(self):
        w = np.asarray(self.columns, dtype=complex)
        if not np.all(np.isfinite(w.view(float))):
            raise ValueError("precoder contains non-finite entries")
        object.__setattr__(self, "columns", w)

    def beam(self, m: int) -> np.ndarray:
        return self.columns[:, m]


def select_cluster_representatives(assignment, effective_channels) -> list[int]:
    """Index of each cluster's head user: largest effective-channel norm.

    ``assignment`` maps user -> cluster (a sequence or anything exposing an
    ``assignment`` attribute).  Ties go to the lowest user index.
    """
    assign = np.asarray(getattr(assignment, "assignment", assignment), dtype=int)
    h_eff = np.asarray(effective_channels, dtype=complex)
    norms = np.linalg.norm(h_eff, axis=1)
    n_clusters = int(assign.max()) + 1
    reps = []
    for m in range(n_clusters):
        members = np.flatnonzero(assign == m)
        if members.size == 0:
            raise ValueError(f"cluster {m} is empty")
        reps.append(int(members[np.argmax(norms[members])]))
    return reps


def cluster_channel_matrix(
    assignment, effective_channels
) -> tuple[ClusterChannelMatrix, list[int]]:
    """Stack the representatives' effective channels into the combined matrix."""
    reps = select_cluster_representatives(assignment, effective_channels)
    h_eff = np.asarray(effective_channels, dtype=complex)
    return ClusterChannelMatrix(matrix=h_eff[reps, :]), reps


def zf_precoder(
    hmat: ClusterChannelMatrix,
    total_power: float,
    condition_limit: float = CONDITION_LIMIT,
) -> Precoder:
    """Zero-forcing precoder scaled to consume ``total_power`` exactly.

    The unscaled solution W satisfies H W = I (unit gain on the own cluster,
    zero on the others); every column is then multiplied by
    sqrt(P / sum_m ||w_m||^2) so the power constraint holds with equality.
    """
    if total_power <= 0:
        raise ValueError("total_power must be positive")
    if not np.isfinite(hmat.condition_number) or hmat.condition_number > condition_limit:
        raise IllConditionedChannelError(hmat.condition_number)
    m = hmat.n_clusters
    w = np.linalg.solve(hmat.matrix, np.eye(m, dtype=complex))
    used = float(np.sum(np.abs(w) ** 2))
    w *= np.sqrt(total_power / used)
    return Precoder(columns=w, total_power=float(np.sum(np.abs(w) ** 2)))
