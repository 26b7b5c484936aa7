"""Parameter observability from the identification Jacobian's singular values.

For n poses and m free parameters, with singular values s1 >= ... >= sm of
the stacked Jacobian (zero-padded when the residual dimension is below m):

    O1 = (s1 * ... * sm)^(1/m) / sqrt(n)
    O4 = sm^2 / s1

O4 is reported as exactly 0 when the Jacobian is rank-deficient. The rank
tolerance is s1 * max(dim) * machine epsilon, the usual numerical-rank cut.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .residuals import ChainCombo, ResidualProblem


@dataclass(frozen=True)
class ObservabilityReport:
    singular_values: np.ndarray   # descending, length = free parameter count
    free_count: int
    pose_count: int
    residual_dim: int
    rank: int
    rank_tolerance: float
    o1: float
    o4: float
    evaluated_at: str

    @property
    def rank_deficient(self) -> bool:
        return self.rank < self.free_count

    def to_dict(self) -> dict:
        return {
            "o1": self.o1,
            "o4": self.o4,
            "rank": self.rank,
            "free_count": self.free_count,
            "pose_count": self.pose_count,
            "residual_dim": self.residual_dim,
            "rank_deficient": self.rank_deficient,
            "rank_tolerance": self.rank_tolerance,
            "singular_values": self.singular_values.tolist(),
            "evaluated_at": self.evaluated_at,
        }


def observability_indices(singular_values, pose_count: int, rank: int | None = None):
    """(O1, O4) from a descending singular-value vector of length m.

    O1 is the geometric mean over sqrt(pose_count); O4 is s_m^2 / s_1,
    forced to exactly 0 when the rank is below m.
    """
    sv = np.asarray(singular_values, dtype=float)
    m = sv.size
    if rank is None:
        rank = int(np.sum(sv > 0))
    if np.all(sv > 0):
        o1 = float(np.exp(np.mean(np.log(sv))) / np.sqrt(pose_count))
    else:
        o1 = 0.0
    o4 = float(sv[m - 1] ** 2 / sv[0]) if rank == m else 0.0
    return o1, o4


def analyze(model, mask, samples, combo: ChainCombo, *, mu_override=None,
            evaluated_at: str = "initial") -> ObservabilityReport:
    """Observability indices of the masked parameters on a pose set.

    The Jacobian is taken at `model`, which callers choose: the perturbed
    initial estimate by default (what an experimenter actually has), or
    ground truth when the flag says so upstream.
    """
    from .parameters import pack

    if mask.free_count == 0:
        raise ValueError("mask has no free parameters")
    prob = ResidualProblem(model, samples, combo, mask=mask, mu_override=mu_override)
    J = prob.jacobian(pack(model, mask))
    m = mask.free_count
    n = len(samples)
    sv = np.linalg.svd(J, compute_uv=False)
    if sv.size < m:
        sv = np.concatenate([sv, np.zeros(m - sv.size)])
    tol = sv[0] * max(J.shape) * np.finfo(float).eps if sv[0] > 0 else 0.0
    rank = int(np.sum(sv > tol))
    o1, o4 = observability_indices(sv, n, rank)
    sv = sv.copy()
    sv.setflags(write=False)
    return ObservabilityReport(
        singular_values=sv,
        free_count=m,
        pose_count=n,
        residual_dim=J.shape[0],
        rank=rank,
        rank_tolerance=float(tol),
        o1=o1,
        o4=o4,
        evaluated_at=evaluated_at,
    )
