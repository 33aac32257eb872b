"""Shared generators for randomized regressor traces used across tests."""
import numpy as np

from paramest.numcore import TimeGrid
from paramest.excitation import RegressorTrace


def random_piecewise_trace(rng, q, exciting, mode="ct", n_segments=6, samples_per_segment=20, h=0.05):
    """Piecewise-constant regressor whose sample span has a known rank.

    When ``exciting`` the segment values are well-conditioned combinations
    of q independent O(1) directions; otherwise they stay inside a proper
    subspace (possibly the zero subspace), so excitation and
    identifiability verdicts are both known by construction.
    """
    rank = q if exciting else int(rng.integers(0, q))
    if rank == 0:
        basis = np.zeros((q, 1))
    else:
        mat = rng.normal(size=(q, q))
        qmat, _ = np.linalg.qr(mat)
        basis = qmat[:, :rank]
    samples = []
    for seg in range(n_segments):
        if rank == 0:
            value = np.zeros(q)
        elif exciting and seg < q:
            # sweep every direction early so the window Gramian fills up
            value = basis[:, seg % rank] * rng.uniform(0.5, 2.0)
        else:
            coeffs = rng.uniform(-2.0, 2.0, size=rank)
            value = basis @ coeffs
        samples.extend([value] * samples_per_segment)
    samples = np.array(samples)
    grid = TimeGrid(h=h if mode == "ct" else 1.0, n_steps=samples.shape[0] - 1)
    return RegressorTrace(grid, samples, mode)
