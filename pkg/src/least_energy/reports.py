"""Report records shared by the 2D diagnostics and the radial oracle."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MU_BAR_SQ = 1.0 / 8.0


def limit_profile(radius):
    """The limit profile log(8 mu^2 / (1 + mu^2 |X|^2)^2) with mu^2 = 1/8."""
    r = np.asarray(radius, dtype=float)
    return np.log(8.0 * MU_BAR_SQ / (1.0 + MU_BAR_SQ * r * r) ** 2)


@dataclass(frozen=True)
class ProfileComparison:
    """Rescaled profile phi sampled around the maximum, next to the limit bubble.

    ``sample_points`` are the rescaled positions X (shape ``(n, 2)``); samples that
    fell outside the domain are dropped and counted in ``dropped``.
    """

    p: float
    lam: float
    epsilon: float
    sample_radii: np.ndarray
    sample_points: np.ndarray
    phi_values: np.ndarray
    bubble_values: np.ndarray
    sup_discrepancy: float
    window_resolved: bool
    local_h: float = 0.0
    dropped: int = 0

    @property
    def discrepancies(self):
        return np.abs(self.phi_values - self.bubble_values)

    def rows(self):
        for (x1, x2), r, phi, u in zip(self.sample_points, self.sample_radii,
                                       self.phi_values, self.bubble_values):
            yield {
                "p": self.p,
                "lambda": self.lam,
                "X1": x1,
                "X2": x2,
                "radius": r,
                "phi": phi,
                "bubble": u,
                "abs_diff": abs(phi - u),
            }


@dataclass(frozen=True)
class SpectrumReport:
    """Smallest eigenvalues of -Δ + λ - p u^{p-1} (mass weighted).

    ``negative_count`` counts the negative entries of ``eigenvalues``; for a
    radial mode report ``mode`` holds the angular frequency and ``multiplicity``
    the number of planar eigenfunctions each radial one stands for.
    """

    eigenvalues: np.ndarray
    negative_count: int
    min_abs_eigenvalue: float
    morse_index_ok: bool
    nondegenerate_ok: bool
    gap: float
    mode: int | None = None
    multiplicity: int = 1
    exterior_eigenvalue: float | None = None
    eigenvectors: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_eigenvalues(cls, eigenvalues, gap=None, mode=None, multiplicity=1,
                         exterior_eigenvalue=None, eigenvectors=None,
                         expected_negatives=1):
        ev = np.sort(np.asarray(eigenvalues, dtype=float))
        mags = np.sort(np.abs(ev))
        if gap is None:
            gap = 1e-3 * mags[min(9, len(mags) - 1)]
        neg = int(np.sum(ev < 0.0))
        min_abs = float(mags[0])
        return cls(
            eigenvalues=ev,
            negative_count=neg,
            min_abs_eigenvalue=min_abs,
            morse_index_ok=neg == expected_negatives,
            nondegenerate_ok=min_abs > gap,
            gap=float(gap),
            mode=mode,
            multiplicity=multiplicity,
            exterior_eigenvalue=exterior_eigenvalue,
            eigenvectors=eigenvectors,
        )
