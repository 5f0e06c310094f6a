"""Nested uniform fine/coarse time discretizations."""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["TimeGrid", "IntervalIndexSet", "build_grid", "fine_index_of_coarse"]


@dataclass(frozen=True)
class IntervalIndexSet:
    """Fine indices ``m_bar*n .. m_bar*(n+1)`` (inclusive) of coarse interval ``n``."""

    interval: int
    start: int
    stop: int

    @property
    def fine_indices(self) -> range:
        return range(self.start, self.stop + 1)

    def __len__(self) -> int:
        return self.stop - self.start + 1


@dataclass(frozen=True)
class TimeGrid:
    """Uniform fine grid of ``M * m_bar`` steps nested in a coarse grid of ``M`` steps.

    The coarse instance ``T_n`` coincides with the fine instance ``t_{m_bar*n}``.
    """

    t_final: float
    M: int
    m_bar: int

    def __post_init__(self):
        if not self.t_final > 0:
            raise ValueError(f"t_final must be positive, got {self.t_final}")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"number of coarse intervals must be >= 1, got {self.M}")
        if int(self.m_bar) != self.m_bar or self.m_bar < 1:
            raise ValueError(f"fine steps per coarse interval must be >= 1, got {self.m_bar}")

    @property
    def n_fine(self) -> int:
        return self.M * self.m_bar

    @property
    def h(self) -> float:
        return self.t_final / self.n_fine

    @property
    def H(self) -> float:
        return self.t_final / self.M

    def fine_time(self, i: int) -> float:
        if not 0 <= i <= self.n_fine:
            raise IndexError(f"fine index {i} outside 0..{self.n_fine}")
        return i * self.h

    def coarse_time(self, n: int) -> float:
        return self.fine_time(fine_index_of_coarse(self, n))

    def interval(self, n: int) -> IntervalIndexSet:
        if not 0 <= n < self.M:
            raise IndexError(f"coarse interval {n} outside 0..{self.M - 1}")
        return IntervalIndexSet(n, self.m_bar * n, self.m_bar * (n + 1))

    def with_coarse(self, M: int) -> "TimeGrid":
        """Same fine grid split into ``M`` coarse intervals (``M`` must divide ``n_fine``)."""
        if self.n_fine % M:
            raise ValueError(f"M={M} does not divide n_fine={self.n_fine}")
        return TimeGrid(self.t_final, M, self.n_fine // M)

    def to_dict(self) -> dict:
        return {
            "t_final": self.t_final,
            "coarse_intervals": self.M,
            "fine_per_coarse": self.m_bar,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TimeGrid":
        return build_grid(float(d["t_final"]), int(d["coarse_intervals"]), int(d["fine_per_coarse"]))


def build_grid(t_final: float, M: int, m_bar: int) -> TimeGrid:
    return TimeGrid(float(t_final), int(M), int(m_bar))


def fine_index_of_coarse(grid: TimeGrid, n: int) -> int:
    if not 0 <= n <= grid.M:
        raise IndexError(f"coarse index {n} outside 0..{grid.M}")
    return grid.m_bar * n
