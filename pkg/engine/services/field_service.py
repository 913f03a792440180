import math
from typing import Optional, Sequence, Union

import numpy as np

from engine.dependencies.logging import logger
from engine.schemas.cascade_schemas import TruncatedCascade, prefix_index
from engine.schemas.field_schemas import OrderParamH, FieldSample, UltrametricGaussian
from engine.utils.error_util import ErrorHandling


class FieldService:
    """
    Hierarchical random fields h_alpha, spins drawn from fields, and ultrametric
    Gaussian fields on cascade leaves.
    """

    @staticmethod
    def cell_index(G: int, omega: np.ndarray) -> np.ndarray:
        """0-based grid cell of each uniform: ceil(G w) - 1, with w = 0 in the first cell"""
        return np.clip(np.ceil(G * np.asarray(omega, dtype=float)), 1, G).astype(np.int64) - 1

    @staticmethod
    def eval_field(h: OrderParamH, uniforms: Sequence[float]) -> float:
        """
        Piecewise-constant lookup of h.

        With a w_* coordinate the caller may pass either all r + 2 coordinates
        or the r + 1 tree coordinates, in which case the frozen w_* is used.
        """
        omegas = [float(w) for w in uniforms]
        if h.omega_star_coordinate and len(omegas) == h.arity - 1:
            omegas = [h.omega_star] + omegas
        if len(omegas) != h.arity:
            raise ErrorHandling.invalid_parameter(f"h takes {h.arity} coordinates, got {len(omegas)}")
        if any(not (0.0 <= w <= 1.0) for w in omegas):
            raise ErrorHandling.invalid_parameter(f"uniforms must lie in [0, 1], got {omegas}")
        cells = FieldService.cell_index(h.G, np.array(omegas))
        return float(h.values[tuple(cells)])

    @staticmethod
    def sample_leaf_fields(h: OrderParamH, M: int, n_copies: int, rng: np.random.Generator) -> np.ndarray:
        """
        Leaf values of n_copies independent field arrays, shape (n_copies, M^r).

        Uniforms are drawn per (copy, vertex); leaf alpha reads the uniforms of
        its ancestors, so two leaves with wedge p share exactly p coordinates.
        """
        return FieldService._sample(h, M, n_copies, rng, keep_uniforms=False).values

    @staticmethod
    def sample_field_array(h: OrderParamH, cascade: Union[TruncatedCascade, int], n_copies: int,
                           rng: np.random.Generator) -> FieldSample:
        """One field copy per index I in {0..n_copies-1} on the leaves of `cascade` (or of an M-ary tree)"""
        if isinstance(cascade, TruncatedCascade):
            if cascade.r != h.r:
                raise ErrorHandling.invalid_parameter(f"h has depth {h.r}, cascade has depth {cascade.r}")
            M = cascade.M
        else:
            M = int(cascade)
        return FieldService._sample(h, M, n_copies, rng, keep_uniforms=True)

    @staticmethod
    def _sample(h: OrderParamH, M: int, n_copies: int, rng: np.random.Generator,
                keep_uniforms: bool) -> FieldSample:
        r, G = h.r, h.G
        n_leaves = M ** r
        cells = []
        uniforms = [None] * (r + 1)
        if h.omega_star_coordinate:
            star = int(FieldService.cell_index(G, np.array([h.omega_star]))[0])
            cells.append(np.full((n_copies, n_leaves), star, dtype=np.int64))
            root = rng.random((n_copies, 1))
            uniforms[0] = root
            cells.append(np.broadcast_to(FieldService.cell_index(G, root), (n_copies, n_leaves)))
        for p in range(1, r + 1):
            omega = rng.random((n_copies, M ** p))
            if keep_uniforms:
                uniforms[p] = omega
            cells.append(FieldService.cell_index(G, omega)[:, prefix_index(M, r, p)])
        values = h.values[tuple(cells)]
        return FieldSample(M=M, uniforms=uniforms, values=values)

    @staticmethod
    def spins_from_field(sbar: Union[float, np.ndarray], rng: np.random.Generator,
                         size: Optional[int] = None) -> np.ndarray:
        """+1 with probability (1 + sbar) / 2, else -1"""
        sbar = np.asarray(sbar, dtype=float)
        if np.any(np.abs(sbar) > 1.0) or not np.all(np.isfinite(sbar)):
            raise ErrorHandling.invalid_parameter("spin fields must lie in [-1, 1]")
        shape = sbar.shape if size is None else (size,) + sbar.shape
        return np.where(rng.random(shape) < (1.0 + sbar) / 2.0, 1, -1).astype(np.int8)

    @staticmethod
    def sample_ultrametric_gaussian(levels: Sequence[float], M: int, n_draws: int,
                                    rng: np.random.Generator) -> UltrametricGaussian:
        """
        g^gamma = sum_p sqrt(c_p - c_{p-1}) eta_{ancestor at depth p}, c_{-1} = 0.

        The tree depth is len(levels) - 1; eta at depth 0 is shared by all leaves.
        """
        c = np.asarray(levels, dtype=float)
        if c.ndim != 1 or c.size < 1:
            raise ErrorHandling.invalid_parameter("levels must be a non-empty sequence")
        if c[0] < 0.0 or np.any(np.diff(c) < 0.0):
            raise ErrorHandling.invalid_parameter(f"levels must satisfy 0 <= c_0 <= ... , got {c.tolist()}")
        depth = c.size - 1
        increments = np.sqrt(np.diff(c, prepend=0.0))
        g = np.zeros((n_draws, M ** depth))
        for p in range(depth + 1):
            if increments[p] == 0.0:
                continue
            eta = rng.standard_normal((n_draws, M ** p))
            g += increments[p] * eta[:, prefix_index(M, depth, p)]
        return UltrametricGaussian(levels=tuple(c.tolist()), M=M, values=g)

    @staticmethod
    def power_levels(levels: Sequence[float], d: int) -> np.ndarray:
        """c_p^(d-1): covariance levels of the pure d-spin field"""
        if d < 1:
            raise ErrorHandling.invalid_parameter(f"d must be >= 1, got {d}")
        return np.power(np.asarray(levels, dtype=float), d - 1)

    @staticmethod
    def cavity_gaussian_levels(magnetization: float, overlaps: Sequence[float]) -> np.ndarray:
        """
        c_j = (1 + 2 q_* + q_j) / 4 for the overlaps q_j above the cut level,
        where q_* is the mean magnetization. Non-negative and increasing whenever
        q_*^2 <= q_0 and the overlaps increase.
        """
        q = np.asarray(overlaps, dtype=float)
        c = (1.0 + 2.0 * float(magnetization) + q) / 4.0
        if c[0] < 0.0 or np.any(np.diff(c) <= 0.0):
            logger.warning(f"cavity Gaussian levels not increasing from zero: {c.tolist()}")
            raise ErrorHandling.invalid_parameter("overlaps and magnetization give non-monotone levels")
        return c

    @staticmethod
    def pair_moment(values: np.ndarray, a: int, b: int) -> tuple:
        """Sample covariance of columns a, b over draws, with its standard error"""
        x = values[:, a] - values[:, a].mean()
        y = values[:, b] - values[:, b].mean()
        prod = x * y
        n = prod.size
        return float(prod.mean()), float(prod.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
