"""Compact L-BFGS matrices with per-coordinate auxiliary products.

``LbfgsState`` keeps a window of at most ``memory`` correction pairs and
applies, without forming any d x d matrix,

* ``B z`` with ``B = sigma0 I - U M^{-1} U^T``, ``U = [sigma0 S, Y]`` and
  ``M = [[sigma0 S^T S, L], [L^T, -D]]``;
* ``B_alpha^{-1} z`` for ``B_alpha = B - alpha I``;
* ``(B_alpha^{-1} + diag(mask)/alpha)^{-1} z`` for a 0/1 mask.

For every coordinate i the outer products of the i-th rows of S and Y
(``s_i s_i^T``, ``s_i y_i^T``, ``y_i y_i^T``, each m x m) are stored, so the
Gram matrices and their masked counterparts are obtained by summation
alone.  The symmetric SS and YY products are stored packed (upper triangle).
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla


class LbfgsState:
    def __init__(self, d: int, memory: int = 10, curvature_floor: float = 1e-12):
        if memory < 1:
            raise ValueError("memory must be at least 1")
        self.d = int(d)
        self.memory = int(memory)
        self.curvature_floor = curvature_floor
        self.m = 0
        self.rejected = 0
        self.mults = 0
        l = self.memory
        self.S = np.zeros((self.d, l))
        self.Y = np.zeros((self.d, l))
        # packed layout for symmetric l x l blocks
        iu, ju = np.triu_indices(l)
        self._pos = np.zeros((l, l), dtype=np.int64)
        self._pos[iu, ju] = np.arange(iu.size)
        self._pos[ju, iu] = np.arange(iu.size)
        self._rotate_src = self._pos[1:, 1:][np.triu_indices(l - 1)]
        self._rotate_dst = self._pos[:-1, :-1][np.triu_indices(l - 1)]
        self.row_outer_sy = np.zeros((self.d, l, l))
        self.row_outer_ss = np.zeros((self.d, iu.size))
        self.row_outer_yy = np.zeros((self.d, iu.size))
        self.sigma0 = 1.0
        self._refresh()

    # ------------------------------------------------------------------
    # window maintenance

    def push_pair(self, s: np.ndarray, y: np.ndarray) -> bool:
        """Append ``(s, y)`` if it passes the curvature check; evict the oldest when full."""
        s = np.asarray(s, dtype=float)
        y = np.asarray(y, dtype=float)
        if s.shape != (self.d,) or y.shape != (self.d,):
            raise ValueError(f"pair vectors must have shape ({self.d},)")
        sy = float(s @ y)
        if not sy > self.curvature_floor * np.linalg.norm(s) * np.linalg.norm(y):
            self.rejected += 1
            return False
        if self.m == self.memory:
            self._evict_oldest()
        m = self.m
        self.S[:, m] = s
        self.Y[:, m] = y
        Sm, Ym = self.S[:, :m], self.Y[:, :m]
        self.row_outer_sy[:, :m, m] = Sm * y[:, None]
        self.row_outer_sy[:, m, :m] = s[:, None] * Ym
        self.row_outer_sy[:, m, m] = s * y
        col = self._pos[:m + 1, m]
        self.row_outer_ss[:, col[:m]] = Sm * s[:, None]
        self.row_outer_ss[:, col[m]] = s * s
        self.row_outer_yy[:, col[:m]] = Ym * y[:, None]
        self.row_outer_yy[:, col[m]] = y * y
        self.mults += (4 * m + 3) * self.d
        self.m = m + 1
        self._refresh()
        return True

    def _evict_oldest(self):
        l = self.memory
        self.S[:, :-1] = self.S[:, 1:]
        self.Y[:, :-1] = self.Y[:, 1:]
        self.row_outer_sy[:, :-1, :-1] = self.row_outer_sy[:, 1:, 1:]
        self.row_outer_ss[:, self._rotate_dst] = self.row_outer_ss[:, self._rotate_src]
        self.row_outer_yy[:, self._rotate_dst] = self.row_outer_yy[:, self._rotate_src]
        self.m = l - 1

    def _unpack(self, packed: np.ndarray) -> np.ndarray:
        m = self.m
        return packed[self._pos[:m, :m]]

    def _refresh(self):
        m = self.m
        self._alpha_cache = {}
        if m == 0:
            self.gram_SY = self.gram_SS = self.gram_YY = np.zeros((0, 0))
            self.sigma0 = 1.0
            return
        self.gram_SY = self.row_outer_sy[:, :m, :m].sum(axis=0)
        self.gram_SS = self._unpack(self.row_outer_ss.sum(axis=0))
        self.gram_YY = self._unpack(self.row_outer_yy.sum(axis=0))
        self.sigma0 = self.gram_YY[m - 1, m - 1] / self.gram_SY[m - 1, m - 1]
        self.D = np.diag(np.diag(self.gram_SY))
        self.Lmat = np.tril(self.gram_SY, k=-1)
        s0 = self.sigma0
        self.middle = np.block([[s0 * self.gram_SS, self.Lmat],
                                [self.Lmat.T, -self.D]])
        self.UtU = np.block([[s0 * s0 * self.gram_SS, s0 * self.gram_SY],
                             [s0 * self.gram_SY.T, self.gram_YY]])
        self._middle_lu = sla.lu_factor(self.middle, check_finite=False)

    @property
    def pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.S[:, j].copy(), self.Y[:, j].copy()) for j in range(self.m)]

    # ------------------------------------------------------------------
    # operators

    def _Ut(self, z: np.ndarray) -> np.ndarray:
        m = self.m
        return np.concatenate([self.sigma0 * (self.S[:, :m].T @ z), self.Y[:, :m].T @ z])

    def _U(self, w: np.ndarray) -> np.ndarray:
        m = self.m
        return self.S[:, :m] @ (self.sigma0 * w[:m]) + self.Y[:, :m] @ w[m:]

    def apply_B(self, z: np.ndarray) -> np.ndarray:
        assert self.m >= 1, "apply_B needs at least one correction pair"
        w = sla.lu_solve(self._middle_lu, self._Ut(z), check_finite=False)
        return self.sigma0 * z - self._U(w)

    def alpha_bar(self) -> float:
        """Lower bound on the smallest eigenvalue of B."""
        assert self.m >= 1
        ratios = np.diag(self.gram_SS) / np.diag(self.gram_SY)
        return 1.0 / (1.0 / self.sigma0 + ratios.sum())

    def _alpha_factor(self, alpha: float):
        """Cached LU factor of ``U^T U - J`` with ``J = (sigma0 - alpha) M``."""
        hit = self._alpha_cache.get(alpha)
        if hit is None:
            if not 0.0 <= alpha < self.alpha_bar():
                raise ValueError(f"alpha={alpha} outside [0, alpha_bar={self.alpha_bar()})")
            K0 = self.UtU - (self.sigma0 - alpha) * self.middle
            hit = (K0, sla.lu_factor(K0, check_finite=False))
            self._alpha_cache = {alpha: hit}
        return hit

    def apply_B_alpha_inv(self, alpha: float, z: np.ndarray) -> np.ndarray:
        _, lu = self._alpha_factor(alpha)
        w = sla.lu_solve(lu, self._Ut(z), check_finite=False)
        return (z - self._U(w)) / (self.sigma0 - alpha)

    def masked_gram(self, alpha: float, mask: np.ndarray) -> np.ndarray:
        """``U^T C U`` assembled from the row products, ``C = (I/(sigma0-alpha) + diag(mask)/alpha)^{-1}``."""
        m, s0 = self.m, self.sigma0
        mask = np.asarray(mask, dtype=bool)
        n_on = int(mask.sum())
        # sum over whichever side of the mask is smaller
        if n_on <= self.d - n_on:
            sy_on = self.row_outer_sy[mask, :m, :m].sum(axis=0)
            ss_on = self._unpack(self.row_outer_ss[mask].sum(axis=0))
            yy_on = self._unpack(self.row_outer_yy[mask].sum(axis=0))
        else:
            off = ~mask
            sy_on = self.gram_SY - self.row_outer_sy[off, :m, :m].sum(axis=0)
            ss_on = self.gram_SS - self._unpack(self.row_outer_ss[off].sum(axis=0))
            yy_on = self.gram_YY - self._unpack(self.row_outer_yy[off].sum(axis=0))
        gap = s0 - alpha
        top_left = (s0 * gap) * (s0 * (self.gram_SS - ss_on) + alpha * ss_on)
        top_right = gap * (s0 * (self.gram_SY - sy_on) + alpha * sy_on)
        bottom_right = gap * ((self.gram_YY - yy_on) + (alpha / s0) * yy_on)
        self.mults += 6 * m * m + 6
        return np.block([[top_left, top_right], [top_right.T, bottom_right]])

    def masked_gram_direct(self, alpha: float, mask: np.ndarray) -> np.ndarray:
        """Reference ``U^T diag(c) U`` by dense multiplication."""
        m, s0 = self.m, self.sigma0
        c = self._c_values(alpha)
        cvec = np.where(np.asarray(mask, dtype=bool), c[1], c[0])
        U = np.hstack([s0 * self.S[:, :m], self.Y[:, :m]])
        return U.T @ (cvec[:, None] * U)

    def _c_values(self, alpha: float) -> tuple[float, float]:
        gap = self.sigma0 - alpha
        return gap, alpha * gap / self.sigma0

    def apply_shifted_inverse(self, alpha: float, mask: np.ndarray, z: np.ndarray,
                              method: str = "aux") -> np.ndarray:
        """Apply ``(B_alpha^{-1} + diag(mask)/alpha)^{-1}`` to ``z``.

        ``method="aux"`` assembles the 2m x 2m system from the stored row
        products; ``method="direct"`` forms ``U^T C U`` by multiplication.
        """
        if not alpha > 0:
            raise ValueError("alpha must be positive")
        K0, _ = self._alpha_factor(alpha)
        m, d, s0 = self.m, self.d, self.sigma0
        mask = np.asarray(mask, dtype=bool)
        c_off, c_on = self._c_values(alpha)
        if method == "aux":
            UCU = self.masked_gram(alpha, mask)
        elif method == "direct":
            UCU = self.masked_gram_direct(alpha, mask)
        else:
            raise ValueError(f"unknown method {method!r}")
        K = UCU - (s0 - alpha) * K0
        cz = np.where(mask, c_on * z, c_off * z)
        w = np.linalg.solve(K, self._Ut(cz))
        S, Y = self.S[:, :m], self.Y[:, :m]
        out = cz.copy()
        for rows, c in ((mask, c_on), (~mask, c_off)):
            cw = c * w
            out[rows] -= S[rows] @ (s0 * cw[:m]) + Y[rows] @ cw[m:]
        # cz: d, U^T: 2md + m, C U w: 2md + 2m + 4m, K: 4m^2, solve ~ (2m)^3
        self.mults += 4 * m * d + d + 7 * m + 4 * m * m + 8 * m ** 3
        return out


class DenseOperator:
    """Explicit symmetric positive definite ``B`` behind the ``LbfgsState`` operator interface."""

    def __init__(self, B):
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.d = self.B.shape[0]
        self.m = self.d
        self._lam_min = float(np.linalg.eigvalsh(self.B)[0])
        if self._lam_min <= 0:
            raise ValueError("B must be positive definite")

    def apply_B(self, z):
        return self.B @ z

    def alpha_bar(self) -> float:
        return self._lam_min

    def apply_B_alpha_inv(self, alpha, z):
        if not 0.0 <= alpha < self._lam_min:
            raise ValueError("alpha outside [0, alpha_bar)")
        return np.linalg.solve(self.B - alpha * np.eye(self.d), z)

    def apply_shifted_inverse(self, alpha, mask, z, method="direct"):
        Ba_inv = np.linalg.inv(self.B - alpha * np.eye(self.d))
        M = Ba_inv + np.diag(np.asarray(mask, dtype=float)) / alpha
        return np.linalg.solve(M, z)


class IdentityOperator(DenseOperator):
    def __init__(self, d: int):
        super().__init__(np.eye(d))
