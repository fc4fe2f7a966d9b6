"""Small dense SPD helpers shared by the model and likelihood code."""

import numpy as np
import scipy.linalg
from scipy.linalg.lapack import dpocon

# reciprocal condition below which an SPD matrix is treated as singular
RCOND_MIN = 1e-12


class Cholesky:
    """Cholesky factor of an SPD matrix with solve / inverse / logdet.

    Raises ``np.linalg.LinAlgError`` when the matrix is not numerically
    positive definite (factorization failure or rcond < RCOND_MIN).
    """

    def __init__(self, a):
        a = np.asarray(a, dtype=float)
        if a.size and not np.all(np.isfinite(a)):
            raise np.linalg.LinAlgError("non-finite matrix")
        self.n = a.shape[0]
        self.c = scipy.linalg.cholesky(a, lower=False, check_finite=False)
        if self.n:
            anorm = np.abs(a).sum(axis=0).max()
            rcond, info = dpocon(self.c, anorm)
            if info != 0 or not rcond >= RCOND_MIN:
                raise np.linalg.LinAlgError(f"ill-conditioned (rcond={rcond:.3g})")

    def solve(self, b):
        return scipy.linalg.cho_solve((self.c, False), b, check_finite=False)

    def inv(self):
        inv = self.solve(np.eye(self.n))
        return 0.5 * (inv + inv.T)

    def logdet(self):
        return 2.0 * np.log(np.diag(self.c)).sum()


def symmetrize(a):
    return 0.5 * (a + a.T)
