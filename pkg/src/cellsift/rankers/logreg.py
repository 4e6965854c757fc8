"""Multinomial logistic regression fit by plain gradient descent.

No external solver: full-batch descent with a backtracking (Armijo) line
search keeps the fit deterministic. The L2 penalty makes the optimum
unique, which is what guarantees duplicated feature columns end up with
equal coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import layers
from ..tensors import Dataset, NUM_CLASSES


@dataclass
class LogisticRegressionModel:
    coef: np.ndarray  # (3, E): per-class coefficient rows
    intercept: np.ndarray  # (3,)
    n_iter: int
    converged: bool

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return layers.softmax(x @ self.coef.T + self.intercept, axis=-1)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.predict_proba(x).argmax(axis=1)


def _objective(x, onehot, w, b, lam):
    n = x.shape[0]
    logits = x @ w + b
    logp = layers.log_softmax(logits)
    nll = -(onehot * logp).sum() / n
    penalty = 0.5 * lam * (w * w).sum() / n
    probs = np.exp(logp)
    gw = x.T @ (probs - onehot) / n + lam * w / n
    gb = (probs - onehot).mean(axis=0)
    return nll + penalty, gw, gb


def train_logreg(
    data: Dataset,
    l2: float = 1.0,
    max_iter: int = 5000,
    tol: float = 1e-6,
) -> LogisticRegressionModel:
    """Fit softmax regression from zero init; stop on gradient max-norm < tol.

    Intercepts are fitted but not penalized and do not contribute to
    feature importance.
    """
    x = data.features.data
    y = data.labels.labels
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("logistic regression needs at least two classes present")
    n, e = x.shape
    onehot = np.zeros((n, NUM_CLASSES))
    onehot[np.arange(n), y] = 1.0

    w = np.zeros((e, NUM_CLASSES))
    b = np.zeros(NUM_CLASSES)
    step = 1.0
    loss, gw, gb = _objective(x, onehot, w, b, l2)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = max(np.abs(gw).max(), np.abs(gb).max())
        if gnorm < tol:
            converged = True
            break
        gsq = (gw * gw).sum() + (gb * gb).sum()
        # Armijo backtracking; restart from a slightly larger step each
        # iteration so the accepted step can grow back after a bad patch.
        step = min(step * 2.0, 1e6)
        while True:
            w_new = w - step * gw
            b_new = b - step * gb
            loss_new, gw_new, gb_new = _objective(x, onehot, w_new, b_new, l2)
            if loss_new <= loss - 1e-4 * step * gsq:
                break
            step *= 0.5
            if step < 1e-12:
                raise RuntimeError("line search failed: step size underflow")
        if not np.isfinite(loss_new):
            raise RuntimeError(f"non-finite loss at iteration {it}")
        w, b, loss, gw, gb = w_new, b_new, loss_new, gw_new, gb_new
    return LogisticRegressionModel(w.T.copy(), b.copy(), it, converged)
