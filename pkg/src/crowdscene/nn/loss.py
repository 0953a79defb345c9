import numpy as np

PROB_EPS = 1e-12


def kl_from_log_probs(y, log_probs):
    """sum_n sum_c y log(y / y_hat) with log y_hat clipped at log(1e-12).

    Terms with y_c == 0 contribute nothing.
    """
    y = np.asarray(y, dtype=np.float64)
    logq = np.maximum(np.asarray(log_probs, dtype=np.float64), np.log(PROB_EPS))
    pos = y > 0
    return float(np.sum(y[pos] * (np.log(y[pos]) - logq[pos])))


def kl_loss(y, y_hat, params=None, l2_lambda=0.0):
    """KL divergence between soft labels and predictions plus (lambda/2)||theta||^2.

    ``y`` and ``y_hat`` are (N, C) arrays; ``params`` is a :class:`Vgg15Params`
    (or anything with ``squared_norm()``), required only when ``l2_lambda`` > 0.
    """
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    y_hat = np.atleast_2d(np.asarray(y_hat, dtype=np.float64))
    if y.shape != y_hat.shape:
        raise ValueError(f"label/prediction shapes differ: {y.shape} vs {y_hat.shape}")
    loss = kl_from_log_probs(y, np.log(np.maximum(y_hat, PROB_EPS)))
    if l2_lambda:
        loss += 0.5 * l2_lambda * params.squared_norm()
    return loss


def cross_entropy(y, y_hat):
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    y_hat = np.atleast_2d(np.asarray(y_hat, dtype=np.float64))
    return float(-np.sum(y * np.log(np.maximum(y_hat, PROB_EPS))))
