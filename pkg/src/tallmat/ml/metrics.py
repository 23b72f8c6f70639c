"""Evaluation helpers."""

import numpy as np
from sklearn.metrics import adjusted_rand_score


def adjusted_rand_index(truth, pred) -> float:
    return float(adjusted_rand_score(np.asarray(truth).reshape(-1), np.asarray(pred).reshape(-1)))


def accuracy(truth, pred) -> float:
    truth = np.asarray(truth).reshape(-1)
    pred = np.asarray(pred).reshape(-1)
    return float(np.mean(truth == pred))
