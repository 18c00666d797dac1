import numpy as np


def accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        return 0.0
    return float(np.mean(y_true == y_pred))


def _f1_for(y_true, y_pred, label) -> float:
    tp = np.sum((y_true == label) & (y_pred == label))
    fp = np.sum((y_true != label) & (y_pred == label))
    fn = np.sum((y_true == label) & (y_pred != label))
    denom = 2 * tp + fp + fn
    return float(2 * tp / denom) if denom else 0.0


def binary_f1(y_true, y_pred, positive: int = 1) -> float:
    return _f1_for(np.asarray(y_true), np.asarray(y_pred), positive)


def macro_f1(y_true, y_pred, n_classes: int) -> float:
    """Unweighted mean of per-class F1 over all ``n_classes`` labels."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    return float(np.mean([_f1_for(y_true, y_pred, c) for c in range(n_classes)]))


def f1_score(y_true, y_pred, n_classes: int) -> float:
    """Binary F1 of class 1 for two classes, macro F1 otherwise."""
    if n_classes == 2:
        return binary_f1(y_true, y_pred)
    return macro_f1(y_true, y_pred, n_classes)
