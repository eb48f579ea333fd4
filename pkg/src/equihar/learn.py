"""
The classifier head shared by every representation: a standardizer followed by an
L2-regularized multinomial logistic regression, plus classification metrics.

The objective is ``0.5 * ||W||^2 + C * sum_i cross_entropy(softmax(W x_i + b), y_i)``
with the biases unpenalized, minimized by L-BFGS from all-zero parameters.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from pathlib import Path

import numpy as np
import numpy.typing as npt
from scipy.optimize import OptimizeResult, minimize
from scipy.special import logsumexp, softmax
from sklearn.metrics import accuracy_score, confusion_matrix, f1_score

from equihar.codec import Record, dump_record, load_record, record
from equihar.errors import TrainingError
from equihar.features import (
    DEFAULT_BINS,
    GroupOnlyReading,
    RepresentationKind,
    amplitude_columns,
    spectral_only,
)

logger = logging.getLogger(__name__)

SCALER_STD_FLOOR = 1e-12
AMPLITUDE_LOG_OFFSET = 1e-12


@record(eq=False)
class ScalerParams(Record):
    mean: npt.NDArray[np.float64]
    std: npt.NDArray[np.float64]
    """
    Training standard deviations, with near-zero entries replaced by 1.
    """


def fit_scaler(X: npt.NDArray[np.float64]) -> ScalerParams:
    """
    Fit per-column standardization statistics on training rows only.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"Expected a non-empty feature matrix, got shape: {X.shape}")
    std = X.std(axis=0)
    return ScalerParams(mean=X.mean(axis=0), std=np.where(std < SCALER_STD_FLOOR, 1.0, std))


def transform(params: ScalerParams, X: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    if X.ndim != 2 or X.shape[1] != params.mean.shape[0]:
        raise ValueError(f"Expected {params.mean.shape[0]} columns, got shape: {X.shape}")
    return (X - params.mean) / params.std


@record
class LogRegHyperparams(Record):
    c_reg: float = 2.0
    """
    Inverse regularization strength, multiplying the data term.
    """

    max_iter: int = 1000
    tol: float = 1e-5
    """
    Stopping threshold on the largest gradient entry.
    """


@record(eq=False)
class LogRegModel(Record):
    weights: npt.NDArray[np.float64]
    biases: npt.NDArray[np.float64]
    classes: tuple[int, ...]
    hyperparams: LogRegHyperparams
    n_iter: int = 0
    converged: bool = False
    loss_history: tuple[float, ...] = ()
    """
    The objective at the initial point and after every accepted step.
    """

    @property
    def n_features(self) -> int:
        return int(self.weights.shape[1])


def one_hot(y: npt.NDArray[np.int64], classes: Sequence[int]) -> npt.NDArray[np.float64]:
    return (np.asarray(y)[:, np.newaxis] == np.asarray(classes)).astype(np.float64)


def objective(
    params: npt.NDArray[np.float64],
    X: npt.NDArray[np.float64],
    targets: npt.NDArray[np.float64],
    c_reg: float,
) -> tuple[float, npt.NDArray[np.float64]]:
    """
    Evaluate the training objective and its gradient.

    :param params: Flattened weights ``(C, d)`` followed by biases ``(C,)``.
    :param X: The standardized features ``(n, d)``.
    :param targets: One-hot labels ``(n, C)``.
    :param c_reg: The inverse regularization strength.
    :return: The objective and its gradient with respect to ``params``.
    """
    n_classes = targets.shape[1]
    n_features = X.shape[1]
    weights = params[: n_classes * n_features].reshape(n_classes, n_features)
    biases = params[n_classes * n_features :]

    scores = X @ weights.T + biases
    log_norm = logsumexp(scores, axis=1)
    cross_entropy = np.sum(log_norm - np.sum(scores * targets, axis=1))
    loss = 0.5 * np.sum(weights * weights) + c_reg * cross_entropy

    residual = c_reg * (np.exp(scores - log_norm[:, np.newaxis]) - targets)
    gradient = np.concatenate([(weights + residual.T @ X).ravel(), residual.sum(axis=0)])
    return float(loss), gradient


def fit_logreg(
    X: npt.NDArray[np.float64],
    y: npt.NDArray[np.int64],
    hyperparams: LogRegHyperparams | None = None,
) -> LogRegModel:
    """
    Train the multinomial classifier.

    :param X: The standardized training features.
    :param y: The training labels.
    :param hyperparams: The hyperparameters, defaults when omitted.
    :return: The trained model.
    """
    hyperparams = hyperparams or LogRegHyperparams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError(f"Features {X.shape} and labels {y.shape} do not match")
    if not np.all(np.isfinite(X)):
        raise ValueError("Training features contain non-finite values")
    classes = tuple(int(c) for c in np.unique(y))
    if len(classes) < 2:
        raise TrainingError(f"Training labels contain a single class: {classes}")

    targets = one_hot(y, classes)
    n_params = len(classes) * (X.shape[1] + 1)
    initial = np.zeros(n_params)
    history = [objective(initial, X, targets, hyperparams.c_reg)[0]]

    def fun(params: npt.NDArray[np.float64]) -> tuple[float, npt.NDArray[np.float64]]:
        loss, gradient = objective(params, X, targets, hyperparams.c_reg)
        if not (np.isfinite(loss) and np.all(np.isfinite(gradient))):
            raise TrainingError("Non-finite loss or gradient", iteration=len(history) - 1)
        return loss, gradient

    def callback(intermediate_result: OptimizeResult) -> None:
        history.append(float(intermediate_result.fun))

    result = minimize(
        fun,
        initial,
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={"maxiter": hyperparams.max_iter, "gtol": hyperparams.tol, "ftol": 0.0},
    )
    gradient_norm = float(np.max(np.abs(fun(result.x)[1])))
    converged = gradient_norm <= hyperparams.tol
    if not converged:
        logger.warning(
            "Logistic regression stopped before tolerance: iterations=%d gradient=%.3e (%s)",
            result.nit,
            gradient_norm,
            result.message,
        )

    n_weights = len(classes) * X.shape[1]
    return LogRegModel(
        weights=result.x[:n_weights].reshape(len(classes), X.shape[1]),
        biases=result.x[n_weights:],
        classes=classes,
        hyperparams=hyperparams,
        n_iter=int(result.nit),
        converged=converged,
        loss_history=tuple(history),
    )


def decision_scores(model: LogRegModel, X: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(f"Expected {model.n_features} features, got shape: {X.shape}")
    return X @ model.weights.T + model.biases  # type: ignore[no-any-return]


def predict_proba(model: LogRegModel, X: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    return softmax(decision_scores(model, X), axis=1)  # type: ignore[no-any-return]


def predict(model: LogRegModel, X: npt.NDArray[np.float64]) -> npt.NDArray[np.int64]:
    """
    Predict labels, breaking ties in favour of the smallest class id.
    """
    # argmax keeps the first maximum and classes are sorted
    return np.asarray(model.classes)[np.argmax(decision_scores(model, X), axis=1)]


@record(eq=False)
class Metrics(Record):
    accuracy: float
    weighted_f1: float
    confusion: npt.NDArray[np.int64]
    """
    Counts indexed by (true class, predicted class).
    """

    classes: tuple[int, ...]


def score(
    y_true: npt.NDArray[np.int64],
    y_pred: npt.NDArray[np.int64],
    classes: Sequence[int] | None = None,
) -> Metrics:
    """
    Compute accuracy, support-weighted F1 and the confusion matrix.

    :param y_true: The true labels.
    :param y_pred: The predicted labels.
    :param classes: The classes of the confusion matrix, those present by default.
    :return: The metrics.
    """
    if len(y_true) != len(y_pred):
        raise ValueError(f"Label lengths differ: {len(y_true)} and {len(y_pred)}")
    if classes is None:
        classes = sorted(set(np.asarray(y_true).tolist()) | set(np.asarray(y_pred).tolist()))
    labels = list(classes)
    return Metrics(
        accuracy=float(accuracy_score(y_true, y_pred)),
        weighted_f1=float(
            f1_score(y_true, y_pred, labels=labels, average="weighted", zero_division=0)
        ),
        confusion=confusion_matrix(y_true, y_pred, labels=labels),
        classes=tuple(int(c) for c in labels),
    )


@record(eq=False)
class TrainedHead(Record):
    """
    Everything needed to classify features of one representation.
    """

    kind: RepresentationKind
    k: int
    amplitude_log: bool
    spectral_only: bool
    group_only_reading: GroupOnlyReading
    scaler: ScalerParams
    model: LogRegModel


def design_matrix(
    features: npt.NDArray[np.float64],
    kind: RepresentationKind,
    k: int = DEFAULT_BINS,
    amplitude_log: bool = True,
    spectral_only_view: bool = False,
) -> npt.NDArray[np.float64]:
    """
    Turn extracted features into classifier inputs, before standardization.

    Amplitudes are either dropped (spectral-only view) or optionally mapped through
    ``log(a + 1e-12)``; both happen here, outside the feature maps.
    """
    if spectral_only_view:
        return spectral_only(features, kind, k)
    X = np.array(features, dtype=np.float64)
    if amplitude_log:
        columns = amplitude_columns(kind, k)
        X[:, columns] = np.log(X[:, columns] + AMPLITUDE_LOG_OFFSET)
    return X


def train_head(
    features: npt.NDArray[np.float64],
    labels: npt.NDArray[np.int64],
    kind: RepresentationKind,
    k: int = DEFAULT_BINS,
    amplitude_log: bool = True,
    spectral_only_view: bool = False,
    group_only_reading: GroupOnlyReading = GroupOnlyReading.PER_SENSOR,
    hyperparams: LogRegHyperparams | None = None,
) -> TrainedHead:
    """
    Fit the standardizer and the classifier on clean training features.
    """
    X = design_matrix(features, kind, k, amplitude_log, spectral_only_view)
    scaler = fit_scaler(X)
    model = fit_logreg(transform(scaler, X), labels, hyperparams)
    logger.info(
        "Trained %s head: features=%d iterations=%d converged=%s",
        kind.value,
        X.shape[1],
        model.n_iter,
        model.converged,
    )
    return TrainedHead(
        kind=kind,
        k=k,
        amplitude_log=amplitude_log,
        spectral_only=spectral_only_view,
        group_only_reading=group_only_reading,
        scaler=scaler,
        model=model,
    )


def head_predict(head: TrainedHead, features: npt.NDArray[np.float64]) -> npt.NDArray[np.int64]:
    X = design_matrix(features, head.kind, head.k, head.amplitude_log, head.spectral_only)
    return predict(head.model, transform(head.scaler, X))


def save_head(path: Path, head: TrainedHead) -> None:
    dump_record(path, head)


def load_head(path: Path) -> TrainedHead:
    return load_record(path, TrainedHead)
