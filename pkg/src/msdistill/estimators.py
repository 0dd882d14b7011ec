"""scikit-learn compatible wrappers.

All estimators take the multimodal design matrix ``X`` with rows
``[text (text_dim) | image | text_present | image_present]``, i.e. the output
of ``data.view_inputs(text, image, "multi")``. Labels are integer class
indices ``0..C-1``.

Typical use::

    teacher = TeacherClassifier(text_dim=16).fit(X_train, y_train)
    student = DistilledStudentClassifier(teacher=teacher.net_, text_dim=16)
    student.fit(X_train, y_train, X_meta=X_val, y_meta=y_val)
    student.score(X_test, y_test)

Pass ``teacher.net_`` (a plain network) rather than the fitted estimator if
you intend to ``sklearn.base.clone`` the student: ``clone`` refits nested
estimators from scratch.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import nn
from .data import ModalityView, mask_inputs
from .meta import MetaOptConfig
from .training import METHODS, train_student, train_teacher
from .weighting import meta_forward


def _split_blocks(X, text_dim):
    X = check_array(X, dtype=np.float64)
    if X.shape[1] < text_dim + 3:
        raise ValueError(
            f"X has {X.shape[1]} columns; expected text ({text_dim}) + image + 2 presence bits"
        )
    return X[:, :text_dim], X[:, text_dim:-2]


def _check_labels(y, num_classes=None):
    check_classification_targets(y)
    y = np.asarray(y)
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integer class indices")
        y = y.astype(np.int64)
    C = int(y.max()) + 1 if num_classes is None else int(num_classes)
    if y.min() < 0 or y.max() >= C:
        raise ValueError(f"labels must lie in [0, {C})")
    return y, C


def _resolve_teacher(teacher):
    if teacher is None or isinstance(teacher, nn.DenseNet):
        return teacher
    check_is_fitted(teacher, "net_")
    return teacher.net_


class ModalityMasker(TransformerMixin, BaseEstimator):
    """Replace multimodal inputs with one modality view.

    ``view`` is ``"multi"``, ``"image"`` (text masked) or ``"text"`` (image
    masked); a masked block is zeroed and its presence bit cleared.
    """

    def __init__(self, view="multi", text_dim=16):
        self.view = view
        self.text_dim = text_dim

    def fit(self, X, y=None):
        ModalityView(self.view)
        _split_blocks(X, self.text_dim)
        self.n_features_in_ = np.shape(X)[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, fitted on {self.n_features_in_}")
        return mask_inputs(X, self.view, self.text_dim)


class _NetClassifier(ClassifierMixin, BaseEstimator):

    def decision_function(self, X):
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64)
        return nn.forward(self.net_, X)

    def predict_proba(self, X, tau=1.0):
        return nn.softmax_temp(self.decision_function(X), tau)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]


class TeacherClassifier(_NetClassifier):
    """Large network trained with hard-label CE, AdamW and random view dropout."""

    def __init__(self, text_dim=16, hidden=(128, 128), activation="relu", epochs=30,
                 batch_size=32, lr=1e-3, weight_decay=0.01, view_dropout=True, random_state=0):
        self.text_dim = text_dim
        self.hidden = hidden
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.view_dropout = view_dropout
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y, C = _check_labels(y)
        text, image = _split_blocks(X, self.text_dim)
        self.net_ = train_teacher(
            text, image, y, C, hidden=tuple(self.hidden), activation=self.activation,
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            weight_decay=self.weight_decay, view_dropout=self.view_dropout,
            seed=0 if self.random_state is None else self.random_state,
        )
        self.classes_ = np.arange(C)
        self.n_features_in_ = X.shape[1]
        return self


class DistilledStudentClassifier(_NetClassifier):
    """Small network distilled from a frozen teacher.

    ``method`` is one of ``small`` (no teacher), ``kd``, ``msd-population``,
    ``msd-importance``, ``msd-correctness`` or ``msd-meta``. After ``fit``,
    ``net_`` is the checkpoint chosen by ``checkpoint`` (``"best"`` validation
    accuracy on ``X_meta``, or ``"final"``), ``final_net_`` the last iterate,
    ``trace_`` the training trace and, for ``msd-meta``, ``meta_net_`` the
    learned weighting network. ``optimizer``, ``lr`` and ``weight_decay``
    apply to the non-meta methods; ``msd-meta`` steps with SGD at ``alpha``.
    """

    def __init__(self, teacher=None, method="msd-meta", text_dim=16, hidden=(16,),
                 activation="relu", tau=4.0, lam=0.5, alpha=0.05, beta=1e-3, batch_size=32,
                 meta_batch_size=32, iterations=3000, population_weights=(1.0, 0.5, 0.5),
                 meta_hidden=64, eval_interval=50, checkpoint="best", optimizer="adamw",
                 lr=1e-3, weight_decay=0.01, random_state=1):
        self.teacher = teacher
        self.method = method
        self.text_dim = text_dim
        self.hidden = hidden
        self.activation = activation
        self.tau = tau
        self.lam = lam
        self.alpha = alpha
        self.beta = beta
        self.batch_size = batch_size
        self.meta_batch_size = meta_batch_size
        self.iterations = iterations
        self.population_weights = population_weights
        self.meta_hidden = meta_hidden
        self.eval_interval = eval_interval
        self.checkpoint = checkpoint
        self.optimizer = optimizer
        self.lr = lr
        self.weight_decay = weight_decay
        self.random_state = random_state

    def fit(self, X, y, X_meta=None, y_meta=None, X_eval=None, y_eval=None):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.checkpoint not in ("best", "final"):
            raise ValueError("checkpoint must be 'best' or 'final'")
        teacher = _resolve_teacher(self.teacher)
        X, y = check_X_y(X, y, dtype=np.float64)
        C = teacher.layer_dims[-1] if teacher is not None else None
        y, C = _check_labels(y, C)

        def triple(Xs, ys):
            if Xs is None:
                return None
            Xs, ys = check_X_y(Xs, ys, dtype=np.float64)
            t, i = _split_blocks(Xs, self.text_dim)
            return t, i, _check_labels(ys, C)[0]

        val = triple(X_meta, y_meta)
        test = triple(X_eval, y_eval)
        text, image = _split_blocks(X, self.text_dim)
        run = train_student(
            self.method, (text, image, y), teacher,
            hidden=tuple(self.hidden), activation=self.activation, tau=self.tau, lam=self.lam,
            meta_cfg=MetaOptConfig(self.alpha, self.beta, self.batch_size, self.meta_batch_size, self.iterations),
            population=tuple(self.population_weights), meta_hidden=self.meta_hidden,
            seed=1 if self.random_state is None else self.random_state,
            val=val, test=test, eval_interval=self.eval_interval,
            optimizer=self.optimizer, lr=self.lr, weight_decay=self.weight_decay,
        )
        use_best = self.checkpoint == "best" and val is not None
        self.net_ = run.best if use_best else run.student
        self.final_net_ = run.student
        self.best_iteration_ = run.best_iteration if use_best else self.iterations
        self.trace_ = run.trace
        self.meta_net_ = run.meta
        self.classes_ = np.arange(C)
        self.n_features_in_ = X.shape[1]
        return self

    def modality_weights(self, X):
        """Per-sample (w, w_v, w_t) the learned meta-net assigns (msd-meta only)."""
        check_is_fitted(self, "meta_net_")
        if self.meta_net_ is None:
            raise AttributeError("modality_weights is only available for method='msd-meta'")
        teacher = _resolve_teacher(self.teacher)
        X = check_array(X, dtype=np.float64)
        p = [nn.softmax_temp(nn.forward(teacher, mask_inputs(X, v, self.text_dim)), 1.0)
             for v in ("multi", "image", "text")]
        return meta_forward(self.meta_net_, *p)
