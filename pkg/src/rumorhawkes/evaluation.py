"""Classification metrics, the feature-engineering baseline and early-detection sweeps."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import optimize
from scipy.special import expit
from scipy.stats import rankdata

from .cascades import Cascade, CovariateSchema
from .gof import structural_virality

log = logging.getLogger(__name__)

TIME_GRID = (0.5, 1.0, 2.0, 6.0, 12.0, 24.0, 168.0)
COUNT_GRID = (5, 10, 25, 50, 100, 250, 500)
LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0)


def _is_false(labels) -> np.ndarray:
    out = []
    for lab in labels:
        if isinstance(lab, (bool, np.bool_)):
            out.append(bool(lab))
        elif lab in ("false", "true"):
            out.append(lab == "false")
        elif lab in (0, 1):
            out.append(bool(lab))
        else:
            raise ValueError(f"unrecognized label {lab!r}")
    return np.array(out, dtype=bool)


def auc(p_false, is_false) -> float:
    """Area under the ROC curve in percent; false rumors are the positive class.

    Mann-Whitney statistic with average ranks, so ties count one half.
    """
    p = np.asarray(p_false, dtype=float)
    y = _is_false(is_false)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined with a single class")
    ranks = rankdata(p)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2
    return u / (n_pos * n_neg) * 100.0


@dataclass(frozen=True)
class MetricsReport:
    auc: float
    balanced_accuracy: float
    sensitivity: float
    specificity: float
    precision: float
    f1: float
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        cols = ("AUC", "Balanced acc.", "Sensitivity", "Specificity", "Precision", "F1")
        vals = (self.auc, self.balanced_accuracy, self.sensitivity, self.specificity,
                self.precision, self.f1)
        w = [max(len(c), 7) for c in cols]
        head = "  ".join(c.rjust(n) for c, n in zip(cols, w))
        row = "  ".join(f"{v:.2f}".rjust(n) for v, n in zip(vals, w))
        counts = f"TP={self.tp} FP={self.fp} TN={self.tn} FN={self.fn} (threshold {self.threshold:g})"
        return f"{head}\n{row}\n{counts}"


def _pct(num: int, den: int) -> float:
    return 100.0 * num / den if den else 0.0


def compute_metrics(p_false, labels, threshold: float = 0.5) -> MetricsReport:
    """Metrics in percent at ``threshold``; an alarm is ``p_false >= threshold``.

    Undefined ratios (no predicted positives) are reported as 0.
    """
    p = np.asarray(p_false, dtype=float)
    y = _is_false(labels)
    a = auc(p, y)
    alarm = p >= threshold
    tp = int(np.sum(alarm & y))
    fp = int(np.sum(alarm & ~y))
    tn = int(np.sum(~alarm & ~y))
    fn = int(np.sum(~alarm & y))
    sens = _pct(tp, tp + fn)
    spec = _pct(tn, tn + fp)
    prec = _pct(tp, tp + fp)
    f1 = 2 * prec * sens / (prec + sens) if prec + sens > 0 else 0.0
    return MetricsReport(a, (sens + spec) / 2, sens, spec, prec, f1, threshold, tp, fp, tn, fn)


# ---- features ---------------------------------------------------------------


class FeatureRow(NamedTuple):
    size: float
    depth: float
    avg_depth: float
    size_to_depth: float
    avg_response_time: float
    avg_elapsed_time: float
    structural_virality: float
    diffusion_speed: float
    avg_followers: float
    avg_account_age: float
    avg_followees: float
    avg_engagement: float
    topic: float
    neg_emotion: float
    pos_emotion: float
    surprise: float


def extract_features(cascade: Cascade, schema: CovariateSchema | None = None) -> FeatureRow:
    """Aggregate one cascade into the baseline's feature vector.

    User covariates are averaged on the log1p scale; response and elapsed
    times are averaged over retweets (0 for a root-only cascade).
    """
    schema = schema or CovariateSchema()
    n = len(cascade)
    depth = cascade.depth
    max_depth = float(depth.max())
    duration = float(cascade.times[-1] - cascade.times[0])
    y = cascade.structural

    def user(name):
        if name not in schema.user_names:
            return 0.0
        return float(np.mean(np.log1p(cascade.user[:, schema.user_names.index(name)])))

    def z(name):
        return float(cascade.z[schema.cascade_names.index(name)]) if name in schema.cascade_names else 0.0

    return FeatureRow(
        size=float(n),
        depth=max_depth,
        avg_depth=float(depth.mean()),
        size_to_depth=n / max_depth if max_depth > 0 else float(n),
        avg_response_time=float(y[1:, 1].mean()) if n > 1 else 0.0,
        avg_elapsed_time=float(y[1:, 2].mean()) if n > 1 else 0.0,
        structural_virality=structural_virality(cascade),
        diffusion_speed=n / duration if duration > 0 else float(n),
        avg_followers=user("followers"),
        avg_account_age=user("account_age_days"),
        avg_followees=user("followees"),
        avg_engagement=user("engagement"),
        topic=z("topic_political"),
        neg_emotion=z("neg_emotion"),
        pos_emotion=z("pos_emotion"),
        surprise=z("surprise"),
    )


def feature_matrix(cascades: Sequence[Cascade], schema: CovariateSchema | None = None) -> np.ndarray:
    return np.array([extract_features(c, schema) for c in cascades], dtype=float)


# ---- logistic regression baseline -------------------------------------------


def _fit_logistic(X: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    n, d = X.shape
    Xb = np.column_stack([np.ones(n), X])

    def f(w):
        eta = Xb @ w
        # -loglik/n + lam/2 |beta|^2 (intercept unpenalized)
        nll = np.sum(np.logaddexp(0.0, eta) - y * eta) / n + 0.5 * lam * (w[1:] @ w[1:])
        g = Xb.T @ (expit(eta) - y) / n
        g[1:] += lam * w[1:]
        return nll, g

    res = optimize.minimize(f, np.zeros(d + 1), jac=True, method="L-BFGS-B",
                            options={"maxiter": 1000, "gtol": 1e-8})
    return res.x


def _folds(y: np.ndarray, k: int, rng) -> np.ndarray:
    """Stratified fold assignment."""
    fold = np.empty(len(y), dtype=int)
    for cls in (False, True):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        fold[idx] = np.arange(len(idx)) % k
    return fold


@dataclass(frozen=True)
class LogisticScorer:
    mean: np.ndarray
    scale: np.ndarray
    keep: np.ndarray
    weights: np.ndarray
    lam: float

    def predict_proba(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))[:, self.keep]
        Z = (X - self.mean) / self.scale
        return expit(self.weights[0] + Z @ self.weights[1:])


def _standardize_fit(X: np.ndarray):
    scale = X.std(axis=0)
    keep = scale > 1e-12
    if not keep.all():
        warnings.warn(f"dropping {int((~keep).sum())} constant feature(s)", stacklevel=3)
    return X[:, keep].mean(axis=0), scale[keep], keep


def _train_scorer(X, y, lam) -> LogisticScorer:
    mean, scale, keep = _standardize_fit(X)
    w = _fit_logistic((X[:, keep] - mean) / scale, y.astype(float), lam)
    return LogisticScorer(mean, scale, keep, w, lam)


def cross_validated_proba(X, labels, lam: float, folds: int = 10, seed=0) -> np.ndarray:
    """Out-of-fold ``p_false`` for every row."""
    X = np.asarray(X, dtype=float)
    y = _is_false(labels)
    fold = _folds(y, folds, np.random.default_rng(seed))
    out = np.empty(len(y))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for k in range(folds):
            test = fold == k
            if not test.any():
                continue
            out[test] = _train_scorer(X[~test], y[~test], lam).predict_proba(X[test])
    return out


def fit_logistic_baseline(X, labels, lambdas=LAMBDA_GRID, folds: int = 10,
                          seed=0) -> LogisticScorer:
    """L2-regularized logistic regression on standardized features.

    The penalty is picked from ``lambdas`` by k-fold cross-validated log-loss.
    """
    X = np.asarray(X, dtype=float)
    y = _is_false(labels)
    if y.all() or not y.any():
        raise ValueError("both classes are required")
    best, best_loss = None, math.inf
    for lam in lambdas:
        p = np.clip(cross_validated_proba(X, y, lam, folds, seed), 1e-12, 1 - 1e-12)
        loss = -np.mean(y * np.log(p) + (~y) * np.log(1 - p))
        if loss < best_loss - 1e-12:
            best, best_loss = lam, loss
    return _train_scorer(X, y, best)


# ---- early-detection sweeps -------------------------------------------------


def sweep_early_detection(model, cascades: Sequence[Cascade], times=TIME_GRID,
                          counts=COUNT_GRID, refit_train: Sequence[Cascade] | None = None,
                          sampler_config=None) -> dict:
    """AUC per truncation cell; ``None`` marks cells that cannot be evaluated.

    With ``refit_train`` the mixture is re-estimated on training cascades
    truncated the same way before each cell is scored.
    """
    from .mixture import score_many, train
    from .cascades import truncate

    labels = [c.label for c in cascades]

    def cell(time=None, count=None):
        if count is not None and not any(len(c) > count for c in cascades):
            return None
        m = model
        if refit_train is not None:
            cut_train = [truncate(c, time=time, count=count) for c in refit_train]
            kw = {} if sampler_config is None else {"config": sampler_config}
            m = train(cut_train, schema=model.schema, families=model.families,
                      prior_false=model.prior_false, mode=model.mode, **kw)
        cut = [truncate(c, time=time, count=count) for c in cascades]
        p = [s.p_false for s in score_many(m, cut)]
        try:
            return auc(p, labels)
        except ValueError:
            return None

    full = auc([s.p_false for s in score_many(model, cascades)], labels)
    return {
        "full": full,
        "time": {f"{t:g}": cell(time=float(t)) for t in times},
        "count": {str(int(n)): cell(count=int(n)) for n in counts},
    }


def sweep_table(result: dict) -> str:
    lines = []
    for key, title in (("time", "Time window (h)"), ("count", "Observed retweets")):
        cells = result[key]
        head = [title] + list(cells)
        vals = ["AUC"] + ["-" if v is None else f"{v:.2f}" for v in cells.values()]
        w = [max(len(a), len(b)) for a, b in zip(head, vals)]
        lines.append("  ".join(h.rjust(n) for h, n in zip(head, w)))
        lines.append("  ".join(v.rjust(n) for v, n in zip(vals, w)))
    lines.append(f"Full cascade AUC: {result['full']:.2f}")
    return "\n".join(lines)
