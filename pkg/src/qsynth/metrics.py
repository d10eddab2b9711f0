"""Marginal fidelity and real-vs-synthetic detectability."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidArgumentError

REPORT_SCHEMA = "qsynth.fidelity"
REPORT_VERSION = 1


def _as_sample(a, name):
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.size == 0:
        raise InvalidArgumentError(f"{name} must be non-empty")
    return a


def kolmogorov_sf(lam: float) -> float:
    """Survival function of the Kolmogorov distribution, ``P(K > lam)``.

    Uses the alternating series for large arguments and the equivalent
    theta-function form for small ones, where the alternating series converges
    too slowly to truncate.
    """
    if lam <= 0:
        return 1.0
    if lam < 1.0:
        # P(K <= lam) = sqrt(2 pi)/lam * sum_k exp(-(2k-1)^2 pi^2 / (8 lam^2))
        total, k = 0.0, 1
        while True:
            term = math.exp(-((2 * k - 1) ** 2) * math.pi**2 / (8 * lam**2))
            total += term
            if term < 1e-12 or k > 100:
                break
            k += 1
        return 1.0 - math.sqrt(2 * math.pi) / lam * total
    total, k = 0.0, 1
    while True:
        term = math.exp(-2 * k * k * lam * lam)
        total += term if k % 2 else -term
        if term < 1e-12 or k > 100:
            break
        k += 1
    return 2.0 * total


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample KS statistic and asymptotic two-sided p-value."""
    a = np.sort(_as_sample(a, "a"))
    b = np.sort(_as_sample(b, "b"))
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    stat = float(max(np.max(cdf_a - cdf_b), np.max(cdf_b - cdf_a), 0.0))
    lam = stat * math.sqrt(a.size * b.size / (a.size + b.size))
    p = min(max(kolmogorov_sf(lam), np.finfo(float).tiny), 1.0)
    return stat, p


def wasserstein_1d(a, b) -> float:
    """Exact 1-Wasserstein distance between two empirical distributions."""
    a = np.sort(_as_sample(a, "a"))
    b = np.sort(_as_sample(b, "b"))
    pooled = np.sort(np.concatenate([a, b]))
    widths = np.diff(pooled)
    cdf_a = np.searchsorted(a, pooled[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, pooled[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * widths))


def summarize(per_dim_k, per_dim_p, per_dim_w, q: float = 75.0):
    """Return ``(K_med, P_med, W_med, W_q)`` with linear-interpolation percentiles."""
    k, p, w = (np.asarray(v, dtype=float) for v in (per_dim_k, per_dim_p, per_dim_w))
    return (float(np.median(k)), float(np.median(p)), float(np.median(w)),
            float(np.percentile(w, q, method="linear")))


# ---------------------------------------------------------------------------
# detector


@dataclass(frozen=True)
class LogRegModel:
    weights: np.ndarray
    bias: float
    n_iter: int
    converged: bool

    def decision_function(self, x) -> np.ndarray:
        return np.atleast_2d(np.asarray(x, dtype=float)) @ self.weights + self.bias

    def predict_proba(self, x) -> np.ndarray:
        z = self.decision_function(x)
        return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def _check_binary(labels):
    y = np.asarray(labels).reshape(-1)
    if not np.all(np.isin(y, (0, 1))):
        raise InvalidArgumentError("labels must be 0 or 1")
    if y.size == 0 or y.min() == y.max():
        raise InvalidArgumentError("both classes must be present")
    return y.astype(float)


def fit_logreg(features, labels, max_iter: int = 5000, step: float = 0.1, tol: float = 1e-6) -> LogRegModel:
    """Full-batch gradient descent on mean BCE from a zero start."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = _check_binary(labels)
    if x.shape[0] != y.size:
        raise InvalidArgumentError("feature and label counts differ")
    w = np.zeros(x.shape[1])
    b = 0.0
    n = y.size
    for it in range(1, max_iter + 1):
        z = np.clip(x @ w + b, -500, 500)
        r = 1.0 / (1.0 + np.exp(-z)) - y
        gw = x.T @ r / n
        gb = r.sum() / n
        if max(np.max(np.abs(gw), initial=0.0), abs(gb)) < tol:
            return LogRegModel(w, b, it - 1, True)
        w = w - step * gw
        b = b - step * gb
    return LogRegModel(w, b, max_iter, False)


def auc_roc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    s = np.asarray(scores, dtype=float).reshape(-1)
    y = _check_binary(labels)
    if s.size != y.size:
        raise InvalidArgumentError("score and label counts differ")
    ranks = rankdata(s)
    n_pos = y.sum()
    n_neg = y.size - n_pos
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels):
    """ROC points ``(fpr, tpr, thresholds)``; one point per distinct score, plus the origin."""
    s = np.asarray(scores, dtype=float).reshape(-1)
    y = _check_binary(labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    distinct = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(y)[distinct]
    fps = (distinct + 1) - tps
    tpr = np.r_[0.0, tps / y.sum()]
    fpr = np.r_[0.0, fps / (y.size - y.sum())]
    thresholds = np.r_[np.inf, s[distinct]]
    return fpr, tpr, thresholds


def stratified_split(labels, train_frac: float, rng):
    """Shuffle each class separately and take ``round(train_frac * n_c)`` rows for training."""
    y = np.asarray(labels)
    train, test = [], []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(idx.size)]
        cut = int(round(train_frac * idx.size))
        train.append(idx[:cut])
        test.append(idx[cut:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def detectability_audit(real, synthetic, split_ratio: float = 0.7, seed: int = 0):
    """Train a logistic-regression detector (real=1, synthetic=0) and score it on held-out rows.

    Returns ``(auc, gap, roc)`` where ``roc`` is the ``(fpr, tpr, thresholds)`` tuple.
    """
    real = np.atleast_2d(np.asarray(real, dtype=float))
    synthetic = np.atleast_2d(np.asarray(synthetic, dtype=float))
    if min(real.shape[0], synthetic.shape[0]) < 20:
        raise InvalidArgumentError("detectability audit needs at least 20 rows per class")
    x = np.vstack([real, synthetic])
    y = np.r_[np.ones(real.shape[0]), np.zeros(synthetic.shape[0])]
    rng = np.random.default_rng(seed)
    tr, te = stratified_split(y, split_ratio, rng)
    model = fit_logreg(x[tr], y[tr])
    scores = model.predict_proba(x[te])
    auc = auc_roc(scores, y[te])
    return auc, abs(auc - 0.5), roc_curve(scores, y[te])


# ---------------------------------------------------------------------------
# report


@dataclass
class FidelityReport:
    ks: list
    ks_pvalues: list
    wasserstein: list
    ks_median: float
    ks_pvalue_median: float
    wasserstein_median: float
    wasserstein_p75: float
    auc: float
    detectability_gap: float
    n: int
    sigma: float = 0.0

    def to_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA, "version": REPORT_VERSION, **asdict(self)}

    @classmethod
    def from_dict(cls, doc: dict) -> "FidelityReport":
        if doc.get("schema") != REPORT_SCHEMA or doc.get("version") != REPORT_VERSION:
            raise InvalidArgumentError(f"not a {REPORT_SCHEMA} v{REPORT_VERSION} document")
        names = {f.name for f in fields(cls)}
        body = {k: v for k, v in doc.items() if k in names}
        report = cls(**body)
        report.validate()
        return report

    def validate(self):
        ok = (
            all(0.0 <= k <= 1.0 for k in self.ks)
            and all(0.0 < p <= 1.0 for p in self.ks_pvalues)
            and all(w >= 0.0 for w in self.wasserstein)
            and 0.0 <= self.auc <= 1.0
            and abs(self.detectability_gap - abs(self.auc - 0.5)) <= 1e-12
        )
        if not ok:
            raise InvalidArgumentError("fidelity report violates its invariants")


def perturb(x, sigma: float, rng) -> np.ndarray:
    """Bounded instance noise: ``clip(x + sigma * N(0, I), -1, 1)``."""
    x = np.asarray(x, dtype=float)
    if sigma == 0:
        return np.clip(x, -1.0, 1.0)
    return np.clip(x + sigma * rng.standard_normal(x.shape), -1.0, 1.0)


def fidelity_report(real, synthetic, seed: int = 0, sigma: float = 0.0, split_ratio: float = 0.7,
                    with_roc: bool = False):
    """Per-dimension KS/Wasserstein plus the detector audit on (optionally noised) samples.

    With ``with_roc=True`` returns ``(report, roc)``.
    """
    rng = np.random.default_rng(seed)
    real = perturb(np.atleast_2d(real), sigma, rng)
    synthetic = perturb(np.atleast_2d(synthetic), sigma, rng)
    if real.shape[1] != synthetic.shape[1]:
        raise InvalidArgumentError("real and synthetic samples must have the same width")
    ks, ps, ws = [], [], []
    for j in range(real.shape[1]):
        k, p = ks_two_sample(real[:, j], synthetic[:, j])
        ks.append(k)
        ps.append(p)
        ws.append(wasserstein_1d(real[:, j], synthetic[:, j]))
    k_med, p_med, w_med, w_75 = summarize(ks, ps, ws)
    auc, gap, roc = detectability_audit(real, synthetic, split_ratio, seed)
    report = FidelityReport(ks, ps, ws, k_med, p_med, w_med, w_75, auc, gap,
                            int(min(real.shape[0], synthetic.shape[0])), float(sigma))
    return (report, roc) if with_roc else report
