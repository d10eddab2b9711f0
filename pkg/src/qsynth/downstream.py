"""Downstream fraud classifiers and the augmentation experiments built on them."""
from __future__ import annotations

import csv
import json
import math
from functools import lru_cache, reduce
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import neural as nn
from . import quantum_sim as qs
from .errors import InvalidArgumentError, TrainingError
from .metrics import _check_binary, auc_roc, fit_logreg, stratified_split
from .seeding import child_seed, substream

REPORT_COLUMNS = ["precision_0", "recall_0", "f1_0", "precision_1", "recall_1", "f1_1", "auc", "accuracy"]


# ---------------------------------------------------------------------------
# reports


def _ratio(num, den):
    return (num / den, False) if den else (0.0, True)


def _f1(p, r):
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass(frozen=True)
class ClassifierReport:
    tp: int
    fn: int
    fp: int
    tn: int
    precision_0: float
    recall_0: float
    f1_0: float
    precision_1: float
    recall_1: float
    f1_1: float
    accuracy: float
    auc: float
    zero_division: bool = False

    @classmethod
    def from_counts(cls, tp, fn, fp, tn, auc):
        p1, z1 = _ratio(tp, tp + fp)
        r1, z2 = _ratio(tp, tp + fn)
        p0, z3 = _ratio(tn, tn + fn)
        r0, z4 = _ratio(tn, tn + fp)
        acc = (tp + tn) / (tp + fn + fp + tn)
        return cls(int(tp), int(fn), int(fp), int(tn), p0, r0, _f1(p0, r0), p1, r1, _f1(p1, r1),
                   acc, float(auc), z1 or z2 or z3 or z4)

    def row(self):
        return [getattr(self, c) for c in REPORT_COLUMNS]


def evaluate_classifier(model, features, labels, threshold: float = 0.5) -> ClassifierReport:
    """Confusion-based report; a score at or above ``threshold`` counts as fraud."""
    y = _check_binary(labels).astype(int)
    scores = np.asarray(model.predict_proba(features), dtype=float).reshape(-1)
    pred = scores >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    tn = int(np.sum(~pred & (y == 0)))
    return ClassifierReport.from_counts(tp, fn, fp, tn, auc_roc(scores, y))


# ---------------------------------------------------------------------------
# minibatch trainer shared by the QNN and the ANN


def _bce_loss(prob, y):
    p = np.clip(prob, 1e-7, 1 - 1e-7)
    return float(np.mean(-y * np.log(p) - (1 - y) * np.log(1 - p)))


def _fit_minibatch(model, x, y, epochs, batch, lr, rng):
    """Adam(0.9, 0.999) on mean BCE; ``model`` supplies ``loss_and_grad``, ``arrays`` and ``updated``."""
    adam = nn.AdamState(lr, beta1=0.9, beta2=0.999, eps=1e-8)
    losses = []
    for epoch in range(epochs):
        order = rng.permutation(len(y))
        total = 0.0
        for start in range(0, len(y), batch):
            idx = order[start:start + batch]
            loss, grads = model.loss_and_grad(x[idx], y[idx])
            try:
                model = model.updated(nn.adam_step(adam, model.arrays(), grads))
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}: {exc}") from exc
            total += loss * len(idx)
        losses.append(total / len(y))
    return model, losses


def _check_training_set(x, y):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = _check_binary(y)
    if x.shape[0] != y.size:
        raise InvalidArgumentError("feature and label counts differ")
    return x, y


# ---------------------------------------------------------------------------
# QNN


@dataclass(frozen=True)
class QnnConfig:
    n_qubits: int = 6
    n_layers: int = 3
    head_hidden: int = 8
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 64
    embed_scale: float = math.pi / 2

    def __post_init__(self):
        if min(self.n_qubits, self.n_layers, self.head_hidden, self.batch_size) < 1 or self.epochs < 0 or self.lr <= 0:
            raise InvalidArgumentError("invalid QnnConfig")


def qnn_ops(n_qubits: int, n_layers: int) -> list[tuple]:
    """RY embedding, then per layer RZ RY RZ on every qubit and a CNOT ring with offset 1.

    Columns ``0..n-1`` are the embedding angles; layer ``l``, qubit ``q``,
    rotation ``c`` uses column ``n + 3 * (l * n + q) + c``.
    """
    n = n_qubits
    ops = [("y", q, q) for q in range(n)]
    for layer in range(n_layers):
        for q in range(n):
            base = n + 3 * (layer * n + q)
            ops += [("z", q, base), ("y", q, base + 1), ("z", q, base + 2)]
        if n > 1:
            ops += [("cnot", q, (q + 1) % n) for q in range(n)]
    return ops


@dataclass(frozen=True)
class QnnModel:
    weights: np.ndarray  # (layers, qubits, 3)
    head: nn.MLPParams
    config: QnnConfig

    def arrays(self):
        return {"weights": self.weights, **{f"head_{k}": v for k, v in self.head.as_dict().items()}}

    def updated(self, arrays):
        head = self.head.with_arrays({k[5:]: v for k, v in arrays.items() if k.startswith("head_")})
        return QnnModel(arrays.get("weights", self.weights), head, self.config)

    def _embed_angles(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = self.config.n_qubits
        if x.shape[1] > n:
            raise InvalidArgumentError(f"QNN takes at most {n} features, got {x.shape[1]}")
        embed = np.zeros((x.shape[0], n))
        embed[:, :x.shape[1]] = self.config.embed_scale * x
        return embed

    def angle_matrix(self, x):
        """Per-sample angle matrix in the column layout of :func:`qnn_ops`."""
        embed = self._embed_angles(x)
        return np.hstack([embed, np.broadcast_to(self.weights.reshape(1, -1), (len(embed), self.weights.size))])

    def readout(self, x):
        circuit = _SharedCircuit(self.weights)
        return circuit.forward(self._embed_angles(x))[2]

    def predict_proba(self, x):
        return nn.mlp_forward(self.head, self.readout(x))[0][:, 0]

    def loss_and_grad(self, x, y):
        circuit = _SharedCircuit(self.weights)
        psi0, psi, ev = circuit.forward(self._embed_angles(x))
        prob, cache = nn.mlp_forward(self.head, ev)
        prob = prob[:, 0]
        dpre = (prob - y)[:, None] / len(y)
        head_grads, dev = nn.mlp_backward(self.head, cache, dpre, wrt_output_pre=True)
        grads = {"weights": circuit.weight_vjp(psi0, psi, dev)}
        grads.update({f"head_{k}": v for k, v in head_grads.items()})
        return _bce_loss(prob, y), grads


_HALF_I_Y = -0.5j * np.array([[0, -1j], [1j, 0]])
_HALF_I_Z = -0.5j * np.array([[1, 0], [0, -1]])


class _SharedCircuit:
    """The QNN ansatz with batch-independent weights, held as dense ``2^n x 2^n`` layer unitaries.

    Only the embedding varies per sample, so the whole batch shares one
    unitary and weight gradients reduce to traces against one matrix.
    """

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=float)
        n_layers, n, _ = self.weights.shape
        self.n = n
        self.ring = qs.cnot_ring_matrix(n)
        self.factors, self.dfactors, self.layers = [], [], []
        for w in self.weights:
            rz_phi, ry, rz_om = (qs.rotation_matrices(a, w[:, c]) for c, a in enumerate("zyz"))
            rot = rz_om @ ry @ rz_phi
            drot = np.stack([rz_om @ ry @ _HALF_I_Z @ rz_phi,
                             rz_om @ _HALF_I_Y @ ry @ rz_phi,
                             _HALF_I_Z @ rot], axis=1)
            self.factors.append(rot)
            self.dfactors.append(drot)
            self.layers.append(self.ring @ reduce(np.kron, rot))
        self.unitary = reduce(lambda acc, layer: layer @ acc, self.layers, np.eye(2**n, dtype=complex))

    def forward(self, embed_angles):
        half = embed_angles / 2.0
        c, s = np.cos(half), np.sin(half)
        psi0 = np.ones((len(half), 1))
        for q in range(self.n):
            psi0 = (psi0[:, :, None] * np.stack([c[:, q], s[:, q]], axis=1)[:, None, :]).reshape(len(half), -1)
        psi = psi0 @ self.unitary.T
        ev = np.clip((np.abs(psi) ** 2) @ qs.z_signs(self.n).T, -1.0, 1.0)
        return psi0, psi, ev

    def weight_vjp(self, psi0, psi, cotangent):
        """Gradient of ``sum(cotangent * <Z>)`` with respect to the ``(layers, n, 3)`` weights."""
        lam = psi * (cotangent @ qs.z_signs(self.n))
        rho = psi0.T @ lam.conj()
        dim = 2**self.n
        before = [np.eye(dim, dtype=complex)]
        for layer in self.layers[:-1]:
            before.append(layer @ before[-1])
        after = np.eye(dim, dtype=complex)
        grad = np.zeros_like(self.weights)
        for l in range(len(self.layers) - 1, -1, -1):
            env = before[l] @ rho @ after @ self.ring
            for q, e in enumerate(_environments(env, self.factors[l])):
                grad[l, q] = 2.0 * np.real(np.einsum("cij,ji->c", self.dfactors[l][q], e))
            after = after @ self.layers[l]
        return grad


@lru_cache(maxsize=None)
def _environment_plan(n):
    rows, cols = "abcdefghijkl"[:n], "mnopqrstuvwx"[:n]
    plans = []
    for q in range(n):
        subs = [rows + cols] + [cols[p] + rows[p] for p in range(n) if p != q]
        expr = ",".join(subs) + "->" + rows[q] + cols[q]
        shapes = [(2,) * (2 * n)] + [(2, 2)] * (n - 1)
        path = np.einsum_path(expr, *[np.empty(s) for s in shapes], optimize="greedy")[0]
        plans.append((expr, path))
    return plans


def _environments(m, factors):
    """``E_q`` with ``tr(kron(F_0..F_{n-1}) m) = tr(F_q E_q)`` for every ``q``."""
    n = len(factors)
    t = m.reshape((2,) * (2 * n))
    out = []
    for q, (expr, path) in enumerate(_environment_plan(n)):
        others = [factors[p] for p in range(n) if p != q]
        out.append(np.einsum(expr, t, *others, optimize=path))
    return out


def qnn_init(config: QnnConfig, rng) -> QnnModel:
    weights = rng.uniform(0.0, 2 * math.pi, (config.n_layers, config.n_qubits, 3))
    head = nn.MLPParams.init([config.n_qubits, config.head_hidden, 1], rng, output="sigmoid")
    return QnnModel(weights, head, config)


def qnn_train(features, labels, config: QnnConfig = QnnConfig(), seed: int = 0):
    """Returns ``(model, per-epoch mean losses)``."""
    x, y = _check_training_set(features, labels)
    if x.shape[1] > config.n_qubits:
        raise InvalidArgumentError(f"QNN takes at most {config.n_qubits} features, got {x.shape[1]}")
    rng = np.random.default_rng(seed)
    model = qnn_init(config, rng)
    return _fit_minibatch(model, x, y, config.epochs, config.batch_size, config.lr, rng)


# ---------------------------------------------------------------------------
# ANN and logistic regression


@dataclass(frozen=True)
class AnnModel:
    params: nn.MLPParams

    def arrays(self):
        return self.params.as_dict()

    def updated(self, arrays):
        return AnnModel(self.params.with_arrays(arrays))

    def predict_proba(self, x):
        return nn.mlp_forward(self.params, x)[0][:, 0]

    def loss_and_grad(self, x, y):
        prob, cache = nn.mlp_forward(self.params, x)
        prob = prob[:, 0]
        grads, _ = nn.mlp_backward(self.params, cache, (prob - y)[:, None] / len(y), wrt_output_pre=True)
        return _bce_loss(prob, y), grads


def ann_train(features, labels, seed: int = 0, hidden=(32, 16, 8), lr: float = 1e-3, epochs: int = 30,
              batch_size: int = 64, zero_init: bool = False):
    """Returns ``(model, per-epoch mean losses)``."""
    x, y = _check_training_set(features, labels)
    rng = np.random.default_rng(seed)
    params = nn.MLPParams.init([x.shape[1], *hidden, 1], rng, output="sigmoid", zero=zero_init)
    return _fit_minibatch(AnnModel(params), x, y, epochs, batch_size, lr, rng)


def logreg_train(features, labels, seed: int = 0, max_iter: int = 5000):
    x, y = _check_training_set(features, labels)
    model = fit_logreg(x, y, max_iter=max_iter)
    return model, []


CLASSIFIERS = ("qnn", "ann", "logreg")


def train_classifier(name: str, features, labels, seed: int, qnn_config: QnnConfig = QnnConfig()):
    if name == "qnn":
        return qnn_train(features, labels, qnn_config, seed)[0]
    if name == "ann":
        return ann_train(features, labels, seed)[0]
    if name == "logreg":
        return logreg_train(features, labels, seed)[0]
    raise InvalidArgumentError(f"unknown classifier {name!r}")


# ---------------------------------------------------------------------------
# experiment protocol


@dataclass(frozen=True)
class DownstreamSplit:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    @property
    def n_fraud_train(self):
        return int(np.sum(self.y_train == 1))


def split_indices(labels, seed: int = 0, train_frac: float = 0.7):
    """Stratified train/test row indices, fixed by ``seed``."""
    y = _check_binary(labels).astype(int)
    return stratified_split(y, train_frac, substream(seed, "downstream/split"))


def split_dataset(features, labels, seed: int = 0, train_frac: float = 0.7) -> DownstreamSplit:
    """Stratified split made once, before any synthetic rows exist."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = _check_binary(labels).astype(int)
    tr, te = split_indices(y, seed, train_frac)
    return DownstreamSplit(x[tr], y[tr], x[te], y[te])


def _subsample_majority(x, y, count, rng_name, seed):
    """All fraud rows plus ``count`` non-fraud rows; nested across ``count`` for a fixed seed."""
    neg = np.flatnonzero(y == 0)
    neg = neg[substream(seed, rng_name).permutation(neg.size)][:count]
    if neg.size < count:
        raise InvalidArgumentError(f"only {neg.size} non-fraud rows available, need {count}")
    return neg


def training_set(split: DownstreamSplit, synthetic, mode: str, seed: int, synthetic_only: bool = False):
    """Training rows for one cell: fraud (real and/or synthetic) plus non-fraud per ``mode``."""
    real_pos = split.x_train[split.y_train == 1]
    synthetic = np.zeros((0, split.x_train.shape[1])) if synthetic is None else np.atleast_2d(synthetic)
    pos = synthetic if synthetic_only else np.vstack([real_pos, synthetic])
    if mode == "balanced":
        neg = split.x_train[_subsample_majority(split.x_train, split.y_train, len(pos), "downstream/train-neg", seed)]
    elif mode == "imbalanced":
        neg = split.x_train[split.y_train == 0]
    else:
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    return np.vstack([pos, neg]), np.r_[np.ones(len(pos)), np.zeros(len(neg))]


def evaluation_set(split: DownstreamSplit, mode: str, seed: int):
    if mode == "imbalanced":
        return split.x_test, split.y_test
    n_pos = int(np.sum(split.y_test == 1))
    neg = _subsample_majority(split.x_test, split.y_test, n_pos, "downstream/test-neg", seed)
    idx = np.r_[np.flatnonzero(split.y_test == 1), neg]
    return split.x_test[idx], split.y_test[idx]


def run_cell(split, synthetic, mode, classifier, seed, synthetic_only=False,
             qnn_config: QnnConfig = QnnConfig()) -> ClassifierReport:
    x, y = training_set(split, synthetic, mode, seed, synthetic_only)
    model = train_classifier(classifier, x, y, child_seed(seed, f"downstream/{classifier}"), qnn_config)
    return evaluate_classifier(model, *evaluation_set(split, mode, seed))


@dataclass
class ExperimentRow:
    model: str
    setting: str
    n_synthetic: int
    report: ClassifierReport


def downstream_grid(split: DownstreamSplit, augmenters: dict, classifiers=CLASSIFIERS, seed: int = 0,
                    qnn_config: QnnConfig = QnnConfig()) -> list[ExperimentRow]:
    """Imbalanced and balanced baselines plus one balanced arm per augmenter.

    ``augmenters`` maps a name to a pool of synthetic fraud rows; each arm adds
    as many synthetic rows as there are real training fraud rows.
    """
    n1 = split.n_fraud_train
    rows = []
    for clf in classifiers:
        if clf not in CLASSIFIERS:
            raise InvalidArgumentError(f"unknown classifier {clf!r}")
        rows.append(ExperimentRow(clf, "imbalanced", 0, run_cell(split, None, "imbalanced", clf, seed,
                                                                 qnn_config=qnn_config)))
        rows.append(ExperimentRow(clf, "balanced", 0, run_cell(split, None, "balanced", clf, seed,
                                                               qnn_config=qnn_config)))
        for name, pool in augmenters.items():
            synth = _take(pool, n1, name)
            rows.append(ExperimentRow(clf, name, n1, run_cell(split, synth, "balanced", clf, seed,
                                                              qnn_config=qnn_config)))
    return rows


def _take(pool, n, name):
    pool = np.atleast_2d(np.asarray(pool, dtype=float))
    if len(pool) < n:
        raise InvalidArgumentError(f"augmenter {name!r} supplied {len(pool)} rows, need {n}")
    return pool[:n]


@dataclass(frozen=True)
class ScalingPlan:
    ratios: tuple = (0.0, 0.10, 0.25, 0.50, 1.00)
    synthetic_only: bool = True
    modes: tuple = ("balanced", "imbalanced")
    classifier: str = "qnn"
    seed: int = 0
    qnn: QnnConfig = QnnConfig()

    def __post_init__(self):
        r = tuple(float(v) for v in self.ratios)
        if list(r) != sorted(r) or any(v < 0 for v in r):
            raise InvalidArgumentError("ratios must be non-negative and sorted ascending")
        if any(m not in ("balanced", "imbalanced") for m in self.modes):
            raise InvalidArgumentError("modes must be 'balanced' or 'imbalanced'")
        object.__setattr__(self, "ratios", r)


def scaling_experiment(split: DownstreamSplit, synthetic, plan: ScalingPlan = ScalingPlan()) -> list[ExperimentRow]:
    """Inject ``ceil(r * N1_train)`` synthetic fraud rows per ratio, plus the synthetic-only cell."""
    n1 = split.n_fraud_train
    cells = [(f"{int(round(r * 100))}% synthetic", math.ceil(r * n1 - 1e-9), False) for r in plan.ratios]
    if plan.synthetic_only:
        cells.append(("synthetic only", n1, True))
    rows = []
    for mode in plan.modes:
        for label, n_syn, only in cells:
            synth = _take(synthetic, n_syn, "scaling")
            try:
                report = run_cell(split, synth, mode, plan.classifier, plan.seed, only, plan.qnn)
            except TrainingError as exc:
                raise TrainingError(f"{mode} / {label}: {exc}") from exc
            rows.append(ExperimentRow(plan.classifier, f"{mode}/{label}", n_syn, report))
    return rows


# ---------------------------------------------------------------------------
# export

TABLE_SCHEMA = "qsynth.experiment"
TABLE_VERSION = 1


def rows_to_dict(rows, meta=None) -> dict:
    return {"schema": TABLE_SCHEMA, "version": TABLE_VERSION, "meta": meta or {},
            "rows": [{"model": r.model, "setting": r.setting, "n_synthetic": r.n_synthetic,
                      **asdict(r.report)} for r in rows]}


def rows_from_dict(doc) -> list[ExperimentRow]:
    if doc.get("schema") != TABLE_SCHEMA or doc.get("version") != TABLE_VERSION:
        raise InvalidArgumentError(f"not a {TABLE_SCHEMA} v{TABLE_VERSION} document")
    out = []
    for r in doc["rows"]:
        body = {k: v for k, v in r.items() if k not in ("model", "setting", "n_synthetic")}
        out.append(ExperimentRow(r["model"], r["setting"], r["n_synthetic"], ClassifierReport(**body)))
    return out


def write_rows_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "setting", "n_synthetic", *REPORT_COLUMNS, "tp", "fn", "fp", "tn"])
        for r in rows:
            rep = r.report
            writer.writerow([r.model, r.setting, r.n_synthetic, *rep.row(), rep.tp, rep.fn, rep.fp, rep.tn])


def write_rows_json(rows, path, meta=None):
    Path(path).write_text(json.dumps(rows_to_dict(rows, meta), sort_keys=True, indent=1))
