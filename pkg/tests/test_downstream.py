import json

import numpy as np
import pytest

from qsynth import downstream as ds
from qsynth import neural as nn
from qsynth import quantum_sim as qs
from qsynth.errors import InvalidArgumentError

import oracles


def blobs(n, seed, dim=4, sep=0.5, sd=0.15):
    rng = np.random.default_rng(seed)
    y = np.r_[np.ones(n // 2), np.zeros(n - n // 2)]
    x = rng.normal(0, sd, (n, dim)) + np.where(y[:, None] == 1, sep, -sep)
    return np.clip(x, -1, 1), y


def fraud_table(n_neg=600, n_pos=60, seed=0):
    rng = np.random.default_rng(seed)
    x = np.clip(np.r_[rng.normal(-0.3, 0.25, (n_neg, 4)), rng.normal(0.4, 0.25, (n_pos, 4))], -1, 1)
    return x, np.r_[np.zeros(n_neg), np.ones(n_pos)].astype(int)


class Fixed:
    def __init__(self, scores):
        self.scores = np.asarray(scores, float)

    def predict_proba(self, x):
        return self.scores


# ---------------------------------------------------------------------------
# reports


def test_hand_built_confusion():
    rep = ds.ClassifierReport.from_counts(tp=9, fn=1, fp=2, tn=88, auc=0.9)
    assert rep.precision_1 == pytest.approx(9 / 11, abs=1e-15)
    assert rep.recall_1 == pytest.approx(0.9, abs=1e-15)
    assert rep.f1_1 == pytest.approx(0.857142857, abs=1e-9)
    assert rep.accuracy == pytest.approx(97 / 100)
    assert rep.precision_0 == pytest.approx(88 / 89) and rep.recall_0 == pytest.approx(88 / 90)


def test_perfect_classifier():
    y = np.array([0, 0, 1, 1, 0])
    rep = ds.evaluate_classifier(Fixed(y * 0.9 + 0.05), None, y)
    assert rep.row() == [1.0] * 8 and not rep.zero_division


def test_constant_half_score_predicts_positive():
    y = np.array([1, 0, 0, 0, 1, 0, 0, 0, 0, 0])
    rep = ds.evaluate_classifier(Fixed(np.full(10, 0.5)), None, y)
    assert rep.recall_1 == 1.0 and rep.precision_1 == pytest.approx(0.2)
    assert rep.recall_0 == 0.0 and rep.zero_division and rep.f1_0 == 0.0
    assert rep.auc == 0.5


def test_report_arithmetic_recomputes_from_counts():
    rng = np.random.default_rng(0)
    for _ in range(50):
        y = rng.integers(0, 2, 40)
        y[:2] = [0, 1]
        rep = ds.evaluate_classifier(Fixed(rng.random(40)), None, y)
        again = ds.ClassifierReport.from_counts(rep.tp, rep.fn, rep.fp, rep.tn, rep.auc)
        assert again == rep
        for p, r, f in ((rep.precision_0, rep.recall_0, rep.f1_0), (rep.precision_1, rep.recall_1, rep.f1_1)):
            assert abs(f - (0 if p + r == 0 else 2 * p * r / (p + r))) <= 1e-10
            assert all(0 <= v <= 1 for v in (p, r, f))


def test_single_class_test_set_rejected():
    with pytest.raises(InvalidArgumentError):
        ds.evaluate_classifier(Fixed([0.2, 0.3]), None, [1, 1])


# ---------------------------------------------------------------------------
# QNN


def test_qnn_circuit_matches_dense_unitary():
    rng = np.random.default_rng(1)
    model = ds.qnn_init(ds.QnnConfig(), rng)
    x = rng.uniform(-1, 1, (3, 4))
    ev = model.readout(x)
    ops = ds.qnn_ops(6, 3)
    for row, angles in zip(ev, model.angle_matrix(x)):
        u = np.eye(64, dtype=complex)
        for op in ops:
            if op[0] == "cnot":
                u = oracles.cnot_matrix(op[1], op[2], 6) @ u
            else:
                u = oracles.embed(oracles.rot(op[0], angles[op[2]]), op[1], 6) @ u
        psi = u[:, 0]
        want = [np.real(psi.conj() @ oracles.embed(oracles.Z, q, 6) @ psi) for q in range(6)]
        np.testing.assert_allclose(row, want, atol=1e-12)


def test_shared_weight_gradient_matches_adjoint():
    rng = np.random.default_rng(2)
    model = ds.qnn_init(ds.QnnConfig(), rng)
    x = rng.uniform(-1, 1, (7, 4))
    cot = rng.normal(size=(7, 6))
    _, grad = qs.expval_vjp(ds.qnn_ops(6, 3), 6, model.angle_matrix(x), cot)
    circuit = ds._SharedCircuit(model.weights)
    psi0, psi, _ = circuit.forward(model._embed_angles(x))
    np.testing.assert_allclose(circuit.weight_vjp(psi0, psi, cot), grad[:, 6:].sum(axis=0).reshape(3, 6, 3),
                               atol=1e-12)


def test_qnn_full_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    model = ds.qnn_init(ds.QnnConfig(), rng)
    x, y = rng.uniform(-1, 1, (2, 4)), np.array([1.0, 0.0])
    _, grads = model.loss_and_grad(x, y)
    for name, arr in model.arrays().items():
        fd = oracles.central_diff(lambda a: model.updated({name: a}).loss_and_grad(x, y)[0], arr, h=1e-6)
        np.testing.assert_allclose(grads[name], fd, rtol=1e-3, atol=1e-8)


def test_qnn_zero_head_gives_half():
    model = ds.qnn_init(ds.QnnConfig(), np.random.default_rng(0))
    zero = model.updated({f"head_{k}": np.zeros_like(v) for k, v in model.head.as_dict().items()})
    np.testing.assert_array_equal(zero.predict_proba(np.random.default_rng(1).uniform(-1, 1, (5, 4))), 0.5)


def test_qnn_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        ds.qnn_train(np.zeros((4, 7)), [0, 1, 0, 1])


def test_qnn_separates_blobs():
    x, y = blobs(400, seed=0)
    model, losses = ds.qnn_train(x, y, seed=0)
    assert np.mean((model.predict_proba(x) >= 0.5) == y) > 0.95
    assert losses[-1] < losses[0]
    again, _ = ds.qnn_train(x, y, seed=0)
    np.testing.assert_array_equal(again.weights, model.weights)


# ---------------------------------------------------------------------------
# ANN and logistic regression


def test_ann_zero_init_starts_at_half():
    x, y = blobs(40, seed=1)
    model, _ = ds.ann_train(x, y, epochs=0, zero_init=True)
    np.testing.assert_array_equal(model.predict_proba(x), 0.5)


def test_ann_separates_blobs_and_is_deterministic():
    x, y = blobs(400, seed=2)
    model, _ = ds.ann_train(x, y, seed=5)
    assert np.mean((model.predict_proba(x) >= 0.5) == y) > 0.98
    again, _ = ds.ann_train(x, y, seed=5)
    for k, v in model.arrays().items():
        np.testing.assert_array_equal(again.arrays()[k], v)


def test_ann_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    model = ds.AnnModel(nn.MLPParams.init([4, 5, 3, 1], rng, output="sigmoid"))
    x, y = rng.uniform(-1, 1, (3, 4)), np.array([1.0, 0.0, 1.0])
    _, grads = model.loss_and_grad(x, y)
    for name, arr in model.arrays().items():
        fd = oracles.central_diff(lambda a: model.updated({name: a}).loss_and_grad(x, y)[0], arr, h=1e-6)
        np.testing.assert_allclose(grads[name], fd, rtol=1e-4, atol=1e-9)


def test_logreg_on_blobs():
    x, y = blobs(200, seed=3)
    model, _ = ds.logreg_train(x, y)
    assert ds.evaluate_classifier(model, x, y).accuracy > 0.98


# ---------------------------------------------------------------------------
# protocol


def test_split_is_stratified_and_disjoint():
    x, y = fraud_table()
    split = ds.split_dataset(x, y, seed=0)
    assert split.n_fraud_train == 42 and int(split.y_test.sum()) == 18
    assert len(split.y_train) + len(split.y_test) == len(y)


def test_training_and_evaluation_sets():
    x, y = fraud_table()
    split = ds.split_dataset(x, y, seed=0)
    synth = np.full((10, 4), 0.77)
    xb, yb = ds.training_set(split, synth, "balanced", seed=1)
    assert yb.sum() == 52 and (yb == 0).sum() == 52
    xo, yo = ds.training_set(split, synth, "balanced", seed=1, synthetic_only=True)
    assert yo.sum() == 10
    xi, yi = ds.training_set(split, None, "imbalanced", seed=1)
    assert (yi == 0).sum() == (split.y_train == 0).sum()
    xt, yt = ds.evaluation_set(split, "balanced", seed=1)
    assert yt.sum() == (yt == 0).sum() == 18


def test_scaling_row_counts_and_purity():
    x, y = fraud_table(n_neg=300, n_pos=60)
    split = ds.split_dataset(x, y, seed=0)
    n1 = split.n_fraud_train
    synthetic = np.random.default_rng(9).uniform(0.9, 1.0, (n1, 4)) * 0.999
    plan = ds.ScalingPlan(ratios=(0.0, 0.5), classifier="logreg", seed=2)
    rows = ds.scaling_experiment(split, synthetic, plan)
    assert [r.n_synthetic for r in rows] == [0, 21, 42] * 2
    test_rows = {tuple(r) for r in split.x_test}
    assert not test_rows & {tuple(r) for r in synthetic}
    # zero injection reproduces the plain baseline cell
    base = ds.run_cell(split, None, "balanced", "logreg", 2)
    assert rows[0].report == base


def test_scaling_injection_count_rounds_up():
    x, y = fraud_table(n_neg=2000, n_pos=703)
    split = ds.split_dataset(x, y, seed=0)
    assert split.n_fraud_train == 492
    plan = ds.ScalingPlan(ratios=(0.5,), synthetic_only=False, modes=("balanced",), classifier="logreg")
    rows = ds.scaling_experiment(split, np.zeros((500, 4)), plan)
    assert rows[0].n_synthetic == 246


def test_scaling_plan_validation():
    with pytest.raises(InvalidArgumentError):
        ds.ScalingPlan(ratios=(0.5, 0.1))
    with pytest.raises(InvalidArgumentError):
        ds.ScalingPlan(modes=("natural",))


def test_grid_and_export_round_trip(tmp_path):
    x, y = fraud_table(n_neg=300, n_pos=60)
    split = ds.split_dataset(x, y, seed=0)
    pool = np.random.default_rng(0).uniform(0, 0.8, (100, 4))
    rows = ds.downstream_grid(split, {"smote": pool}, classifiers=("logreg",), seed=0)
    assert [r.setting for r in rows] == ["imbalanced", "balanced", "smote"]
    ds.write_rows_json(rows, tmp_path / "t.json", meta={"seed": 0})
    again = ds.rows_from_dict(json.loads((tmp_path / "t.json").read_text()))
    assert [r.report for r in again] == [r.report for r in rows]
    ds.write_rows_csv(rows, tmp_path / "t.csv")
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 4
    with pytest.raises(InvalidArgumentError):
        ds.downstream_grid(split, {"tiny": pool[:3]}, classifiers=("logreg",))
