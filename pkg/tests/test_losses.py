"""Loss functions: supervised core, the four SSL extensions, VAT geometry,
annealing, and exact degenerate reductions."""

import numpy as np
import pytest

from evidal import autodiff as ad
from evidal.evidential import evidence_from_logits, kl_to_uniform, predictive_mean
from evidal.losses import (
    LossWeights,
    VatConfig,
    anneal_coefficient,
    default_weights,
    emt_loss,
    enot_loss,
    epsu_loss,
    esup_loss,
    evat_loss,
    loss_err,
    loss_var,
    pseudo_labels,
    vat_perturbation,
)
from evidal.model import ClassifierSpec, as_tensors, forward, init_model

LN2 = float(np.log(2.0))


def _params(spec: ClassifierSpec, seed: int, requires_grad: bool = False):
    return as_tensors(init_model(spec, seed).params, requires_grad=requires_grad)


# ---------------------------------------------------------------- annealing

def test_anneal_schedule():
    assert anneal_coefficient(1) == pytest.approx(0.1)
    assert anneal_coefficient(5) == pytest.approx(0.5)
    assert anneal_coefficient(10) == 1.0
    assert anneal_coefficient(200) == 1.0
    with pytest.raises(ValueError):
        anneal_coefficient(0)


# ----------------------------------------------------------- component terms

def test_loss_err_examples():
    assert loss_err(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 0.0
    assert loss_err(np.array([1.0, 0.0]), np.array([0.8, 0.2])) == pytest.approx(0.08)
    assert loss_err(np.array([0.0, 1.0]), np.array([0.5, 0.5])) == pytest.approx(0.5)


def test_loss_var_examples():
    p = np.array([0.5, 0.5])
    assert loss_var(p, 2.0) == pytest.approx(1.0 / 6.0)
    assert loss_var(np.array([1.0, 0.0]), 17.0) == 0.0
    assert loss_var(p, 999.0) == pytest.approx(0.0005)


def test_bayes_risk_identity_monte_carlo():
    # err + var is the exact Beta-posterior expectation of the squared error
    rng = np.random.default_rng(11)
    for _ in range(6):
        alpha = rng.uniform(0.5, 30.0)
        beta = rng.uniform(0.5, 30.0)
        y = float(rng.integers(0, 2))
        total = alpha + beta
        p_hat = np.array([alpha / total, beta / total])
        closed = loss_err(np.array([y, 1.0 - y]), p_hat) + loss_var(p_hat, total)
        draws = rng.beta(alpha, beta, size=200_000)
        samples = (y - draws) ** 2 + ((1.0 - y) - (1.0 - draws)) ** 2
        mc = samples.mean()
        se = samples.std(ddof=1) / np.sqrt(len(samples))
        assert abs(closed - mc) < 4.0 * se + 1e-12


# ------------------------------------------------------------------- eSUP

def test_esup_zero_logits_frozen_value():
    # logits (0, 0) per head: p=(0.5, 0.5), E=4, adjusted (1, 2) for y=1;
    # err 0.5 + var 0.1 + KL(ln 2 - 1/2) at full anneal
    logits = ad.Tensor(np.zeros((1, 1, 2)), requires_grad=True)
    value = esup_loss(logits, np.array([[1]]), epoch=10).item()
    assert value == pytest.approx(0.5 + 0.1 + (LN2 - 0.5), abs=1e-9)
    assert value == pytest.approx(0.7931472, abs=1e-7)


def test_esup_epoch_scales_only_kl():
    logits = ad.Tensor(np.zeros((1, 1, 2)))
    y = np.array([[1]])
    kl = LN2 - 0.5
    at_1 = esup_loss(logits, y, 1).item()
    at_10 = esup_loss(logits, y, 10).item()
    assert at_10 - at_1 == pytest.approx(0.9 * kl, abs=1e-12)
    assert at_1 == pytest.approx(0.6 + 0.1 * kl, abs=1e-12)


def test_esup_mean_aggregation_over_identical_heads():
    rng = np.random.default_rng(3)
    one = rng.standard_normal((4, 1, 2))
    two = np.concatenate([one, one], axis=1)
    y1 = rng.integers(0, 2, size=(4, 1))
    y2 = np.concatenate([y1, y1], axis=1)
    a = esup_loss(ad.Tensor(one), y1, 5).item()
    b = esup_loss(ad.Tensor(two), y2, 5).item()
    assert a == pytest.approx(b, abs=1e-14)


def test_esup_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        esup_loss(ad.Tensor(np.zeros((2, 3, 2))), np.zeros((2, 2)), 1)


def test_esup_nonnegative_and_finite_at_random_points():
    rng = np.random.default_rng(4)
    for _ in range(50):
        logits = ad.Tensor(rng.uniform(-12.0, 12.0, size=(3, 4, 2)))
        y = rng.integers(0, 2, size=(3, 4))
        v = esup_loss(logits, y, int(rng.integers(1, 30))).item()
        assert np.isfinite(v) and v >= 0.0


# ------------------------------------------------------------------- ePSU

def test_pseudo_label_threshold_and_tie():
    confident_pos = np.array([[[2.0, 0.0]]])
    confident_neg = np.array([[[0.0, 2.0]]])
    tie = np.array([[[0.0, 0.0]]])
    assert pseudo_labels(confident_pos)[0, 0] == 1
    assert pseudo_labels(confident_neg)[0, 0] == 0
    assert pseudo_labels(tie)[0, 0] == 1


def test_epsu_composes_supervised_terms():
    spec = ClassifierSpec(input_dim=5, num_classes=3, hidden_dims=(8,), dropout_rate=0.0)
    params = _params(spec, 0)
    rng = np.random.default_rng(5)
    x_l = rng.standard_normal((4, 5))
    y_l = rng.integers(0, 2, size=(4, 3))
    x_u = rng.standard_normal((6, 5))
    total = epsu_loss(spec, params, x_l, y_l, x_u, epoch=7, train_mode=False).item()
    logits_u = forward(spec, params, x_u)
    psu = pseudo_labels(logits_u.data)
    expected = (esup_loss(forward(spec, params, x_l), y_l, 7).item()
                + esup_loss(logits_u, psu, 7).item())
    assert total == pytest.approx(expected, abs=1e-12)


def test_epsu_empty_unlabelled_equals_esup():
    spec = ClassifierSpec(input_dim=5, num_classes=2, hidden_dims=(), dropout_rate=0.0)
    params = _params(spec, 1)
    rng = np.random.default_rng(6)
    x_l = rng.standard_normal((3, 5))
    y_l = rng.integers(0, 2, size=(3, 2))
    a = epsu_loss(spec, params, x_l, y_l, np.zeros((0, 5)), 4, train_mode=False).item()
    b = esup_loss(forward(spec, params, x_l), y_l, 4).item()
    assert a == pytest.approx(b, abs=1e-12)


# -------------------------------------------------------------------- eVAT

def test_vat_perturbation_norm_equals_epsilon():
    spec = ClassifierSpec(input_dim=7, num_classes=2, hidden_dims=(6,), dropout_rate=0.0)
    state = init_model(spec, 2)
    x_u = np.random.default_rng(7).standard_normal((5, 7))
    cfg = VatConfig(epsilon=2.5)
    r, _ = vat_perturbation(spec, state.params, x_u, cfg,
                            np.random.default_rng(8))
    norms = np.linalg.norm(r, axis=1)
    np.testing.assert_allclose(norms, 2.5, rtol=0, atol=1e-9)


def test_vat_dead_gradient_rows_fall_back_to_random_direction():
    # all-zero weights make the objective flat, so every row keeps its seeded
    # random direction and the fallback counter says so
    spec = ClassifierSpec(input_dim=4, num_classes=1, hidden_dims=(), dropout_rate=0.0)
    state = init_model(spec, 0)
    state.params["W0"] = np.zeros_like(state.params["W0"])
    state.params["b0"] = np.zeros_like(state.params["b0"])
    x_u = np.random.default_rng(1).standard_normal((3, 4))
    r, fallbacks = vat_perturbation(spec, state.params, x_u, VatConfig(epsilon=1.0),
                                    np.random.default_rng(2))
    assert fallbacks == 3
    np.testing.assert_allclose(np.linalg.norm(r, axis=1), 1.0, rtol=0, atol=1e-9)


def test_vat_zero_epsilon_is_zero_perturbation():
    spec = ClassifierSpec(input_dim=4, num_classes=1, hidden_dims=(), dropout_rate=0.0)
    state = init_model(spec, 3)
    x_u = np.random.default_rng(9).standard_normal((3, 4))
    r, fallbacks = vat_perturbation(spec, state.params, x_u,
                                    VatConfig(epsilon=0.0), np.random.default_rng(0))
    np.testing.assert_array_equal(r, np.zeros_like(x_u))
    assert fallbacks == 0


def test_vat_direction_matches_linear_model_closed_form():
    # single linear head: the xi->0 objective gradient is grad(L_var) since
    # L_err is stationary at the clean point; chain rule through alpha, beta
    spec = ClassifierSpec(input_dim=6, num_classes=1, hidden_dims=(), dropout_rate=0.0)
    state = init_model(spec, 4)
    state.params["W0"] = 0.3 * np.random.default_rng(10).standard_normal((6, 2))
    state.params["b0"] = np.array([0.2, -0.1])
    x = np.random.default_rng(11).standard_normal((4, 6))

    u = x @ state.params["W0"] + state.params["b0"]
    alpha, beta = np.exp(u[:, 0]) + 1.0, np.exp(u[:, 1]) + 1.0
    total = alpha + beta
    lvar = 2.0 * alpha * beta / (total**2 * (total + 1.0))
    dl_da = lvar * (1.0 / alpha - 2.0 / total - 1.0 / (total + 1.0))
    dl_db = lvar * (1.0 / beta - 2.0 / total - 1.0 / (total + 1.0))
    grad_x = (dl_da * np.exp(u[:, 0]))[:, None] * state.params["W0"][:, 0] + \
             (dl_db * np.exp(u[:, 1]))[:, None] * state.params["W0"][:, 1]
    expected = grad_x / np.linalg.norm(grad_x, axis=1, keepdims=True)

    r, _ = vat_perturbation(spec, state.params, x, VatConfig(epsilon=1.0),
                            np.random.default_rng(12))
    cosines = np.sum(r * expected, axis=1)
    assert np.all(cosines >= 0.99)


def test_evat_zero_perturbation_doubles_variance_term():
    spec = ClassifierSpec(input_dim=5, num_classes=2, hidden_dims=(), dropout_rate=0.0)
    params = _params(spec, 5)
    rng = np.random.default_rng(13)
    x_l = rng.standard_normal((3, 5))
    y_l = rng.integers(0, 2, size=(3, 2))
    x_u = rng.standard_normal((4, 5))
    weights = LossWeights(lambda_cons=1.7)
    total = evat_loss(spec, params, x_l, y_l, x_u, VatConfig(epsilon=0.0),
                      weights, epoch=6, train_mode=False).item()
    ab_u = evidence_from_logits(forward(spec, params, x_u).data)
    p_u = predictive_mean(ab_u)
    lvar = loss_var(p_u, ab_u.sum(axis=-1))
    expected = (esup_loss(forward(spec, params, x_l), y_l, 6).item()
                + 1.7 * np.mean(2.0 * lvar))
    assert total == pytest.approx(expected, abs=1e-12)


def test_evat_one_sample_component_composition():
    spec = ClassifierSpec(input_dim=4, num_classes=1, hidden_dims=(), dropout_rate=0.0)
    params = _params(spec, 6)
    rng = np.random.default_rng(14)
    x_l = rng.standard_normal((1, 4))
    y_l = np.array([[1]])
    x_u = rng.standard_normal((1, 4))
    r_adv = np.array([[0.3, -0.1, 0.2, 0.05]])
    weights = LossWeights(lambda_cons=0.9)
    total = evat_loss(spec, params, x_l, y_l, x_u, VatConfig(), weights,
                      epoch=10, train_mode=False, r_adv=r_adv).item()

    ab_c = evidence_from_logits(forward(spec, params, x_u).data)
    ab_a = evidence_from_logits(forward(spec, params, x_u + r_adv).data)
    p_c, p_a = predictive_mean(ab_c), predictive_mean(ab_a)
    cons = (loss_err(p_a, p_c) + loss_var(p_a, ab_a.sum(-1))
            + loss_var(p_c, ab_c.sum(-1)))
    expected = (esup_loss(forward(spec, params, x_l), y_l, 10).item()
                + 0.9 * float(np.mean(cons)))
    assert total == pytest.approx(expected, abs=1e-12)


# --------------------------------------------------------------------- eMT

def test_emt_identical_nets_keep_only_variance_terms():
    spec = ClassifierSpec(input_dim=5, num_classes=2, hidden_dims=(6,), dropout_rate=0.0)
    params = _params(spec, 7)
    teacher = _params(spec, 7)
    rng = np.random.default_rng(15)
    x_l = rng.standard_normal((3, 5))
    y_l = rng.integers(0, 2, size=(3, 2))
    x_c = rng.standard_normal((5, 5))
    weights = LossWeights(lambda_cons=2.0)
    total = emt_loss(spec, params, teacher, x_l, y_l, x_c, x_c, weights,
                     epoch=8, train_mode=False).item()
    ab = evidence_from_logits(forward(spec, params, x_c).data)
    lvar = loss_var(predictive_mean(ab), ab.sum(-1))
    expected = (esup_loss(forward(spec, params, x_l), y_l, 8).item()
                + 2.0 * np.mean(2.0 * lvar))
    assert total == pytest.approx(expected, abs=1e-12)


def test_emt_teacher_receives_no_gradient():
    spec = ClassifierSpec(input_dim=5, num_classes=2, hidden_dims=(4,), dropout_rate=0.0)
    student = _params(spec, 8, requires_grad=True)
    teacher = _params(spec, 9, requires_grad=True)
    rng = np.random.default_rng(16)
    x_l = rng.standard_normal((3, 5))
    y_l = rng.integers(0, 2, size=(3, 2))
    x_c = rng.standard_normal((4, 5))
    total = emt_loss(spec, student, teacher, x_l, y_l, x_c, x_c,
                     LossWeights(lambda_cons=1.0), epoch=5, train_mode=False)
    ad.backward(total)
    # detach cuts the teacher out of the graph: no gradient ever accumulates
    for name, t in teacher.items():
        assert t.grad is None or not np.any(t.grad), name
    assert any(t.grad is not None and np.abs(t.grad).max() > 0
               for t in student.values())


# -------------------------------------------------------------------- eNoT

def test_enot_identical_nets_and_views_drop_err_terms():
    spec = ClassifierSpec(input_dim=4, num_classes=2, hidden_dims=(), dropout_rate=0.0)
    p1 = _params(spec, 10)
    p2 = _params(spec, 10)
    rng = np.random.default_rng(17)
    x_l = rng.standard_normal((3, 4))
    y_l = rng.integers(0, 2, size=(3, 2))
    x_u = rng.standard_normal((5, 4))
    w = LossWeights(lambda_sup_1=0.67, lambda_sup_2=0.67,
                    lambda_cons_l=0.67, lambda_cons_u=1.0)
    total = enot_loss(spec, p1, p2, x_l, x_l, y_l, x_u, x_u, w,
                      epoch=9, train_mode=False).item()
    sup = esup_loss(forward(spec, p1, x_l), y_l, 9).item()
    ab_l = evidence_from_logits(forward(spec, p1, x_l).data)
    ab_u = evidence_from_logits(forward(spec, p1, x_u).data)
    lvar_l = loss_var(predictive_mean(ab_l), ab_l.sum(-1))
    lvar_u = loss_var(predictive_mean(ab_u), ab_u.sum(-1))
    expected = (2 * 0.67 * sup + 0.67 * np.mean(2.0 * lvar_l)
                + 1.0 * np.mean(2.0 * lvar_u))
    assert total == pytest.approx(expected, abs=1e-12)


def test_enot_one_sample_component_composition():
    spec = ClassifierSpec(input_dim=4, num_classes=1, hidden_dims=(), dropout_rate=0.0)
    p1 = _params(spec, 11)
    p2 = _params(spec, 12)
    rng = np.random.default_rng(18)
    x1, x2 = rng.standard_normal((2, 1, 4))
    y = np.array([[0]])
    u1, u2 = rng.standard_normal((2, 1, 4))
    w = LossWeights(lambda_sup_1=0.5, lambda_sup_2=0.25,
                    lambda_cons_l=0.75, lambda_cons_u=1.25)
    total = enot_loss(spec, p1, p2, x1, x2, y, u1, u2, w,
                      epoch=10, train_mode=False).item()

    def cons(ab_a, ab_b):
        pa, pb = predictive_mean(ab_a), predictive_mean(ab_b)
        return float(np.mean(loss_err(pa, pb) + loss_var(pa, ab_a.sum(-1))
                             + loss_var(pb, ab_b.sum(-1))))

    ab_l1 = evidence_from_logits(forward(spec, p1, x1).data)
    ab_l2 = evidence_from_logits(forward(spec, p2, x2).data)
    ab_u1 = evidence_from_logits(forward(spec, p1, u1).data)
    ab_u2 = evidence_from_logits(forward(spec, p2, u2).data)
    expected = (0.5 * esup_loss(forward(spec, p1, x1), y, 10).item()
                + 0.25 * esup_loss(forward(spec, p2, x2), y, 10).item()
                + 0.75 * cons(ab_l1, ab_l2) + 1.25 * cons(ab_u1, ab_u2))
    assert total == pytest.approx(expected, abs=1e-12)


# ------------------------------------------------------- degenerate reductions

def test_all_ssl_losses_reduce_to_esup():
    spec = ClassifierSpec(input_dim=5, num_classes=3, hidden_dims=(6,), dropout_rate=0.0)
    params = _params(spec, 13)
    rng = np.random.default_rng(19)
    x_l = rng.standard_normal((4, 5))
    y_l = rng.integers(0, 2, size=(4, 3))
    x_u = rng.standard_normal((4, 5))
    base = esup_loss(forward(spec, params, x_l), y_l, 6).item()

    a = epsu_loss(spec, params, x_l, y_l, np.zeros((0, 5)), 6, train_mode=False).item()
    b = evat_loss(spec, params, x_l, y_l, x_u, VatConfig(),
                  LossWeights(lambda_cons=0.0), 6, train_mode=False).item()
    c = emt_loss(spec, params, _params(spec, 14), x_l, y_l, x_u, x_u,
                 LossWeights(lambda_cons=0.0), 6, train_mode=False).item()
    d = enot_loss(spec, params, _params(spec, 14), x_l, x_l, y_l, x_u, x_u,
                  LossWeights(lambda_sup_1=1.0, lambda_sup_2=0.0,
                              lambda_cons_l=0.0, lambda_cons_u=0.0),
                  6, train_mode=False).item()
    for reduced in (a, b, c, d):
        assert reduced == pytest.approx(base, abs=1e-12)


# ----------------------------------------------------------- gradient checks

def _loss_grad_error(spec, build_loss, seed):
    """Max relative error of d(loss)/dW0 against central differences."""
    base = init_model(spec, seed).params

    def fn(w0: ad.Tensor) -> ad.Tensor:
        params = {k: (w0 if k == "W0" else ad.Tensor(v)) for k, v in base.items()}
        return build_loss(params)

    return ad.grad_check(fn, ad.Tensor(base["W0"]))


def test_every_loss_passes_finite_difference_check():
    spec = ClassifierSpec(input_dim=4, num_classes=2, hidden_dims=(5,), dropout_rate=0.0)
    rng = np.random.default_rng(20)
    x_l = rng.standard_normal((3, 4))
    y_l = rng.integers(0, 2, size=(3, 2))
    x_u = rng.standard_normal((3, 4))
    r_adv = 0.5 * rng.standard_normal((3, 4))
    psu = rng.integers(0, 2, size=(3, 2))
    other = _params(spec, 21)
    w = LossWeights(lambda_cons=1.3)
    w_enot = LossWeights(lambda_sup_1=0.67, lambda_sup_2=0.67,
                         lambda_cons_l=0.67, lambda_cons_u=1.0)
    state = init_model(spec, 22)
    const = {k: ad.Tensor(v) for k, v in state.params.items()}
    ab_clean = evidence_from_logits(forward(spec, const, x_u).data)

    cases = {
        "esup": lambda p: esup_loss(forward(spec, p, x_l), y_l, 3),
        "epsu": lambda p: epsu_loss(spec, p, x_l, y_l, x_u, 3,
                                    train_mode=False, labels_u=psu),
        "evat": lambda p: evat_loss(spec, p, x_l, y_l, x_u, VatConfig(), w, 3,
                                    train_mode=False, r_adv=r_adv,
                                    ab_clean=ab_clean),
        "emt": lambda p: emt_loss(spec, p, other, x_l, y_l, x_u, x_u, w, 3,
                                  train_mode=False),
        "enot": lambda p: enot_loss(spec, p, other, x_l, x_l, y_l, x_u, x_u,
                                    w_enot, 3, train_mode=False),
    }
    for name, build in cases.items():
        err = _loss_grad_error(spec, build, seed=23)
        assert err <= 1e-4, f"{name}: finite-difference error {err}"


# ----------------------------------------------------------------- defaults

def test_default_weights_per_method():
    assert default_weights("esup") == LossWeights(lambda_sup=1.0, lambda_cons=0.0)
    assert default_weights("epsu") == LossWeights(lambda_sup=1.0, lambda_cons=0.0)
    assert default_weights("evat").lambda_cons == 1.0
    assert default_weights("emt").lambda_cons == 196.0
    enot = default_weights("enot")
    assert (enot.lambda_sup_1, enot.lambda_sup_2) == (0.67, 0.67)
    assert (enot.lambda_cons_l, enot.lambda_cons_u) == (0.67, 1.0)
    with pytest.raises(ValueError, match="unknown method"):
        default_weights("bce")


def test_weight_and_vat_validation():
    with pytest.raises(ValueError, match="lambda_cons"):
        LossWeights(lambda_cons=-0.1).validate()
    with pytest.raises(ValueError, match="epsilon"):
        VatConfig(epsilon=-1.0).validate()
    with pytest.raises(ValueError):
        VatConfig(power_iterations=0).validate()
