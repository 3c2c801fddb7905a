import numpy as np
import pytest

from pcattack import autodiff as ad
from pcattack.attacks import (
    AttackConfig,
    configure,
    ensemble_attack,
    expected_grad_evals,
    fgsm,
    i_fgsm,
    mi_fgsm,
    ni_fgsm,
    parse_attack,
    pc_fgsm,
    pc_iterative,
    pc_predict,
    run_attack,
)
from pcattack.augment import AugmentConfig, SimConfig
from pcattack.models import CountingClassifier

from .conftest import LinearModel

BALL = 2.0**-20


class Recorder(CountingClassifier):
    """Counting wrapper that also keeps every point a gradient was taken at."""

    def __init__(self, model):
        super().__init__(model)
        self.points = []

    def forward(self, x, tape=None):
        if isinstance(x, ad.Var):
            self.points.append(x.value.copy())
        return super().forward(x, tape)


@pytest.fixture(scope="module")
def batch(test_set):
    return test_set.images[:16], test_set.labels[:16]


def in_ball(x, xa, eps):
    return np.max(np.abs(xa - x)) <= eps + BALL and xa.min() >= 0 and xa.max() <= 1


# ---------------------------------------------------------------- baselines


def test_fgsm_linear_hand_example(linear2):
    x = np.array([[0.5, 0.5]])
    res = fgsm(linear2, x, np.array([0]), AttackConfig(epsilon=0.1))
    assert np.allclose(res.x_adv, [[0.6, 0.4]]) and res.grad_evals == 1


def test_fgsm_zero_epsilon(small_cnn, batch):
    x, y = batch
    assert np.array_equal(fgsm(small_cnn, x, y, AttackConfig(epsilon=0.0)).x_adv, x)


def test_fgsm_degenerate_gradient_flagged():
    m = LinearModel(np.zeros((2, 3)), b=[1.0, 0.0, 0.0])
    x = np.array([[0.2, 0.7]])
    res = fgsm(m, x, np.array([1]), AttackConfig(epsilon=0.3))
    assert np.array_equal(res.x_adv, x) and res.degenerate.tolist() == [True]


def test_i_fgsm_single_step_is_fgsm(small_cnn, batch):
    x, y = batch
    a = i_fgsm(small_cnn, x, y, AttackConfig(epsilon=0.2, iterations=1, step_alpha=0.2)).x_adv
    assert np.array_equal(a, fgsm(small_cnn, x, y, AttackConfig(epsilon=0.2)).x_adv)


def test_every_iterate_in_ball(small_cnn, batch):
    x, y = batch
    cfg = AttackConfig(epsilon=0.1, iterations=6, step_alpha=0.05)
    seen = []
    i_fgsm(small_cnn, x, y, cfg, on_step=lambda t, xt: seen.append(in_ball(x, xt, 0.1)))
    pc_iterative("mi", small_cnn, x, y, cfg, on_step=lambda t, xt: seen.append(in_ball(x, xt, 0.1)))
    assert len(seen) == 12 and all(seen)


def test_alpha_default():
    assert AttackConfig(epsilon=0.3, iterations=10).alpha == 0.3 / 10
    assert AttackConfig(epsilon=0.3, step_alpha=0.05).alpha == 0.05


def test_config_validation():
    for bad in ({"epsilon": -1}, {"iterations": 0}, {"predictions": -1}, {"momentum_mu": -0.1}, {"pc_anchor": "x"}):
        with pytest.raises(ValueError):
            AttackConfig(**bad)


@pytest.mark.parametrize("attack", [mi_fgsm, ni_fgsm])
def test_momentum_zero_collapses(attack, small_cnn, batch):
    x, y = batch
    cfg = AttackConfig(epsilon=0.2, iterations=4, momentum_mu=0.0)
    assert np.array_equal(attack(small_cnn, x, y, cfg).x_adv, i_fgsm(small_cnn, x, y, cfg).x_adv)


@pytest.mark.parametrize("mu", [0.5, 1.0])
def test_momentum_mass_bound(mu, small_cnn, batch):
    x, y = batch
    cfg = AttackConfig(epsilon=0.2, iterations=5, momentum_mu=mu)
    norms = []
    mi_fgsm(small_cnn, x, y, cfg, on_step=lambda t, xt, g: norms.append(np.abs(g).reshape(16, -1).sum(1).max()))
    bound = sum(mu**i for i in range(5))
    assert norms[-1] <= bound + 1e-9


def test_ni_first_lookahead_is_x(small_cnn, batch):
    x, y = batch
    rec = Recorder(small_cnn)
    ni_fgsm(rec, x, y, AttackConfig(epsilon=0.2, iterations=3))
    assert np.array_equal(rec.points[0], x)


# ---------------------------------------------------------------- prediction-correction


def test_pc_predict_k1_is_normalized_predicted_gradient(small_cnn, batch):
    x, y = batch
    g = ad.loss_gradient(small_cnn, x, y)
    x1 = ad.clip_ball(x, x + 0.1 * ad.sign(g), 0.1, 0, 1)
    got = pc_predict(small_cnn, x, x, y, 1, 0.1, 0.1)
    assert np.array_equal(got, ad.l1_normalize_rows(ad.loss_gradient(small_cnn, x1, y)))


def test_pc_predict_mass_and_state(small_cnn, batch):
    x, y = batch
    states = []
    for k in (1, 3, 5):
        got = pc_predict(small_cnn, x, x, y, k, 0.05, 0.1,
                         on_predict=lambda j, xp, gp, k=k: states.append((j, k, xp, gp)))  # fmt: skip
        assert np.abs(got).reshape(16, -1).sum(1).max() <= 1 + 1e-9
    for j, k, xp, gp in states:
        assert np.abs(gp).reshape(16, -1).sum(1).max() <= j / k + 1e-9
        assert in_ball(x, xp, 0.1)


def test_pc_predict_linear_constant_field():
    w = np.zeros((3, 2))
    w[:, 1] = [1.0, -2.0, 0.5]
    m = LinearModel(w)
    x = np.array([[0.5, 0.5, 0.5]])
    got = pc_predict(m, x, x, np.array([0]), 2, 0.05, 0.1)
    assert np.allclose(got, ad.l1_normalize(w[:, 1])[None], rtol=1e-12)


def test_pc_predict_counts_k(small_cnn, batch):
    x, y = batch
    c = CountingClassifier(small_cnn)
    pc_predict(c, x, x, y, 3, 0.1, 0.1, anchor_grad=ad.loss_gradient(small_cnn, x, y))
    assert c.count == 3 * 16
    with pytest.raises(ValueError):
        pc_predict(small_cnn, x, x, y, 0, 0.1, 0.1)


def test_pc_fgsm_k0_is_fgsm(small_cnn, batch):
    x, y = batch
    cfg = AttackConfig(epsilon=0.15, predictions=0)
    assert np.array_equal(pc_fgsm(small_cnn, x, y, cfg).x_adv, fgsm(small_cnn, x, y, cfg).x_adv)


def test_pc_fgsm_k1_two_term_form(small_cnn, batch):
    # G = n(grad at x) + n(grad at x_pre), x_pre one clipped FGSM step from x
    x, y = batch
    eps = 0.15
    g0 = ad.loss_gradient(small_cnn, x, y)
    x_pre = ad.clip_ball(x, x + eps * ad.sign(g0), eps, 0, 1)
    G = ad.l1_normalize_rows(g0) + ad.l1_normalize_rows(ad.loss_gradient(small_cnn, x_pre, y))
    expect = ad.clip_ball(x, x + eps * ad.sign(G), eps, 0, 1)
    res = pc_fgsm(small_cnn, x, y, AttackConfig(epsilon=eps, predictions=1))
    assert np.array_equal(res.x_adv, expect) and res.grad_evals == 2


@pytest.mark.parametrize("base,plain", [("i", i_fgsm), ("mi", mi_fgsm), ("ni", ni_fgsm)])
def test_pc_iterative_k0_is_baseline(base, plain, small_cnn, batch):
    x, y = batch
    cfg = AttackConfig(epsilon=0.2, iterations=4, predictions=0)
    assert np.array_equal(pc_iterative(base, small_cnn, x, y, cfg).x_adv, plain(small_cnn, x, y, cfg).x_adv)


def test_pc_i_single_step_is_pc_fgsm(small_cnn, batch):
    x, y = batch
    cfg = AttackConfig(epsilon=0.2, iterations=1, step_alpha=0.2, predictions=2)
    assert np.array_equal(pc_iterative("i", small_cnn, x, y, cfg).x_adv, pc_fgsm(small_cnn, x, y, cfg).x_adv)


def test_pc_ni_anchors_at_lookahead(small_cnn, batch):
    x, y = batch
    rec = Recorder(small_cnn)
    cfg = AttackConfig(epsilon=0.2, iterations=2, predictions=1)
    pc_iterative("ni", rec, x, y, cfg)
    # query order per iteration: anchor, prediction; the first anchor is x
    assert len(rec.points) == 4 and np.array_equal(rec.points[0], x)
    cur = Recorder(small_cnn)
    res = pc_iterative("ni", cur, x, y, AttackConfig(epsilon=0.2, iterations=2, predictions=1, pc_anchor="current"))
    assert res.grad_evals == 2 * 3 == len(cur.points)


# ---------------------------------------------------------------- accounting


ALL_IDS = ["fgsm", "i-fgsm", "mi-fgsm", "ni-fgsm", "pc-fgsm", "pc-i-fgsm", "pc-mi-fgsm", "pc-ni-fgsm",
           "di-fgsm", "ti-mi-fgsm", "pc-si-ti-di-ni-fgsm"]  # fmt: skip


@pytest.mark.parametrize("attack", ALL_IDS)
def test_counts_match_closed_form(attack, small_mlp, batch):
    x, y = batch
    cfg = AttackConfig(epsilon=0.2, iterations=3, predictions=2)
    c = CountingClassifier(small_mlp)
    res = run_attack(attack, c, x, y, cfg)
    assert res.grad_evals == expected_grad_evals(attack, cfg)
    copies = 5 if "si-" in attack else 1
    assert c.count == res.grad_evals * copies * len(y) == res.backward_passes * len(y)
    assert in_ball(x, res.x_adv, 0.2)


def test_closed_form_counts():
    cfg = AttackConfig(iterations=10, predictions=1)
    assert [expected_grad_evals(a, cfg) for a in ("fgsm", "i-fgsm", "mi-fgsm", "ni-fgsm", "pc-fgsm", "pc-i-fgsm")] == [
        1, 10, 10, 10, 2, 20]  # fmt: skip


def test_parse_attack():
    s = parse_attack("pc-si-ti-di-ni-fgsm")
    assert s.pc and s.base == "ni" and s.augment == {"si", "ti", "di"}
    assert parse_attack("FGSM").base == "fgsm"
    for bad in ("pc-", "xx-fgsm", "di-di-fgsm", "ni-pc-fgsm"):
        with pytest.raises(ValueError):
            parse_attack(bad)


def test_configure_switches_only_named():
    cfg = configure("ti-fgsm", AttackConfig())
    assert cfg.augment.tim is not None and cfg.augment.dim is None and cfg.augment.sim is None
    assert configure("fgsm", AttackConfig(augment=AugmentConfig(sim=SimConfig()))).augment is None


def test_attack_determinism(small_cnn, batch):
    x, y = batch
    cfg = AttackConfig(epsilon=0.2, iterations=3, rng_seed=4)
    a = run_attack("pc-di-mi-fgsm", small_cnn, x, y, cfg, indices=np.arange(16))
    b = run_attack("pc-di-mi-fgsm", small_cnn, x, y, cfg, indices=np.arange(16))
    assert np.array_equal(a.x_adv, b.x_adv)


def test_success_on_source_recorded(small_cnn, batch):
    x, y = batch
    res = i_fgsm(small_cnn, x, y, AttackConfig(epsilon=0.3))
    assert np.array_equal(res.success_on_source, np.argmax(small_cnn.logits(res.x_adv), -1) != y)
    assert np.array_equal(res.source_label, y)


def test_shape_errors(small_cnn):
    with pytest.raises(ad.ShapeError):
        fgsm(small_cnn, np.zeros((2, 1, 28, 27)), np.zeros(2, int), AttackConfig())
    with pytest.raises(ad.ShapeError):
        fgsm(small_cnn, np.zeros((2, 1, 28, 28)), np.zeros(3, int), AttackConfig())


# ---------------------------------------------------------------- ensembles


def test_single_member_ensemble_identity(small_cnn, batch):
    x, y = batch
    cfg = AttackConfig(epsilon=0.2, iterations=3)
    direct = run_attack("pc-mi-fgsm", small_cnn, x, y, cfg).x_adv
    assert np.array_equal(ensemble_attack([small_cnn], [1.0], "pc-mi-fgsm", x, y, cfg).x_adv, direct)


def test_duplicate_members_identity(small_cnn, batch):
    x, y = batch
    cfg = AttackConfig(epsilon=0.2)
    direct = fgsm(small_cnn, x, y, cfg).x_adv
    assert np.array_equal(ensemble_attack([small_cnn, small_cnn], [0.5, 0.5], fgsm, x, y, cfg).x_adv, direct)


def test_ensemble_gradient_flows_through_members(small_cnn, small_mlp, batch):
    x, y = batch
    a, b = CountingClassifier(small_cnn), CountingClassifier(small_mlp)
    ensemble_attack([a, b], None, "i-fgsm", x, y, AttackConfig(iterations=2))
    assert a.count == b.count == 2 * 16
