import numpy as np
import pytest

from progmem.autodiff import Parameter
from progmem.data import Vocab, encode_examples
from progmem.ida import (EWC, FINETUNE, HIDDEN_EXPAND, MEM_EXPAND, MEM_FROZEN, MULTITASK,
                         AdamState, DomainSchedule, EwcState, RunConfig, ScheduleEntry,
                         adam_step, compute_fisher, evaluate, freeze_old, run_schedule,
                         train_domain, train_source)
from progmem.model import MemoryRNNClassifier, ModelConfig

from .conftest import assert_states_equal


def schedule(names, method, slots=4, epochs=2, vocab=False):
    return DomainSchedule([ScheduleEntry(n, method, slots, epochs, 2, vocab) for n in names])


# ------------------------------------------------------------------- Adam

def test_adam_zero_gradient_is_null_step():
    p = Parameter("p", np.array([1.0, -2.0]))
    adam_step(AdamState(), {"p": p})
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_magnitude_is_lr():
    p = Parameter("p", np.zeros(4))
    p.grad = np.array([3.0, -0.01, 1e3, 0.5])
    st = AdamState(lr=1e-3)
    adam_step(st, {"p": p})
    np.testing.assert_allclose(p.data, -1e-3 * np.sign(p.grad), rtol=1e-5)
    assert st.step == 1 and st.m["p"].shape == p.shape


def test_adam_quadratic_oracle():
    # scalar simulation of bias-corrected Adam on f = θ²
    p = Parameter("p", np.array([1.0]))
    st = AdamState(lr=0.1)
    th, m, v = 1.0, 0.0, 0.0
    for t in range(1, 101):
        p.grad = 2 * p.data
        adam_step(st, {"p": p})
        g = 2 * th
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        th -= 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert abs(p.data[0] - th) < 1e-12
    assert abs(p.data[0]) < 0.1


def test_adam_masks():
    a = Parameter("a", np.zeros(3))
    b = Parameter("b", np.zeros(3))
    a.grad = np.ones(3)
    b.grad = np.ones(3)
    adam_step(AdamState(), {"a": a, "b": b}, {"a": True, "b": np.array([True, False, True])})
    np.testing.assert_array_equal(a.data, 0.0)
    assert b.data[0] == 0.0 and b.data[2] == 0.0 and b.data[1] < 0


# ---------------------------------------------------------- train_domain

def _model(vocab_size, seed=0, **kw):
    cfg = dict(vocab_size=vocab_size, embed_dim=8, hidden_dim=8, n_slots=4)
    cfg.update(kw)
    return MemoryRNNClassifier(ModelConfig(**cfg), np.random.default_rng(seed))


def _encoded(tiny_data, dom="fic"):
    vocab = Vocab()
    for ex in tiny_data[dom]["train"]:
        vocab.extend(ex.tokens)
    return (vocab, encode_examples(tiny_data[dom]["train"], vocab),
            encode_examples(tiny_data[dom]["valid"], vocab))


def test_train_zero_epochs_is_noop(tiny_data):
    vocab, tr, va = _encoded(tiny_data)
    m = _model(len(vocab))
    before = m.state()
    res = train_domain(m, tr, va, 0, AdamState(), np.random.default_rng(0))
    assert_states_equal(before, m.state())
    assert_states_equal(before, res.best_state)


def test_train_full_freeze_is_noop(tiny_data):
    vocab, tr, va = _encoded(tiny_data)
    m = _model(len(vocab))
    before = m.state()
    frozen = {k: True for k in m.parameters()}
    train_domain(m, tr, va, 2, AdamState(lr=1e-2), np.random.default_rng(0), frozen=frozen)
    assert_states_equal(before, m.state())


def test_train_rejects_empty():
    with pytest.raises(ValueError):
        train_domain(_model(10), [], None, 1, AdamState(), np.random.default_rng(0))


def test_training_reduces_loss_and_restores_best(tiny_data):
    vocab, tr, va = _encoded(tiny_data)
    m = _model(len(vocab))
    res = train_domain(m, tr, va, 4, AdamState(lr=1e-2), np.random.default_rng(0), patience=4)
    losses = [h["loss"] for h in res.history]
    assert losses[-1] < losses[0]
    assert evaluate(m, va)[0] == res.best_valid == max(h["valid_acc"] for h in res.history)


def test_ewc_penalty_at_anchor_is_zero(tiny_data):
    vocab, tr, _ = _encoded(tiny_data)
    m = _model(len(vocab))
    params = m.parameters()
    fisher = compute_fisher(m, tr, 10)
    ewc = EwcState({k: p.data.copy() for k, p in params.items()}, fisher, lam=5.0)
    assert ewc.penalty(params) == 0.0
    m.zero_grad()
    ewc.add_grad(params)
    for p in params.values():
        assert not p.grad.any()


def test_ewc_penalty_gradient_matches_finite_difference(tiny_data):
    vocab, tr, _ = _encoded(tiny_data)
    m = _model(len(vocab))
    params = m.parameters()
    anchor = {k: p.data.copy() + 0.01 for k, p in params.items()}
    fisher = {k: np.abs(np.random.default_rng(1).normal(size=p.shape)) for k, p in params.items()}
    ewc = EwcState(anchor, fisher, lam=2.0)
    m.zero_grad()
    ewc.add_grad(params)
    p = params["head.bias"]
    e = 1e-6
    p.data[0] += e
    up = ewc.penalty(params)
    p.data[0] -= 2 * e
    down = ewc.penalty(params)
    p.data[0] += e
    assert abs((up - down) / (2 * e) - p.grad[0]) < 1e-6


def test_fisher_properties(tiny_data):
    vocab, tr, _ = _encoded(tiny_data)
    m = _model(len(vocab))
    F = compute_fisher(m, tr[:6], 6)
    assert all((f >= 0).all() for f in F.values())
    F_rev = compute_fisher(m, tr[:6][::-1], 6)
    for k in F:
        np.testing.assert_allclose(F[k], F_rev[k], rtol=1e-12, atol=1e-300)
    # per-example gradient oracle on three examples
    acc = {k: np.zeros_like(v) for k, v in F.items()}
    for ids, lab in tr[:3]:
        m.train_step_grads(np.array([ids]), [len(ids)], [lab])
        for k, p in m.parameters().items():
            acc[k] += p.grad ** 2
    F3 = compute_fisher(m, tr[:3], 3)
    for k in F3:
        np.testing.assert_allclose(F3[k], acc[k] / 3, rtol=1e-12, atol=1e-300)
    with pytest.raises(ValueError):
        compute_fisher(m, tr[:3], 4)


def test_fisher_zero_for_saturated_model(tiny_data):
    vocab, tr, _ = _encoded(tiny_data)
    m = _model(len(vocab))
    m.head.weight.data[:] = 0.0
    m.head.bias.data[:] = [800.0, 0.0, 0.0]
    sample = [(ids, 0) for ids, _ in tr[:4]]
    F = compute_fisher(m, sample, 4)
    assert all(not f.any() for f in F.values())


def test_fisher_rejects_nan_model(tiny_data):
    vocab, tr, _ = _encoded(tiny_data)
    m = _model(len(vocab))
    m.head.bias.data[0] = np.nan
    with pytest.raises(ValueError):
        compute_fisher(m, tr, 2)


def test_freeze_old_masks():
    m = _model(10)
    old = {k: p.shape for k, p in m.parameters().items()}
    m.expand_memory(2, np.random.default_rng(0))
    masks = freeze_old(m, old)
    assert masks["head.weight"] is True
    assert masks["membank.keys"][:4].all() and not masks["membank.keys"][4:].any()


# ------------------------------------------------------------- schedules

def test_single_domain_schedule_equals_plain_training(tiny_data, tiny_config):
    res = run_schedule(schedule(["fic"], MEM_EXPAND), tiny_data, tiny_config,
                       eval_domains=["fic", "gov", "slate"])
    assert res.matrix.shape == (1, 3)
    src = train_source(ScheduleEntry("fic", epochs=2, patience=2), tiny_data, tiny_config,
                       ["fic", "gov", "slate"])
    np.testing.assert_array_equal(res.matrix[0], src.row)
    assert_states_equal(res.model.state(), src.model.state())


def test_matrix_shape_and_range(tiny_data, tiny_config):
    res = run_schedule(schedule(["fic", "gov", "slate"], MEM_EXPAND), tiny_data, tiny_config)
    assert res.matrix.shape == (3, 3)
    assert ((res.matrix >= 0) & (res.matrix <= 1)).all()
    assert res.model.bank.domain_boundaries == [4, 8, 12]


@pytest.mark.parametrize("vocab", [False, True])
def test_mem_expand_zero_slots_equals_finetune(tiny_data, tiny_config, vocab):
    names = ["fic", "gov"]
    a = run_schedule(schedule(names, MEM_EXPAND, slots=0, vocab=vocab), tiny_data, tiny_config)
    b = run_schedule(schedule(names, FINETUNE, slots=0, vocab=vocab), tiny_data, tiny_config)
    assert_states_equal(a.model.state(), b.model.state())
    np.testing.assert_array_equal(a.matrix, b.matrix)


def test_hidden_expand_zero_equals_finetune(tiny_data, tiny_config):
    # parity with zero slots yields zero extra units
    names = ["fic", "gov"]
    a = run_schedule(schedule(names, HIDDEN_EXPAND, slots=0), tiny_data, tiny_config)
    b = run_schedule(schedule(names, FINETUNE, slots=0), tiny_data, tiny_config)
    assert_states_equal(a.model.state(), b.model.state())


def test_ewc_lambda_zero_equals_finetune(tiny_data, tiny_config):
    names = ["fic", "gov", "slate"]
    tiny_config.ewc_lambda = 0.0
    a = run_schedule(schedule(names, EWC), tiny_data, tiny_config)
    b = run_schedule(schedule(names, FINETUNE), tiny_data, tiny_config)
    assert_states_equal(a.model.state(), b.model.state())
    np.testing.assert_array_equal(a.matrix, b.matrix)


def test_ewc_changes_training_when_active(tiny_data, tiny_config):
    names = ["fic", "gov"]
    tiny_config.ewc_lambda = 100.0
    a = run_schedule(schedule(names, EWC), tiny_data, tiny_config)
    b = run_schedule(schedule(names, FINETUNE), tiny_data, tiny_config)
    assert not np.array_equal(a.model.state()["head.weight"], b.model.state()["head.weight"])


def test_frozen_variant_keeps_old_parameters(tiny_data, tiny_config):
    names = ["fic", "gov"]
    src = train_source(ScheduleEntry("fic", epochs=2, patience=2), tiny_data, tiny_config, names)
    res = run_schedule(schedule(names, MEM_FROZEN, vocab=True), tiny_data, tiny_config,
                       source=src)
    old = src.model.state()
    new = res.model.state()
    for k, v in old.items():
        lead = tuple(slice(0, n) for n in v.shape)
        np.testing.assert_array_equal(new[k][lead], v, err_msg=k)
    assert not np.array_equal(new["membank.keys"][4:], 0)


def test_vocab_expand_adds_target_tokens(tiny_data, tiny_config):
    res = run_schedule(schedule(["fic", "gov"], MEM_EXPAND, vocab=True), tiny_data, tiny_config)
    gov_tokens = {t for ex in tiny_data["gov"]["train"] for t in ex.tokens}
    assert gov_tokens <= set(res.vocab.to_list())
    assert res.model.embedding.vocab_size == len(res.vocab)


def test_hidden_expand_grows_width(tiny_data):
    cfg = RunConfig(seed=1, embed_dim=4, hidden_dim=4, n_slots=4, slots=40, lr=3e-3,
                    batch_size=16, epochs=1, patience=1)
    res = run_schedule(schedule(["fic", "gov"], HIDDEN_EXPAND, slots=40, epochs=1),
                       tiny_data, cfg)
    assert res.model.hidden_dim > 4


def test_source_reuse_matches_fresh_run(tiny_data, tiny_config):
    names = ["fic", "gov"]
    src = train_source(ScheduleEntry("fic", epochs=2, patience=2), tiny_data, tiny_config, names)
    a = run_schedule(schedule(names, MEM_EXPAND), tiny_data, tiny_config, source=src)
    b = run_schedule(schedule(names, MEM_EXPAND), tiny_data, tiny_config)
    assert_states_equal(a.model.state(), b.model.state())
    # the shared source is not mutated
    assert src.model.bank.n_slots == 4


def test_multitask_rules(tiny_data, tiny_config):
    with pytest.raises(ValueError, match="incremental"):
        DomainSchedule([ScheduleEntry("fic", MULTITASK), ScheduleEntry("gov", MEM_EXPAND)])
    res = run_schedule(schedule(["fic", "gov"], MULTITASK), tiny_data, tiny_config)
    assert not res.incremental
    assert res.matrix.shape == (1, 2)
    assert res.model.bank.n_slots == 8


def test_schedule_validation(tiny_data, tiny_config):
    with pytest.raises(ValueError):
        DomainSchedule([])
    with pytest.raises(ValueError):
        ScheduleEntry("fic", slots=-1)
    with pytest.raises(ValueError):
        ScheduleEntry("fic", method="distill")
    with pytest.raises(ValueError, match="no data"):
        run_schedule(schedule(["fic", "nowhere"], MEM_EXPAND), tiny_data, tiny_config)


def test_run_is_deterministic(tiny_data, tiny_config):
    a = run_schedule(schedule(["fic", "gov"], MEM_EXPAND), tiny_data, tiny_config)
    b = run_schedule(schedule(["fic", "gov"], MEM_EXPAND), tiny_data, tiny_config)
    np.testing.assert_array_equal(a.matrix, b.matrix)


def test_checkpoints_written_per_stage(tiny_data, tiny_config, tmp_path):
    run_schedule(schedule(["fic", "gov"], MEM_EXPAND), tiny_data, tiny_config, out_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["stage0_fic.pmem", "stage1_gov.pmem"]


def test_run_config_json_round_trip(tmp_path):
    cfg = RunConfig(seed=4, hidden_dim=16, schedule=["a", "b"], method=EWC, lr=1e-3)
    cfg.save(tmp_path / "c.json")
    assert RunConfig.load(tmp_path / "c.json") == cfg
    with pytest.raises(ValueError):
        RunConfig.from_dict({"bogus": 1})
