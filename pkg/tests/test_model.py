import numpy as np
import pytest

from progmem.data import Vocab
from progmem.ida import expand_vocab, param_parity
from progmem.layers import embed, encode_batch
from progmem.model import MemoryRNNClassifier, ModelConfig, check_gradients, count_params


def small(seed=0, **kw):
    cfg = dict(vocab_size=12, embed_dim=5, hidden_dim=6, n_slots=4)
    cfg.update(kw)
    return MemoryRNNClassifier(ModelConfig(**cfg), np.random.default_rng(seed))


def batch(rng, vocab=12, B=3, T=5):
    tokens = rng.integers(3, vocab, (B, T))
    lengths = rng.integers(1, T + 1, B)
    lengths[0] = T
    for b, L in enumerate(lengths):
        tokens[b, L:] = 0
    return tokens, lengths


def hidden_states(model, tokens, lengths):
    x = embed(np.asarray(tokens).T.reshape(-1), model.embedding)
    return encode_batch(model.fwd, model.bwd, x, lengths, model.bank).data


def test_parameter_names_unique_and_grads_shaped():
    m = small()
    params = m.parameters()
    assert len(params) == len(set(params))
    for p in params.values():
        assert p.grad.shape == p.shape


@pytest.mark.parametrize("cell", ["lstm", "gru", "vanilla"])
@pytest.mark.parametrize("use_memory", [True, False])
def test_count_params_matches_enumeration(cell, use_memory):
    m = small(cell=cell, use_memory=use_memory)
    assert count_params(m.config) == sum(p.data.size for p in m.parameters().values())


def test_state_round_trip_and_clone():
    m = small()
    c = m.clone()
    rng = np.random.default_rng(1)
    tokens, lengths = batch(rng)
    np.testing.assert_array_equal(m.logits(tokens, lengths).data, c.logits(tokens, lengths).data)
    c.parameters()["head.bias"].data += 1.0
    assert not np.array_equal(m.head.bias.data, c.head.bias.data)
    c.load_state(m.state())
    np.testing.assert_array_equal(m.head.bias.data, c.head.bias.data)


def test_padding_neutrality_in_model():
    m = small()
    rng = np.random.default_rng(2)
    tokens, lengths = batch(rng)
    full = m.logits(tokens, lengths).data
    for b in range(len(lengths)):
        alone = m.logits(tokens[b:b + 1, :lengths[b]], [lengths[b]]).data
        assert np.abs(full[b] - alone[0]).max() < 1e-12


def test_expand_vocab_locality():
    m = small()
    vocab = Vocab([f"t{k}" for k in range(9)])
    rng = np.random.default_rng(3)
    tokens, lengths = batch(rng)
    before = m.logits(tokens, lengths).data
    old_rows = m.embedding.weight.data.copy()
    ids = expand_vocab(m, vocab, ["new1", "new2"], rng)
    assert ids == [12, 13] and len(vocab) == 14 == m.embedding.vocab_size
    np.testing.assert_array_equal(m.embedding.weight.data[:12], old_rows)
    np.testing.assert_array_equal(m.logits(tokens, lengths).data, before)


def test_expand_vocab_errors_and_empty():
    m = small()
    vocab = Vocab([f"t{k}" for k in range(9)])
    expand_vocab(m, vocab, [], np.random.default_rng(0))
    assert m.embedding.vocab_size == 12
    with pytest.raises(ValueError):
        expand_vocab(m, vocab, ["t1"], np.random.default_rng(0))
    with pytest.raises(ValueError):
        expand_vocab(m, vocab, ["x", "x"], np.random.default_rng(0))


def test_expand_hidden_zero_is_noop():
    m = small()
    state = m.state()
    m.expand_hidden(0, np.random.default_rng(0))
    for k, v in m.state().items():
        np.testing.assert_array_equal(v, state[k])


def test_expand_hidden_zero_blocks_isolate_old_units():
    m = small()
    rng = np.random.default_rng(4)
    tokens, lengths = batch(rng)
    D = m.hidden_dim
    before = hidden_states(m, tokens, lengths)
    logits = m.logits(tokens, lengths).data
    m.expand_hidden(3, rng, zero_new=True)
    after = hidden_states(m, tokens, lengths)
    D2 = m.hidden_dim
    assert D2 == D + 3
    np.testing.assert_array_equal(after[:, :D], before[:, :D])
    np.testing.assert_array_equal(after[:, D2:D2 + D], before[:, D:])
    # longer reductions in the widened head only change rounding
    np.testing.assert_allclose(m.logits(tokens, lengths).data, logits, rtol=0, atol=1e-12)


def test_expand_hidden_keeps_leading_blocks():
    m = small()
    old = m.state()
    m.expand_hidden(2, np.random.default_rng(5))
    for name, arr in m.state().items():
        lead = tuple(slice(0, n) for n in old[name].shape)
        np.testing.assert_array_equal(arr[lead], old[name])
    assert count_params(m.config) == m.n_params()


def test_hidden_perturbation_grows_with_width():
    # vanilla cell, the regime of the theory module: the random blocks feeding
    # new units into old ones perturb the old states more as width grows
    rng = np.random.default_rng(6)
    tokens, lengths = batch(rng, B=16, T=6)
    base = small(7, hidden_dim=8, cell="vanilla")
    ref = hidden_states(base, tokens, lengths)[:, :8]
    msd = []
    for extra in (1, 4, 16):
        vals = []
        for s in range(20):
            m = base.clone()
            m.expand_hidden(extra, np.random.default_rng(100 + s))
            vals.append(((hidden_states(m, tokens, lengths)[:, :8] - ref) ** 2).sum(1).mean())
        msd.append(np.mean(vals))
    assert msd[0] < msd[1] < msd[2]


def test_param_parity():
    m = small(hidden_dim=8, n_slots=4)
    assert param_parity(m, 0).d_extra == 0
    par = param_parity(m, 6)
    assert par.memory_added == 2 * 6 * 8
    assert par.hidden_added <= par.memory_added
    # exhaustive oracle: build both expanded models and count everything
    grown_mem = m.clone()
    grown_mem.expand_memory(6, np.random.default_rng(0))
    assert grown_mem.n_params() - m.n_params() == par.memory_added
    counts = []
    for extra in range(0, 12):
        h = m.clone()
        h.expand_hidden(extra, np.random.default_rng(0))
        counts.append(h.n_params() - m.n_params())
    best = max(e for e, c in enumerate(counts) if c <= par.memory_added)
    assert par.d_extra == best and counts[best] == par.hidden_added
    step = counts[best + 1] - counts[best]
    assert par.memory_added - par.hidden_added < step


def test_expand_memory_updates_config():
    m = small()
    m.expand_memory(3, np.random.default_rng(0))
    assert m.config.n_slots == 7 == m.bank.n_slots
    assert m.bank.domain_boundaries == [4, 7]


@pytest.mark.parametrize("seed", [0, 1])
def test_model_gradients(seed):
    assert check_gradients(seed).passed(1e-5)


def test_config_round_trip():
    cfg = ModelConfig(vocab_size=30, cell="gru", n_slots=9)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
