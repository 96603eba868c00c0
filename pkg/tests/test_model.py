import numpy as np
import pytest

from clozeslot import autograd as ag
from clozeslot.autograd import Tensor, checkpoint
from clozeslot.model import ExtraFeatures, ModelConfig, SpanExtractor, pad_ids
from clozeslot.tags import token_span_to_tags
from clozeslot.training import EncodedPair, pretrain_loss
from gradcheck import max_rel_error, numeric_grad

TOY = ModelConfig(
    vocab_size=17, max_len=10, encoder_layers=1, encoder_dim=8, encoder_heads=2, encoder_ffn_dim=8,
    proj_hidden_dim=8, proj_dim=4, decoder_blocks=2, decoder_heads=2, decoder_attention_projection_dim=3,
    decoder_ffn_dim=6, residual_hidden_dim=5, dropout_rate=0.0,
)

DEFAULT = ModelConfig(vocab_size=4000)


def toy_batch():
    return [
        EncodedPair((1, 5, 3, 7, 2), (1, 8, 9, 6, 10, 2), tuple(token_span_to_tags(6, (2, 4))), "a"),
        EncodedPair((1, 11, 3, 2), (1, 12, 13, 14, 15, 16, 2), tuple(token_span_to_tags(7, (1, 2))), "b"),
    ]


def encode_one(model, ids):
    return model.encode(ids)


def decode_one(model, template_ids, input_ids, extra=None):
    t_ids, t_len = pad_ids([template_ids])
    i_ids, i_len = pad_ids([input_ids])
    with ag.no_grad():
        t = model.encode_batch(t_ids, t_len)
        x = model.encode_batch(i_ids, i_len)
        return model.decode(t, t_len, x, i_len, extra)


def test_full_pretraining_loss_matches_finite_differences():
    with ag.default_dtype(np.float64):
        model = SpanExtractor(TOY, seed=3, dtype=np.float64)
        params = model.trainable_parameters("pretrain")
        batch = toy_batch()
        loss, _, aux = pretrain_loss(model, batch, aux_scale=1.7)
        assert aux is not None and aux.item() != 0.0
        ag.backward(loss)
        # Attention key biases shift every score of a query equally, so softmax makes
        # their true gradient identically zero; finite differences only see roundoff there.
        structural_zero = {n: p for n, p in params.items() if n.endswith("key.bias")}
        used = {n: p for n, p in params.items() if not n.startswith("decoder.residual") and n not in structural_zero}
        analytic = [used[n].grad for n in used]
        arrays = [used[n].data for n in used]

        def scalar():
            return pretrain_loss(model, batch, aux_scale=1.7)[0].item()

        numeric = numeric_grad(scalar, arrays, eps=1e-5)
    assert all(np.abs(p.grad).max() < 1e-12 for p in structural_zero.values())
    worst = max(max_rel_error(a, n, floor=1e-6) for a, n in zip(analytic, numeric))
    assert worst < 1e-4


def test_finetune_loss_with_side_features_matches_finite_differences():
    from clozeslot.crf import crf_nll

    with ag.default_dtype(np.float64):
        model = SpanExtractor(TOY, seed=5, dtype=np.float64)
        rng = np.random.default_rng(1)
        for p in model.decoder.residual.parameters():  # zero-initialized output layer: give it weights
            p.data[...] = rng.standard_normal(p.shape) * 0.3
        ids, lengths = pad_ids([[1, 5, 6, 7, 2], [1, 8, 2]])
        with ag.no_grad():
            enc = Tensor(model.encode_batch(ids, lengths).data)
        extra = ExtraFeatures(np.array([True, False]), np.array([[0, 1, 0, 1, 0], [0, 1, 0, 0, 0]], dtype=bool))
        tags = np.array([[0, 1, 2, 3, 3], [0, 0, 0, 0, 0]])

        def loss_fn():
            feats = model.decode(enc, lengths, enc, lengths, extra)
            return ag.mean(crf_nll(feats.transitions, feats.unaries, tags, lengths))

        params = {n: p for n, p in model.trainable_parameters("finetune").items() if not n.endswith("key.bias")}
        ag.backward(loss_fn())
        analytic = [p.grad for p in params.values()]
        numeric = numeric_grad(lambda: loss_fn().item(), [p.data for p in params.values()], eps=1e-5)
    assert max(max_rel_error(a, n, floor=1e-6) for a, n in zip(analytic, numeric)) < 1e-4


def test_potential_shapes_and_summaries():
    model = SpanExtractor(TOY, seed=0)
    feats = decode_one(model, [1, 3, 4, 2], [1, 5, 6, 7, 8, 2])
    assert feats.transitions.shape == (1, 6, 4, 4)
    assert feats.unaries.shape == (1, 6, 4)
    assert feats.template_summary.shape == (1, TOY.proj_dim)
    assert feats.input_summary.shape == (1, TOY.proj_dim)


def test_encode_shape_determinism_and_order_sensitivity():
    model = SpanExtractor(TOY, seed=0)
    a = encode_one(model, [1, 5, 6, 7, 2])
    assert a.shape == (5, TOY.encoder_dim)
    np.testing.assert_array_equal(a, encode_one(model, [1, 5, 6, 7, 2]))
    b = encode_one(model, [1, 6, 5, 7, 2])
    assert not np.allclose(a, b)


def test_too_long_sequence_rejected():
    model = SpanExtractor(TOY, seed=0)
    with pytest.raises(ValueError, match="max_len"):
        encode_one(model, list(range(1, 12)))


def test_decoder_attends_to_template():
    model = SpanExtractor(TOY, seed=0)
    base = decode_one(model, [1, 3, 4, 2], [1, 5, 6, 7, 2])
    other = decode_one(model, [1, 3, 9, 2], [1, 5, 6, 7, 2])
    assert not np.allclose(base.unaries.data, other.unaries.data)


def test_padding_does_not_change_outputs():
    model = SpanExtractor(TOY, seed=0)
    alone = decode_one(model, [1, 3, 4, 2], [1, 5, 6, 2])
    t_ids, t_len = pad_ids([[1, 3, 4, 2], [1, 3, 4, 5, 6, 2]])
    i_ids, i_len = pad_ids([[1, 5, 6, 2], [1, 5, 6, 7, 8, 9, 2]])
    with ag.no_grad():
        feats = model.decode(model.encode_batch(t_ids, t_len), t_len, model.encode_batch(i_ids, i_len), i_len)
    np.testing.assert_allclose(feats.unaries.data[0, :4], alone.unaries.data[0], atol=1e-5)


def test_residual_layer_is_bypassed_without_features():
    model = SpanExtractor(TOY, seed=0)
    for p in model.decoder.residual.parameters():
        p.data[...] = 1.0
    plain = decode_one(model, [1, 3, 4, 2], [1, 5, 6, 2])
    other = SpanExtractor(TOY, seed=0)
    np.testing.assert_array_equal(plain.unaries.data, decode_one(other, [1, 3, 4, 2], [1, 5, 6, 2]).unaries.data)
    extra = ExtraFeatures(np.array([True]), np.array([[0, 1, 0, 0]], dtype=bool))
    with_features = decode_one(model, [1, 3, 4, 2], [1, 5, 6, 2], extra)
    assert not np.allclose(plain.unaries.data, with_features.unaries.data)


def test_fresh_residual_layer_is_an_additive_zero():
    model = SpanExtractor(TOY, seed=0)
    extra = ExtraFeatures(np.array([True]), np.array([[0, 1, 0, 0]], dtype=bool))
    a = decode_one(model, [1, 5, 6, 2], [1, 5, 6, 2])
    b = decode_one(model, [1, 5, 6, 2], [1, 5, 6, 2], extra)
    np.testing.assert_array_equal(a.unaries.data, b.unaries.data)


def test_finetune_parameters_exclude_encoder_and_are_small():
    model = SpanExtractor(DEFAULT, seed=0)
    every = model.trainable_parameters("pretrain")
    tuned = model.trainable_parameters("finetune")
    assert not set(tuned) & set(model.encoder_state())
    assert all(name.startswith("decoder.") for name in tuned)
    assert set(tuned) | set(model.encoder_state()) == set(every)
    n_all = sum(p.data.size for p in every.values())
    n_tuned = sum(p.data.size for p in tuned.values())
    assert n_tuned < 0.2 * n_all
    with pytest.raises(ValueError):
        model.trainable_parameters("evaluate")


def test_config_invariants():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, encoder_dim=16, encoder_heads=4, proj_dim=32)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=0)


def test_checkpoint_round_trip_restores_outputs(tmp_path):
    model = SpanExtractor(TOY, seed=0)
    model.save(tmp_path / "ckpt")
    assert (tmp_path / "ckpt" / "encoder" / "params.bin").exists()
    assert (tmp_path / "ckpt" / "decoder" / "params.bin").exists()
    loaded = SpanExtractor.load(tmp_path / "ckpt")
    a = decode_one(model, [1, 3, 4, 2], [1, 5, 6, 2])
    b = decode_one(loaded, [1, 3, 4, 2], [1, 5, 6, 2])
    np.testing.assert_array_equal(a.unaries.data, b.unaries.data)
    _, meta = checkpoint.load(tmp_path / "ckpt" / "encoder")
    assert ModelConfig.from_dict(meta["model_config"]) == TOY


def test_checkpoint_shape_mismatch_is_reported(tmp_path):
    SpanExtractor(TOY, seed=0).save(tmp_path / "ckpt")
    bigger = SpanExtractor(ModelConfig(**{**TOY.to_dict(), "encoder_dim": 12, "encoder_heads": 2}), seed=0)
    with pytest.raises(checkpoint.CheckpointError, match="shape mismatch"):
        bigger.load_encoder(tmp_path / "ckpt" / "encoder")
