"""Fusion/target networks: identities, bounds, determinism, checkpoints."""
import numpy as np
import pytest
from scipy.special import erf

from igrot import (
    FormatError,
    ModelConfig,
    ValidationError,
    fuse_query,
    init_params,
    load_checkpoint,
    save_checkpoint,
    target_feature,
    union_forward,
)
from igrot.autodiff import Tape, Tensor, grad_check
from igrot.losses import LossConfig, bbc_loss
from igrot.network import (
    LN_EPS,
    checkpoint_bytes,
    fuse_queries,
    target_features,
    transformer_block,
    union_batch,
)

CFG = ModelConfig(dim=8, union_heads=2, head_dim=4, fusion_heads=2, ffn_mult=2, seed=1)


def test_config_head_arithmetic():
    ModelConfig(dim=512, union_heads=8, head_dim=64)  # 8 x 64 = 512
    with pytest.raises(ValidationError):
        ModelConfig(dim=512, union_heads=12, head_dim=64)  # 12 x 64 != 512


def test_config_defaults_resolve_by_dim():
    assert ModelConfig(dim=512).union_heads == 8
    assert ModelConfig(dim=768).union_heads == 12


def test_config_fusion_heads_must_divide():
    with pytest.raises(ValidationError):
        ModelConfig(dim=10, union_heads=2, head_dim=5, fusion_heads=4)


def test_init_deterministic():
    a = init_params(CFG)
    b = init_params(CFG)
    assert checkpoint_bytes(a, CFG) == checkpoint_bytes(b, CFG)
    c = init_params(ModelConfig(dim=8, union_heads=2, head_dim=4, fusion_heads=2, ffn_mult=2, seed=2))
    assert checkpoint_bytes(a, CFG) != checkpoint_bytes(c, CFG)


def test_param_count_pure_function_of_config():
    assert init_params(CFG).count() == init_params(CFG).count()


def _numpy_layer_norm(x, gamma, beta):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return gamma * (x - mu) / np.sqrt(var + LN_EPS) + beta


def test_block_single_token_attention_is_identity_weight():
    """With T=1 the attention weight is forced to [[1.0]]; an independent
    numpy forward with that weight hardcoded must match the block exactly."""
    rng = np.random.default_rng(3)
    params = init_params(CFG)
    layer = params.union[0]
    x = rng.standard_normal((2, 1, 8))

    out = transformer_block(Tensor(x), layer, CFG.union_heads, CFG.head_dim).data

    h = _numpy_layer_norm(x, layer.ln1_gamma.data, layer.ln1_beta.data)
    attn = (h @ layer.attn_v.data) @ layer.attn_o.data  # weights == 1 at T=1
    mid = x + attn
    h2 = _numpy_layer_norm(mid, layer.ln2_gamma.data, layer.ln2_beta.data)
    pre = h2 @ layer.ffn_w1.data + layer.ffn_b1.data
    act = pre * 0.5 * (1.0 + erf(pre / np.sqrt(2.0)))
    expected = mid + act @ layer.ffn_w2.data + layer.ffn_b2.data
    assert np.allclose(out, expected, atol=1e-12)


def test_block_zero_weights_is_identity():
    params = init_params(CFG)
    layer = params.union[0]
    for name in layer.FIELDS:
        getattr(layer, name).data[:] = 0.0
    x = np.random.default_rng(4).standard_normal((3, 2, 8))
    out = transformer_block(Tensor(x), layer, CFG.union_heads, CFG.head_dim).data
    assert np.array_equal(out, x)


def test_block_gradients():
    rng = np.random.default_rng(5)
    params = init_params(CFG)
    layer = params.union[0]
    x = Tensor(rng.standard_normal((2, 2, 8)), requires_grad=True, name="x")
    probe = rng.standard_normal((2, 2, 8))

    def f(*_):
        out = ad_mul_scalarize(transformer_block(x, layer, 2, 4), probe)
        return out

    tensors = [x] + [getattr(layer, n) for n in layer.FIELDS]
    assert grad_check(f, tensors, eps=1e-5, tol=1e-4).passed


def ad_mul_scalarize(t, probe):
    from igrot import autodiff as ad

    out = ad.mul(t, Tensor(probe))
    while out.data.ndim > 0:
        out = ad.reduce_mean(out, 0)
    return out


def test_union_identity_when_target_equals_null():
    rng = np.random.default_rng(6)
    params = init_params(CFG)
    e = rng.standard_normal(8)
    u, w = union_forward(e, e, params, CFG)
    assert np.array_equal(u, e)
    assert ((w > 0) & (w < 1)).all()


def test_union_zeroed_gate_layer_gives_midpoint():
    rng = np.random.default_rng(7)
    params = init_params(CFG)
    params.gate_w2.data[:] = 0.0
    params.gate_b2.data[:] = 0.0
    e_t = rng.standard_normal(8)
    e_eta = rng.standard_normal(8)
    u, w = union_forward(e_t, e_eta, params, CFG)
    assert np.array_equal(w, np.full(8, 0.5))
    assert np.max(np.abs(u - (e_t + e_eta) / 2.0)) <= 1e-12


def test_union_convexity_and_gate_bounds():
    rng = np.random.default_rng(8)
    params = init_params(CFG)
    e_t = rng.standard_normal((1000, 8))
    e_eta = rng.standard_normal(8)
    u, w = union_batch(e_t, e_eta, params, CFG)
    assert (w.data > 0).all() and (w.data < 1).all()
    low = np.minimum(e_t, e_eta)
    high = np.maximum(e_t, e_eta)
    assert (u.data >= low).all() and (u.data <= high).all()


def test_union_permutation_consistency():
    rng = np.random.default_rng(9)
    params = init_params(CFG)
    e_t = rng.standard_normal((16, 8))
    e_eta = rng.standard_normal(8)
    perm = rng.permutation(16)
    u_direct, _ = union_batch(e_t[perm], e_eta, params, CFG)
    u_full, _ = union_batch(e_t, e_eta, params, CFG)
    assert np.array_equal(u_direct.data, u_full.data[perm])


def test_fuse_query_deterministic_and_caption_paths():
    rng = np.random.default_rng(10)
    params = init_params(CFG)
    e_r = rng.standard_normal(8)
    e_eta = rng.standard_normal(8)
    out1 = fuse_query(e_r, e_eta, params, CFG)
    out2 = fuse_query(e_r, e_eta, params, CFG)
    assert np.array_equal(out1, out2)
    # absent caption means the caller passes the null-text vector; a different
    # caption vector must change the fused output
    other = fuse_query(e_r, rng.standard_normal(8), params, CFG)
    assert not np.array_equal(out1, other)


def test_pool_first_differs_from_mean():
    params = init_params(CFG)
    cfg_first = ModelConfig(dim=8, union_heads=2, head_dim=4, fusion_heads=2, ffn_mult=2, pool="first", seed=1)
    rng = np.random.default_rng(11)
    e_r, e_c = rng.standard_normal(8), rng.standard_normal(8)
    assert not np.array_equal(
        fuse_query(e_r, e_c, params, CFG), fuse_query(e_r, e_c, params, cfg_first)
    )


def test_target_feature_modes():
    rng = np.random.default_rng(12)
    params = init_params(CFG)
    e_t = rng.standard_normal(8)
    e_eta = rng.standard_normal(8)
    assert np.array_equal(target_feature("original", e_t, e_eta, params, CFG), e_t)
    assert np.array_equal(
        target_feature("sum", e_t, np.zeros(8), params, CFG), e_t
    )
    assert np.array_equal(target_feature("union", e_t, e_t, params, CFG), e_t)
    with pytest.raises(ValidationError):
        target_feature("bogus", e_t, e_eta, params, CFG)


def test_all_params_receive_gradient():
    rng = np.random.default_rng(13)
    params = init_params(CFG)
    e_r = rng.standard_normal((6, 8))
    e_c = rng.standard_normal((6, 8))
    e_t = rng.standard_normal((6, 8))
    eta = rng.standard_normal(8)
    with Tape() as tape:
        fused = fuse_queries(e_r, e_c, params, CFG)
        targets = target_features("union", e_t, eta, params, CFG)
        loss = bbc_loss(fused, targets, LossConfig(tau=1.0))
    tape.backward(loss)
    for name, tensor in params.named():
        assert tensor.grad is not None, name
        assert np.abs(tensor.grad).max() > 0, name


def test_checkpoint_roundtrip(tmp_path):
    params = init_params(CFG)
    path = tmp_path / "m.unck"
    save_checkpoint(params, CFG, path)
    loaded, cfg2 = load_checkpoint(path)
    assert cfg2 == CFG
    for (n1, t1), (n2, t2) in zip(params.named(), loaded.named()):
        assert n1 == n2
        assert t1.data.tobytes() == t2.data.tobytes()
    rng = np.random.default_rng(14)
    probe_r, probe_c = rng.standard_normal(8), rng.standard_normal(8)
    assert np.array_equal(
        fuse_query(probe_r, probe_c, params, CFG), fuse_query(probe_r, probe_c, loaded, cfg2)
    )


def test_checkpoint_corruption_detected(tmp_path):
    params = init_params(CFG)
    path = tmp_path / "m.unck"
    save_checkpoint(params, CFG, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-16])
    with pytest.raises(FormatError, match="truncated"):
        load_checkpoint(path)
    path.write_bytes(blob + b"\x00" * 8)
    with pytest.raises(FormatError, match="trailing"):
        load_checkpoint(path)
    path.write_bytes(b"ZZZZ" + blob[4:])
    with pytest.raises(FormatError, match="checkpoint"):
        load_checkpoint(path)


def test_checkpoint_version_mismatch(tmp_path):
    params = init_params(CFG)
    path = tmp_path / "m.unck"
    save_checkpoint(params, CFG, path)
    blob = bytearray(path.read_bytes())
    blob[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="version"):
        load_checkpoint(path)
