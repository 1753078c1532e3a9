import numpy as np
import pytest

from refvos.mti import MTI, BLOCKED, mti_decode, mti_encode, window_ids, window_mask
from refvos.tensors import Tensor

pytestmark = pytest.mark.usefixtures("f64")

DIM = 16


def make(enc_blocks=3, dec_blocks=3, **kw):
    return MTI(np.random.default_rng(4), dim=DIM, heads=2, ffn_dim=32, num_queries=3,
               enc_blocks=enc_blocks, dec_blocks=dec_blocks, **kw)


def test_window_ids():
    assert window_ids(5, 2, 0).tolist() == [0, 0, 1, 1, 2]
    assert window_ids(5, 2, 1).tolist() == [-1, 0, 0, 1, 1]
    assert window_ids(3, 8, 0).tolist() == [0, 0, 0]  # clamped to T


def test_window_mask_structure():
    m = window_mask(3, 2, 2, 0, cross_query=True)
    allowed = m == 0
    assert allowed[0, 3] and not allowed[0, 4]  # frame 0 sees frame 1, not frame 2
    m = window_mask(3, 2, 2, 0, cross_query=False)
    assert (m[0, 1] == BLOCKED) and (m[0, 2] == 0)  # same query index across frames only


def test_shape_preserved(rng):
    net = make()
    for t in (1, 2, 5):
        p = Tensor(rng.normal(size=(t, 3, DIM)))
        assert mti_encode(p, net).shape == (t, 3, DIM)
        assert mti_decode(net.video_queries, p, net).shape == (3, DIM)


def test_bypass_identity(rng):
    net = make()
    net.zero_residuals()
    p = Tensor(rng.normal(size=(5, 3, DIM)))
    out_p, out_q = net(p)
    assert np.array_equal(out_p.data, p.data)
    assert np.array_equal(out_q.data, net.video_queries.data)


def test_attention_only_bypass_leaves_ffn_path(rng):
    net = make(enc_blocks=1)
    net.encoder[0].attn.out.zero_()
    p = Tensor(rng.normal(size=(4, 3, DIM)))
    out = mti_encode(p, net).data
    blk = net.encoder[0]
    expect = p.data + blk.ffn(blk.norm2(p)).data
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_single_frame_without_cross_query_is_per_query(rng):
    net = make(enc_blocks=2, cross_query=False)
    p = rng.normal(size=(1, 3, DIM))
    base = mti_encode(Tensor(p), net).data
    q = p.copy()
    q[0, 2] += 1.0
    moved = mti_encode(Tensor(q), net).data
    assert np.array_equal(base[0, :2], moved[0, :2])


def _influence(net, src, rng, t=5):
    p = rng.normal(size=(t, 3, DIM))
    base = mti_encode(Tensor(p), net).data
    q = p.copy()
    q[src] += 1.0
    return [not np.array_equal(base[k], mti_encode(Tensor(q), net).data[k]) for k in range(t)]


def test_locality_one_block(rng):
    hit = _influence(make(enc_blocks=1), 0, rng)
    assert hit == [True, True, False, False, False]


def test_receptive_field_grows_with_shift(rng):
    one = _influence(make(enc_blocks=1), 1, rng)
    two = _influence(make(enc_blocks=2), 1, rng)
    assert one == [True, True, False, False, False]
    assert two[2] and not one[2]  # frame 2 lies beyond frame 1's first window


def test_decoder_temporal_keys(rng):
    p = rng.normal(size=(4, 3, DIM))
    perm = [2, 0, 3, 1]
    plain = make(temporal_keys=False)
    a = mti_decode(plain.video_queries, Tensor(p), plain).data
    b = mti_decode(plain.video_queries, Tensor(p[perm]), plain).data
    np.testing.assert_allclose(a, b, atol=1e-12)
    timed = make(temporal_keys=True)
    a = mti_decode(timed.video_queries, Tensor(p), timed).data
    b = mti_decode(timed.video_queries, Tensor(p[perm]), timed).data
    assert not np.allclose(a, b)


def test_disabled_returns_inputs(rng):
    net = make(enabled=False)
    p = Tensor(rng.normal(size=(2, 3, DIM)))
    out_p, out_q = net(p)
    assert out_p is p and out_q is net.video_queries


def test_video_query_init_scale():
    net = MTI(np.random.default_rng(0), dim=256, heads=8, ffn_dim=64, num_queries=5,
              enc_blocks=1, dec_blocks=1)
    assert abs(net.video_queries.data.std() - 0.02) < 0.003
