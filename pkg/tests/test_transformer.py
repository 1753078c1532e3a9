import numpy as np
import pytest

from refvos.tensors import Tensor
from refvos.transformer import VisualTransformer, decode_frame, encode_frame, run_video

pytestmark = pytest.mark.usefixtures("f64")

DIM = 32
EXTENTS = ((16, 16), (8, 8), (4, 4), (2, 2))


def scales_for(rng, lead=(), dim=DIM):
    return [Tensor(rng.normal(size=lead + (h, w, dim))) for h, w in EXTENTS]


@pytest.fixture
def net():
    return VisualTransformer(np.random.default_rng(2), dim=DIM, heads=4, ffn_dim=64,
                             enc_layers=2, dec_layers=2)


def test_encode_shapes_default_width(rng):
    big = VisualTransformer(np.random.default_rng(0), enc_layers=1, dec_layers=1)
    enc = encode_frame(scales_for(rng, dim=256), big)
    assert enc["pixel_map"].shape == (16, 16, 256)
    assert [s.shape for s in enc["scales"]] == [(h, w, 256) for h, w in EXTENTS]
    assert enc["memory"].shape == (340, 256)


def test_encoder_bypass_without_ffn(net, rng):
    for layer in net.encoder:
        layer.attn.out.zero_()
        layer.ffn.fc2.zero_()
    scales = scales_for(rng)
    enc = encode_frame(scales, net)
    for s, e in zip(scales, enc["scales"]):
        assert np.array_equal(s.data, e.data)


def test_decoder_single_query(net, rng):
    enc = encode_frame(scales_for(rng), net)
    assert decode_frame(Tensor(rng.normal(size=(1, DIM))), enc, net).shape == (1, DIM)


def test_decoder_permutation_equivariant(net, rng):
    enc = encode_frame(scales_for(rng), net)
    q = rng.normal(size=(5, DIM))
    perm = rng.permutation(5)
    a = decode_frame(Tensor(q), enc, net).data
    b = decode_frame(Tensor(q[perm]), enc, net).data
    np.testing.assert_allclose(a[perm], b, atol=1e-12)


def test_zero_cross_attention_ignores_memory(net, rng):
    for layer in net.decoder:
        layer.cross_attn.out.zero_()
    q = Tensor(rng.normal(size=(3, DIM)))
    a = decode_frame(q, encode_frame(scales_for(rng), net), net).data
    b = decode_frame(q, encode_frame(scales_for(rng), net), net).data
    assert np.array_equal(a, b)


def test_run_video_frame_independence(net, rng):
    scales = scales_for(rng, (3,))
    iq = rng.normal(size=(3, 4, DIM))
    p, _ = run_video(Tensor(iq), scales, net)
    assert p.shape == (3, 4, DIM)
    # swap frames 0 and 2 (features and queries) and perturb frame 1
    swapped = []
    for s in scales:
        d = s.data[[2, 1, 0]].copy()
        d[1] += 3.0
        swapped.append(Tensor(d))
    q, _ = run_video(Tensor(iq[[2, 1, 0]]), swapped, net)
    assert np.array_equal(p.data[0], q.data[2]) and np.array_equal(p.data[2], q.data[0])
    assert not np.allclose(p.data[1], q.data[1])


def test_run_video_single_frame_matches_decode(net, rng):
    scales = scales_for(rng, (1,))
    iq = rng.normal(size=(1, 4, DIM))
    p, _ = run_video(Tensor(iq), scales, net)
    single = decode_frame(Tensor(iq[0]), encode_frame([Tensor(s.data[0]) for s in scales], net), net)
    np.testing.assert_allclose(p.data[0], single.data, atol=1e-12)
