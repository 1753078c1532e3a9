import numpy as np
import pytest

from refvos.errors import InputError
from refvos.mta import MTA, concat_frames, make_queries, mta_forward, temporal_concat
from refvos.tensors import Tensor

pytestmark = pytest.mark.usefixtures("f64")

DIM = 32


def scales_for(rng, t, dim=DIM, extents=((16, 16), (8, 8), (4, 4), (2, 2))):
    return [Tensor(rng.normal(size=(t, h, w, dim))) for h, w in extents]


@pytest.fixture
def mta():
    return MTA(np.random.default_rng(5), dim=DIM, heads=4, ffn_dim=64)


def test_bank_shapes_and_layout(rng):
    scales = scales_for(rng, 5, dim=256)
    banks = temporal_concat(scales)
    assert banks[0].shape == (1280, 256)
    assert [b.shape[0] for b in banks] == [1280, 320, 80, 20]
    # token H*W is frame 2 (index 1) at (0, 0)
    np.testing.assert_array_equal(banks[0].data[256], scales[0].data[1, 0, 0])
    np.testing.assert_array_equal(banks[1].data[64 * 3 + 8 * 2 + 5], scales[1].data[3, 2, 5])


def test_single_frame_bank_is_flat_frame(rng):
    scales = scales_for(rng, 1)
    for s, b in zip(scales, temporal_concat(scales)):
        np.testing.assert_array_equal(b.data, s.data.reshape(-1, DIM))


def test_bank_embeddings_added(mta, rng):
    scales = scales_for(rng, 2)
    plain, embedded = temporal_concat(scales), temporal_concat(scales, mta.embed)
    diff = embedded[2].data - plain[2].data
    expect = mta.embed.sine(4, 4)[None] + mta.embed.frame.data[:2, None] + mta.embed.scale.data[2]
    np.testing.assert_allclose(diff, expect.reshape(-1, DIM), atol=1e-12)


def test_concat_frames_rejects_mismatched_extents(rng):
    a = [Tensor(rng.normal(size=(h, h, DIM))) for h in (16, 8, 4, 2)]
    b = [Tensor(rng.normal(size=(h, h, DIM))) for h in (16, 8, 4, 3)]
    assert concat_frames([a, a])[0].shape == (512, DIM)
    with pytest.raises(InputError):
        concat_frames([a, b])


def test_zero_residuals_identity(mta, rng):
    mta.zero_residuals()
    ref = Tensor(rng.normal(size=(6, DIM)))
    out = mta_forward(ref, temporal_concat(scales_for(rng, 3), mta.embed), mta.blocks)
    assert np.array_equal(out.data, ref.data)


def test_output_shape_any_bank_size(mta, rng):
    ref = Tensor(rng.normal(size=(4, DIM)))
    for ext in [((8, 8), (4, 4), (2, 2), (1, 1)), ((16, 8), (8, 4), (4, 2), (2, 1))]:
        out = mta_forward(ref, temporal_concat(scales_for(rng, 2, extents=ext), mta.embed), mta.blocks)
        assert out.shape == ref.shape


def test_frame_order_carries_information(mta, rng):
    # reverse the frames' content while frame embeddings stay attached to positions
    ref = Tensor(rng.normal(size=(4, DIM)))
    scales = scales_for(rng, 3)
    reversed_scales = [Tensor(s.data[::-1].copy()) for s in scales]
    a = mta_forward(ref, temporal_concat(scales, mta.embed), mta.blocks).data
    b = mta_forward(ref, temporal_concat(reversed_scales, mta.embed), mta.blocks).data
    assert not np.allclose(a, b)


def test_cascade_order_matters(mta, rng):
    ref = Tensor(rng.normal(size=(4, DIM)))
    banks = temporal_concat(scales_for(rng, 2), mta.embed)
    forward = mta_forward(ref, banks, mta.blocks).data
    backward = mta_forward(ref, banks[::-1], [cascade[::-1] for cascade in mta.blocks]).data
    assert not np.allclose(forward, backward)


def test_cascade_golden_value():
    rng = np.random.default_rng(0)
    net = MTA(np.random.default_rng(1), dim=8, heads=2, ffn_dim=8)
    ref = Tensor(rng.normal(size=(3, 8)))
    out = mta_forward(ref, temporal_concat(scales_for(rng, 2, dim=8), net.embed), net.blocks)
    assert out.data[0, :3] == pytest.approx(GOLDEN, rel=1e-9)


# recorded from the first implementation; locks the 2 -> 5 cascade wiring
GOLDEN = [1.9691554319394902, 2.8388844956689296, 0.39189354165703016]


def test_make_queries():
    fused = Tensor(np.arange(12.0).reshape(3, 4))
    q = make_queries(fused, 5, Tensor(np.zeros((5, 4))), Tensor(np.zeros((8, 4))))
    assert q.shape == (5, 5, 4) and np.all(q.data == fused.data[0])
    eq = Tensor(np.eye(5, 4))
    et = Tensor(np.full((8, 4), 0.5))
    q = make_queries(fused, 2, eq, et)
    np.testing.assert_array_equal(q.data[1, 3], fused.data[0] + eq.data[3] + 0.5)
    rows = q.data[0]
    assert len({tuple(r) for r in rows}) == 5
    doubled = make_queries(fused, 2, eq * 2, et * 2).data
    np.testing.assert_allclose(doubled - fused.data[0], 2 * (q.data - fused.data[0]))
    with pytest.raises(InputError):
        make_queries(fused, 0, eq, et)


def test_disabled_mta_passes_reference(rng):
    net = MTA(np.random.default_rng(0), dim=DIM, heads=4, ffn_dim=64, enabled=False)
    ref = Tensor(rng.normal(size=(4, DIM)))
    queries, fused = net(ref, scales_for(rng, 2))
    assert fused is ref and queries.shape == (2, 5, DIM)
