"""Tests for the encoder, the decoder and their losses."""
import itertools

import pytest
import torch

from depthdecode.encdec import (
    Decoder,
    Encoder,
    decode,
    encode,
    encoder_loss,
    image_loss,
    image_loss_terms,
    tv_regularizer,
)
from depthdecode.errors import ConsistencyError
from depthdecode.perceptual import FeatureExtractor, perceptual_loss
from depthdecode.sample import ChannelMode, FmriVector, RgbdSample


@pytest.mark.parametrize(
    "r_hat, r, expected",
    [
        ([0.5, -2.0, 1.0], [0.5, -2.0, 1.0], -0.1),
        ([0.0, 1.0], [1.0, 0.0], 0.9),
        ([2.0, 2.0], [1.0, 1.0], 0.8),
    ],
)
def test_encoder_loss_examples(r_hat, r, expected):
    loss = encoder_loss(torch.tensor(r_hat), torch.tensor(r), alpha=0.9)
    assert float(loss) == pytest.approx(expected, abs=1e-6)


def test_encoder_loss_is_minimal_at_target():
    torch.manual_seed(0)
    r = torch.randn(16)
    best = float(encoder_loss(r, r))
    for _ in range(100):
        assert best <= float(encoder_loss(r + torch.randn(16), r)) + 1e-7


def test_encoder_loss_accepts_vectors():
    values = FmriVector(torch.tensor([1.0, 1.0]), (0, 1))
    assert float(encoder_loss(values, values)) == pytest.approx(-0.1, abs=1e-6)
    with pytest.raises(ConsistencyError):
        encoder_loss(torch.zeros(3), torch.zeros(2))


def test_tv_two_by_two_example():
    raster = torch.tensor([[[0.0, 1.0], [0.0, 1.0]]])
    assert float(tv_regularizer(raster, weight=0.1)) == pytest.approx(0.05, abs=1e-6)


def test_constant_raster_has_no_tv():
    assert float(tv_regularizer(torch.full((3, 8, 8), 0.4))) == 0.0


def test_checkerboard_maximizes_tv():
    board = ((torch.arange(3)[:, None] + torch.arange(3)[None, :]) % 2).float()[None]
    best = float(tv_regularizer(board, weight=1.0))
    assert best == pytest.approx(1.0)
    for bits in itertools.product((0.0, 1.0), repeat=9):
        raster = torch.tensor(bits).view(1, 3, 3)
        assert float(tv_regularizer(raster, weight=1.0)) <= best + 1e-7


def test_tv_is_invariant_to_cyclic_shift_of_periodic_raster():
    stripes = (torch.arange(8) % 2).float().repeat(8, 1)[None]
    shifted = torch.roll(stripes, shifts=2, dims=-1)
    assert float(tv_regularizer(stripes)) == pytest.approx(float(tv_regularizer(shifted)))


def test_complement_has_unit_l1(make_extractor):
    extractor = make_extractor(1)
    s = (torch.arange(32 * 32) % 2).float().view(1, 1, 32, 32)
    terms = image_loss_terms(1.0 - s, s, extractor)
    assert float(terms["l1"]) == pytest.approx(1.0)


def test_image_loss_is_sum_of_terms(make_extractor):
    extractor = make_extractor(4)
    torch.manual_seed(3)
    s_hat, s = torch.rand(2, 4, 32, 32), torch.rand(2, 4, 32, 32)
    expected = (
        torch.mean(torch.abs(s_hat - s))
        + perceptual_loss(s_hat, s, extractor)
        + tv_regularizer(s_hat, 0.1)
    )
    assert float(image_loss(s_hat, s, extractor, 0.1)) == pytest.approx(float(expected), abs=1e-6)


def test_identical_images_leave_only_tv(make_extractor):
    extractor = make_extractor(3)
    s = torch.rand(1, 3, 32, 32)
    terms = image_loss_terms(s, s, extractor)
    assert float(terms["l1"]) == 0.0
    assert float(terms["total"]) == pytest.approx(float(terms["tv"]), abs=1e-6)


def test_decoder_output_is_bounded():
    torch.manual_seed(0)
    decoder = Decoder(range(6), ChannelMode.RGBD, (32, 32), width=8)
    for scale in (100.0, -100.0):
        out = decoder(torch.full((2, 6), scale))
        assert out.shape == (2, 4, 32, 32)
        assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0


def test_decoder_rejects_indivisible_resolution():
    with pytest.raises(ConsistencyError):
        Decoder(range(3), ChannelMode.DEPTH, (40, 40), stages=4)


def test_encode_and_decode_keep_types(make_extractor):
    extractor = make_extractor(1)
    encoder = Encoder.from_extractor(extractor, (4, 8, 15), pool_size=2)
    decoder = Decoder((4, 8, 15), ChannelMode.DEPTH, (32, 32), width=8)
    sample = RgbdSample(torch.rand(1, 32, 32), ChannelMode.DEPTH)
    response = encode(encoder, sample)
    assert isinstance(response, FmriVector)
    assert response.voxel_ids == (4, 8, 15)
    reconstruction = decode(decoder, response)
    assert isinstance(reconstruction, RgbdSample)
    assert reconstruction.mode is ChannelMode.DEPTH
    with pytest.raises(ConsistencyError):
        decode(decoder, FmriVector(torch.zeros(3), (1, 2, 3)))


def test_encoder_backbone_copies_extractor(make_extractor):
    extractor = make_extractor(4)
    encoder = Encoder.from_extractor(extractor, range(5), backbone_blocks=3, pool_size=2)
    x = torch.rand(2, 4, 32, 32)
    expected = extractor.features(x, blocks=3)[-1]
    actual = x
    for block in encoder.backbone:
        actual = block(actual)
    assert torch.allclose(actual, expected)
    assert not any(p.requires_grad for p in encoder.backbone.parameters())
    assert encoder(x).shape == (2, 5)


def test_encoder_loss_gradient():
    torch.manual_seed(0)
    r = torch.randn(2, 5, dtype=torch.float64)
    r_hat = torch.randn(2, 5, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda x: encoder_loss(x, r), (r_hat,))


def test_tv_gradient():
    torch.manual_seed(0)
    s_hat = torch.rand(1, 1, 6, 6, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda x: tv_regularizer(x), (s_hat,))


def test_image_loss_gradient():
    torch.manual_seed(0)
    extractor = FeatureExtractor(1, (3, 3), activation="elu", pooling="avg").double().eval()
    target = torch.rand(1, 1, 8, 8, dtype=torch.float64)
    s_hat = torch.rand(1, 1, 8, 8, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda x: image_loss(x, target, extractor), (s_hat,))
