import itertools
import math

import pytest
import torch

from scribegan.codec import CharCodec
from scribegan.recognizer import (
    GatedConv2d,
    Recognizer,
    collapse_ctc_labels,
    ctc_loss,
    ctc_loss_batch,
    ctc_required_frames,
    greedy_decode,
)


def test_gated_conv_zero_gate_halves_tanh():
    torch.manual_seed(0)
    gate = GatedConv2d(1, 4, stride=(1, 1))
    with torch.no_grad():
        gate.conv_g.weight.zero_()
        gate.conv_g.bias.zero_()
    x = torch.randn(2, 1, 8, 16)
    out = gate(x)
    expected = 0.5 * torch.tanh(gate.conv_a(x))
    assert torch.allclose(out, expected)


def test_gated_conv_bounded():
    torch.manual_seed(0)
    gate = GatedConv2d(1, 4, stride=(1, 1))
    out = gate(torch.randn(2, 1, 8, 16) * 10)
    assert out.min() > -1.0 and out.max() < 1.0


def test_gated_conv_shape_preserved_at_stride_one():
    gate = GatedConv2d(3, 7, stride=(1, 1))
    assert gate(torch.randn(2, 3, 8, 16)).shape == (2, 7, 8, 16)


@pytest.fixture(scope="module")
def recognizer():
    torch.manual_seed(0)
    return Recognizer(vocab_size=10)


def test_recognize_shapes(recognizer):
    recognizer.eval()
    logits = recognizer(torch.rand(2, 1, 128, 512) * 2 - 1)
    assert logits.shape == (2, 128, 11)
    assert recognizer.num_frames == 128


def test_recognize_deterministic(recognizer):
    recognizer.eval()
    img = torch.rand(1, 1, 128, 512)
    assert torch.equal(recognizer(img), recognizer(img))


def test_encoder_feature_shape(recognizer):
    feats = recognizer.encode(torch.rand(2, 1, 128, 512))
    assert feats.shape == (2, 128, 4, 128)


# ---------------------------------------------------------------- CTC oracle


def brute_force_ctc(logits: torch.Tensor, labels, blank: int) -> float:
    t_frames, n_classes = logits.shape
    log_probs = torch.log_softmax(logits, dim=-1)
    total = 0.0
    for path in itertools.product(range(n_classes), repeat=t_frames):
        if collapse_ctc_labels(path, blank) == list(labels):
            total += math.exp(sum(log_probs[t, c].item() for t, c in enumerate(path)))
    return -math.log(total)


def test_ctc_uniform_single_frame():
    # T=1, V=2, uniform logits, one label: only one alignment, softmax 1/3
    loss = ctc_loss(torch.zeros(1, 3, dtype=torch.float64), [0], blank=2)
    assert abs(float(loss) - math.log(3)) < 1e-12


def test_ctc_confident_logits_drive_loss_to_zero():
    logits = torch.full((2, 3), -1000.0, dtype=torch.float64)
    logits[0, 0] = 1000.0  # 'a'
    logits[1, 2] = 1000.0  # blank
    loss = ctc_loss(logits, [0], blank=2)
    assert float(loss) < 1e-9


def test_ctc_matches_enumeration_exhaustively():
    torch.manual_seed(0)
    worst = 0.0
    for t_frames in range(1, 5):
        for vocab in range(1, 4):
            blank = vocab
            labels_pool = [
                list(p)
                for length in (1, 2)
                for p in itertools.product(range(vocab), repeat=length)
            ]
            for labels in labels_pool:
                if ctc_required_frames(labels) > t_frames:
                    continue
                for _ in range(3):
                    logits = torch.randn(t_frames, vocab + 1, dtype=torch.float64)
                    mine = float(ctc_loss(logits, labels, blank))
                    ref = brute_force_ctc(logits, labels, blank)
                    worst = max(worst, abs(mine - ref))
    assert worst < 1e-10


def test_ctc_gradient_matches_finite_differences():
    torch.manual_seed(1)
    labels = [0, 2]
    for _ in range(3):
        logits = torch.randn(4, 4, dtype=torch.float64, requires_grad=True)
        loss = ctc_loss(logits, labels, blank=3)
        loss.backward()
        grad = logits.grad
        h = 1e-6
        for i in range(4):
            for j in range(4):
                with torch.no_grad():
                    plus = logits.clone()
                    plus[i, j] += h
                    minus = logits.clone()
                    minus[i, j] -= h
                fd = (
                    float(ctc_loss(plus, labels, blank=3))
                    - float(ctc_loss(minus, labels, blank=3))
                ) / (2 * h)
                analytic = float(grad[i, j])
                denom = max(abs(fd), abs(analytic), 1e-8)
                assert abs(fd - analytic) / denom <= 1e-5


def test_ctc_label_too_long_is_error():
    with pytest.raises(ValueError, match="frames"):
        ctc_loss(torch.randn(2, 4), [0, 1, 2], blank=3)
    # repeats need a separating blank
    with pytest.raises(ValueError, match="frames"):
        ctc_loss(torch.randn(2, 4), [1, 1], blank=3)
    # exactly enough frames is fine
    ctc_loss(torch.randn(3, 4), [1, 1], blank=3)


def test_ctc_blank_in_labels_rejected():
    with pytest.raises(ValueError):
        ctc_loss(torch.randn(4, 4), [0, 3], blank=3)


def test_ctc_batch_matches_singles():
    torch.manual_seed(2)
    logits = torch.randn(3, 6, 5, dtype=torch.float64)
    label_sets = [[0, 1], [3], [2, 2]]
    batched = ctc_loss_batch(logits, label_sets, blank=4)
    for i in range(3):
        single = ctc_loss(logits[i], label_sets[i], blank=4)
        assert abs(float(batched[i]) - float(single)) < 1e-12


def test_ctc_appending_confident_blank_barely_moves_loss():
    torch.manual_seed(3)
    logits = torch.randn(6, 4, dtype=torch.float64) * 4
    labels = [0, 1]
    base = float(ctc_loss(logits, labels, blank=3))
    blank_frame = torch.full((1, 4), -40.0, dtype=torch.float64)
    blank_frame[0, 3] = 40.0
    extended = torch.cat([logits, blank_frame])
    assert abs(float(ctc_loss(extended, labels, blank=3)) - base) <= 1e-3


def test_required_frames():
    assert ctc_required_frames([]) == 0
    assert ctc_required_frames([1, 2, 3]) == 3
    assert ctc_required_frames([1, 1]) == 3
    assert ctc_required_frames([1, 1, 1]) == 5


# ------------------------------------------------------------ greedy decode


@pytest.fixture(scope="module")
def abc_codec():
    return CharCodec(["a", "b", "c"])


def one_hot_frames(indices, n_classes):
    logits = torch.full((len(indices), n_classes), -10.0)
    for t, idx in enumerate(indices):
        logits[t, idx] = 10.0
    return logits


def test_greedy_collapse_repeats(abc_codec):
    # frames a a blank b -> "ab"
    logits = one_hot_frames([0, 0, 3, 1], 4)
    assert greedy_decode(logits, abc_codec) == "ab"


def test_greedy_all_blank(abc_codec):
    logits = one_hot_frames([3, 3, 3], 4)
    assert greedy_decode(logits, abc_codec) == ""


def test_greedy_blank_separates_repeats(abc_codec):
    logits = one_hot_frames([0, 3, 0], 4)
    assert greedy_decode(logits, abc_codec) == "aa"


def test_greedy_batched(abc_codec):
    logits = torch.stack([one_hot_frames([0, 1, 2], 4), one_hot_frames([3, 2, 3], 4)])
    assert greedy_decode(logits, abc_codec) == ["abc", "c"]
