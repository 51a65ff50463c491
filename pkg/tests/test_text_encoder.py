import pytest
import torch

from scribegan.text_encoder import TextEncoder


@pytest.fixture(scope="module")
def encoder():
    torch.manual_seed(0)
    return TextEncoder(vocab_size=10)


def test_shapes(encoder):
    emb = encoder.embed([0, 1, 2, 3, 4, 5, 6])
    assert emb.steps.shape == (7, 256)
    assert emb.cond.shape == (256,)


def test_single_character(encoder):
    emb = encoder.embed([3])
    assert emb.steps.shape == (1, 256)
    # forward and backward halves both depend on the one character
    other = encoder.embed([4])
    assert not torch.allclose(emb.steps[0, :128], other.steps[0, :128])
    assert not torch.allclose(emb.steps[0, 128:], other.steps[0, 128:])


def test_reversal_changes_cond(encoder):
    fwd = encoder.embed([1, 2, 3, 4, 5])
    rev = encoder.embed([5, 4, 3, 2, 1])
    assert not torch.allclose(fwd.cond, rev.cond)


def test_deterministic(encoder):
    a = encoder.embed([1, 2, 3])
    b = encoder.embed([1, 2, 3])
    assert torch.equal(a.steps, b.steps)
    assert torch.equal(a.cond, b.cond)


def test_empty_sequence_errors(encoder):
    with pytest.raises(ValueError):
        encoder.embed([])


def test_out_of_range_label_errors(encoder):
    with pytest.raises(ValueError):
        encoder.embed([11])
    with pytest.raises(ValueError):
        encoder.embed([-1])


def test_batched_matches_unbatched(encoder):
    seqs = [[1, 2, 3, 4, 5, 6], [7, 8], [0, 9, 3, 2]]
    max_len = max(len(s) for s in seqs)
    padded = torch.zeros(len(seqs), max_len, dtype=torch.long)
    for i, s in enumerate(seqs):
        padded[i, : len(s)] = torch.tensor(s)
    lengths = torch.tensor([len(s) for s in seqs])
    steps, cond = encoder(padded, lengths)
    assert steps.shape == (3, max_len, 256)
    assert cond.shape == (3, 256)
    for i, s in enumerate(seqs):
        single = encoder.embed(s)
        assert torch.allclose(steps[i, : len(s)], single.steps, atol=1e-6)
        assert torch.allclose(cond[i], single.cond, atol=1e-6)


def test_cond_is_function_of_steps(encoder):
    # cond = [last forward slice, first backward slice] of the step outputs
    emb = encoder.embed([2, 4, 6])
    expected = torch.cat([emb.steps[-1, :128], emb.steps[0, 128:]])
    assert torch.allclose(emb.cond, expected)


def test_gradient_matches_finite_differences():
    torch.manual_seed(3)
    encoder = TextEncoder(vocab_size=5).double()
    labels = torch.tensor([[0, 2, 4]])
    probe = torch.randn(256, dtype=torch.float64)

    def scalar():
        _, cond = encoder(labels)
        return cond[0] @ probe

    loss = scalar()
    loss.backward()
    grad = encoder.embedding.weight.grad.clone()

    def scalar_value():
        with torch.no_grad():
            return float(scalar())

    h = 1e-6
    weight = encoder.embedding.weight
    checked = 0
    for idx in [(0, 0), (0, 17), (2, 100), (4, 5), (4, 127)]:
        with torch.no_grad():
            weight[idx] += h
        plus = scalar_value()
        with torch.no_grad():
            weight[idx] -= 2 * h
        minus = scalar_value()
        with torch.no_grad():
            weight[idx] += h
        fd = (plus - minus) / (2 * h)
        analytic = float(grad[idx])
        denom = max(abs(fd), abs(analytic), 1e-8)
        assert abs(fd - analytic) / denom <= 1e-4
        checked += 1
    assert checked == 5
