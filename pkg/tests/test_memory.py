import math

import numpy as np
import pytest
import torch

from crosscity.memory import MemoryBank, PredictionHead, prediction_loss

from conftest import finite_difference_grad, relative_error


def _bank(d=4, m=3, mp=3, seed=0):
    torch.manual_seed(seed)
    return MemoryBank(d, m, mp).double()


def test_bank_validation():
    with pytest.raises(ValueError):
        MemoryBank(4, common_slots=0)
    with pytest.raises(ValueError):
        MemoryBank(4, private_slots=-1)
    bank = _bank()
    with pytest.raises(ValueError):
        bank.retrieve(torch.zeros(2, 4, dtype=torch.float64), "neither")


def test_slot_counts_per_role():
    bank = _bank(m=3, mp=3)
    assert bank.n_slots("source") == 3
    assert bank.n_slots("target") == 6
    no_private = MemoryBank(4, 3, 0).double()
    assert no_private.n_slots("target") == 3
    assert no_private.private is None


def test_source_never_reads_private():
    bank = _bank()
    z = torch.rand(5, 4, dtype=torch.float64)
    bank.retrieve(z, "source")
    bank.retrieve(z, "source")
    assert bank.common_reads == 2
    assert bank.private_reads == 0
    bank.retrieve(z, "target")
    assert bank.private_reads == 1


def test_identical_slots_collapse_attention():
    bank = _bank(seed=1)
    v = torch.rand(1, 4, dtype=torch.float64)
    with torch.no_grad():
        bank.common.copy_(v.expand(3, 4))
        bank.private.copy_(v.expand(3, 4))
    z = torch.rand(6, 4, dtype=torch.float64)
    for role in ("source", "target"):
        out, q = bank.retrieve(z, role)
        expected = bank.value_proj(v).expand(6, 4)
        np.testing.assert_allclose(out.detach().numpy(),
                                   expected.detach().numpy(), atol=1e-12)
        np.testing.assert_allclose(q.detach().numpy(),
                                   bank.query_proj(z).detach().numpy(), atol=0)


def test_hand_softmax_scores():
    # scores (ln 3, 0) -> attention (0.75, 0.25)
    torch.manual_seed(2)
    bank = MemoryBank(1, 2, 0).double()
    with torch.no_grad():
        bank.common.copy_(torch.tensor([[math.log(3.0)], [0.0]], dtype=torch.float64))
        bank.query_proj.weight.copy_(torch.ones(1, 1, dtype=torch.float64))
        bank.key_proj.weight.copy_(torch.ones(1, 1, dtype=torch.float64))
        bank.value_proj.weight.copy_(torch.ones(1, 1, dtype=torch.float64))
    z = torch.ones(1, 1, dtype=torch.float64)
    alpha = bank.attention_weights(z, "source")
    np.testing.assert_allclose(alpha.detach().numpy(), [[0.75, 0.25]], atol=1e-12)
    out, _ = bank.retrieve(z, "source")
    assert out.item() == pytest.approx(0.75 * math.log(3.0), abs=1e-12)


def test_attention_rows_sum_to_one_and_convex_hull():
    bank = _bank(seed=3)
    z = torch.randn(8, 4, dtype=torch.float64)
    for role in ("source", "target"):
        alpha = bank.attention_weights(z, role)
        np.testing.assert_allclose(alpha.sum(dim=-1).detach().numpy(),
                                   np.ones(8), atol=1e-6)
        out, _ = bank.retrieve(z, role)
        slots = bank.common if role == "source" else torch.cat(
            [bank.common, bank.private])
        v = bank.value_proj(slots)
        lo = v.min(dim=0).values - 1e-12
        hi = v.max(dim=0).values + 1e-12
        assert torch.all(out >= lo) and torch.all(out <= hi)


def test_retrieve_gradient_matches_finite_differences():
    bank = _bank(seed=4)
    z = torch.randn(4, 4, dtype=torch.float64, requires_grad=True)

    def scalar():
        out, q = bank.retrieve(z, "target")
        return (out ** 2).sum() + (q ** 2).sum()

    scalar().backward()
    fd = finite_difference_grad(scalar, z.data)
    assert relative_error(z.grad, fd) < 1e-4
    bank.zero_grad()

    def scalar_common():
        out, _ = bank.retrieve(z, "target")
        return (out ** 2).sum()

    scalar_common().backward()
    fd_c = finite_difference_grad(scalar_common, bank.common.data)
    assert relative_error(bank.common.grad, fd_c) < 1e-4


def test_prediction_head_shapes_and_zero_case():
    torch.manual_seed(5)
    head = PredictionHead(4, 2).double()
    o = torch.rand(7, 4, dtype=torch.float64)
    assert head(o).shape == (7, 2)
    with torch.no_grad():
        for p in head.parameters():
            p.zero_()
    assert torch.all(head(o) == 0)


def test_prediction_head_is_per_node():
    torch.manual_seed(6)
    head = PredictionHead(4, 2).double()
    o = torch.rand(5, 4, dtype=torch.float64)
    perm = torch.tensor([2, 0, 4, 1, 3])
    assert torch.equal(head(o[perm]), head(o)[perm])


def test_prediction_loss_values():
    y = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    y_hat = torch.zeros(1, 2, dtype=torch.float64)
    assert prediction_loss(y_hat, y).item() == pytest.approx(0.5, abs=1e-15)
    assert prediction_loss(y, y).item() == 0.0
    with pytest.raises(ValueError):
        prediction_loss(torch.zeros(2, 2), torch.zeros(3, 2))


def test_prediction_loss_permutation_invariant():
    torch.manual_seed(7)
    y = torch.rand(6, 2, dtype=torch.float64)
    y_hat = torch.rand(6, 2, dtype=torch.float64)
    perm = torch.randperm(6)
    a = prediction_loss(y_hat, y).item()
    b = prediction_loss(y_hat[perm], y[perm]).item()
    assert a == pytest.approx(b, abs=1e-15)
