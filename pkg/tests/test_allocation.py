"""Length planning, masking, frame assembly, and bandwidth accounting tests."""

import numpy as np
import pytest

from jeit.allocation import (
    LengthPlan,
    SymbolFrame,
    assemble_frame,
    cbr,
    complex_uses,
    compute_lengths,
    mask_decode,
    mask_encode,
    plan_from_rates,
)
from jeit.errors import PlanMismatch, ShapeMismatch

C = 16
EYE, ZERO = np.eye(C), np.zeros(C)


def test_compute_lengths_examples():
    assert compute_lengths(np.array([0.0]), 0.24, C)[0] == 0
    assert compute_lengths(np.array([10.0]), 0.24, C)[0] == 3  # ceil(2.4)
    assert compute_lengths(np.array([1e12]), 0.24, C)[0] == C


def test_compute_lengths_monotone():
    rng = np.random.default_rng(0)
    r = np.sort(rng.uniform(0, 100, 50))
    k = compute_lengths(r, 0.24, C)
    assert np.all(np.diff(k) >= 0)


def test_compute_lengths_rejects_negative():
    with pytest.raises(ShapeMismatch):
        compute_lengths(np.array([-1.0]), 0.24, C)


def test_complex_uses_pairing():
    assert complex_uses(np.array([0])) == 0
    assert complex_uses(np.array([1])) == 1  # one real padded to a pair
    assert complex_uses(np.array([2])) == 1
    assert complex_uses(np.array([7, 8])) == 8


def test_mask_encode_zero_length_contributes_nothing():
    y = np.random.default_rng(1).normal(size=(3, C))
    seg = mask_encode(y, np.zeros(3, dtype=int), EYE, ZERO)
    assert seg.size == 0


def test_mask_encode_full_vector():
    y = np.random.default_rng(2).normal(size=(2, C))
    seg = mask_encode(y, np.full(2, C), EYE, ZERO)
    assert np.allclose(seg, y.reshape(-1))


def test_mask_encode_plan_mismatch():
    y = np.zeros((3, C))
    with pytest.raises(PlanMismatch):
        mask_encode(y, np.array([1, 2]), EYE, ZERO)
    with pytest.raises(PlanMismatch):
        mask_encode(y, np.array([1, 2, C + 1]), EYE, ZERO)


def test_mask_roundtrip_restores_prefix():
    rng = np.random.default_rng(3)
    y = rng.normal(size=(6, C))
    k = np.array([0, 1, 5, 8, 15, 16])
    seg = mask_encode(y, k, EYE, ZERO)
    back = mask_decode(seg, k, C, EYE, ZERO)
    for j, kj in enumerate(k):
        assert np.allclose(back[j, :kj], y[j, :kj])
        assert np.all(back[j, kj:] == 0)


def test_masking_idempotent_projection():
    rng = np.random.default_rng(4)
    y = rng.normal(size=(5, C))
    k = np.array([2, 9, 16, 0, 7])
    once = mask_decode(mask_encode(y, k, EYE, ZERO), k, C, EYE, ZERO)
    twice = mask_decode(mask_encode(once, k, EYE, ZERO), k, C, EYE, ZERO)
    assert np.allclose(once, twice)


def test_mask_decode_payload_size_check():
    with pytest.raises(PlanMismatch):
        mask_decode(np.zeros(5), np.array([4]), C, EYE, ZERO)


def test_plan_totals_count_padding():
    plan = LengthPlan(lengths=(np.array([1, 1]), np.array([3]), np.array([])))
    assert plan.totals == (2, 2, 0)
    assert plan.total == 4


def test_cbr_zero_plan():
    plan = LengthPlan(lengths=(np.zeros(4, int), np.zeros(4, int), np.zeros(4, int)))
    assert cbr(plan, 3072) == (0.0, 0.0, 0.0, 0.0)


def test_cbr_worked_point():
    plan = LengthPlan(
        lengths=(np.full(1024, 8), np.full(2048, 8), np.full(1155, 8))
    )
    assert plan.totals == (4096, 8192, 4620)
    rho = cbr(plan, 196608)
    assert rho[0] == pytest.approx(0.0860, abs=1e-4)


def test_cbr_monotone_in_each_stream():
    base = LengthPlan(lengths=(np.full(4, 4), np.full(4, 4), np.full(4, 4)))
    bigger = LengthPlan(lengths=(np.full(4, 6), np.full(4, 4), np.full(4, 4)))
    assert cbr(bigger, 100)[0] > cbr(base, 100)[0]
    assert cbr(bigger, 100)[1] > cbr(base, 100)[1]


def test_frame_conservation_random_plans():
    rng = np.random.default_rng(5)
    for _ in range(100):
        lengths = tuple(
            rng.integers(0, C + 1, size=rng.integers(1, 30)) for _ in range(3)
        )
        plan = LengthPlan(lengths=lengths)
        segments = [rng.normal(size=2 * t) for t in plan.totals]
        frame = assemble_frame(segments, plan, 1.0)
        assert frame.complex_uses == sum(plan.totals) == plan.total
        rho = cbr(plan, 3072)
        assert rho[0] == pytest.approx(frame.complex_uses / 3072)


def test_frame_wire_roundtrip():
    rng = np.random.default_rng(6)
    lengths = (np.array([3, 16, 0]), np.array([5, 5]), np.array([8]))
    plan = LengthPlan(lengths=lengths)
    segments = [rng.normal(size=2 * t).astype(np.float32).astype(np.float64) for t in plan.totals]
    frame = assemble_frame(segments, plan, 2.25)
    blob = frame.to_bytes()
    assert blob[:4] == b"JEIF"
    parsed = SymbolFrame.from_bytes(blob, [3, 2, 1])
    assert parsed.plan == plan
    assert parsed.scale == pytest.approx(2.25)
    assert np.array_equal(parsed.payload, frame.payload)
    restored = parsed.split()
    for seg, orig in zip(restored, segments):
        assert np.array_equal(seg, orig)


def test_frame_rejects_mismatched_segments():
    plan = LengthPlan(lengths=(np.array([4]), np.array([2]), np.array([0])))
    with pytest.raises(PlanMismatch):
        assemble_frame([np.zeros(2)], plan, 1.0)
    with pytest.raises(PlanMismatch):
        assemble_frame([np.zeros(4), np.zeros(4), np.zeros(0)], plan, 1.0)


def test_plan_from_rates_caps_per_stream():
    rates = [np.array([100.0, 0.0]), np.array([10.0]), np.array([1.0])]
    plan = plan_from_rates(rates, 0.24, (16, 8, 4))
    assert plan.lengths[0].tolist() == [16, 0]
    assert plan.lengths[1].tolist() == [3]
    assert plan.lengths[2].tolist() == [1]
