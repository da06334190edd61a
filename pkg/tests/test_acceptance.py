"""Acceptance suite: one test per criterion, each printing a PASS line.

Criteria 1-7, 9, 10 are property/oracle checks and run in seconds. Criterion
8 is the desk-scale direction experiment (500 positives at ratios 10 and
100, three seeds per variant) and dominates the suite's runtime; its
artifacts live in a session tmp directory.
"""

import dataclasses
import itertools
import json
import time

import numpy as np
import pytest
import torch

from chrnet.backbone import BackboneConfig
from chrnet.data import BBox, DatasetManifest, LabelVector, Sample
from chrnet.evalkit import (
    average_precision,
    bilinear_resize,
    evaluate,
    pointing_hit,
    pointing_localize,
    write_report,
)
from chrnet.head import HeadConfig, LevelClassifier
from chrnet.loss import GateMask, chr_loss, compute_gates, plain_bce_loss
from chrnet.model import state_arrays
from chrnet.synth import (
    PlacedItem,
    Scene,
    SubsetSpec,
    build_subsets,
    compose,
)
from chrnet.trainer import TrainConfig, read_checkpoint, train
from conftest import make_pool

EPS_GRID = (0.1, 0.3, 0.5)


def _report(criterion, text):
    print(f"ACCEPTANCE C{criterion:02d} PASS: {text}")


# --------------------------------------------------------------------------
# 1. gate-mask correctness, exhaustive
# --------------------------------------------------------------------------


def test_c01_gate_masks_exhaustive():
    t0 = time.monotonic()
    grid = np.arange(11) / 10.0
    triples = np.array(list(itertools.product(grid, repeat=3)))  # [1331, 3]
    n = len(triples)
    checked = 0
    for eps in EPS_GRID:
        for bits in itertools.product((0, 1), repeat=5):
            y = torch.tensor(bits, dtype=torch.float64).expand(n, 5)
            preds = [
                torch.tensor(triples[:, level]).unsqueeze(1).expand(n, 5).clone()
                for level in range(3)
            ]
            gates = compute_gates(y, preds, eps)
            w = [g.numpy() for g in gates.levels]
            pos = np.asarray(bits, dtype=bool)
            for level in range(3):
                assert (w[level][:, pos] == 1).all(), "positives must always pass"
            assert (w[0] <= w[1]).all() and (w[1] <= w[2]).all(), "cascade monotone"
            # independent scalar recomputation in numpy
            j = [np.where(pos, 1.0, (triples[:, level] > eps)[:, None]) for level in range(3)]
            exp3 = j[2]
            exp2 = j[1] * exp3
            exp1 = j[0] * exp2
            assert np.array_equal(w[2], exp3)
            assert np.array_equal(w[1], exp2)
            assert np.array_equal(w[0], exp1)
            checked += n * 5
    elapsed = time.monotonic() - t0
    assert elapsed < 60.0, f"exhaustive gate check took {elapsed:.1f}s"
    _report(1, f"{checked} gate instances, positives pass + monotone cascade ({elapsed:.1f}s)")


# --------------------------------------------------------------------------
# 2. loss oracle
# --------------------------------------------------------------------------


def test_c02_loss_closed_forms():
    y1 = torch.tensor([[1.0]])
    g1 = compute_gates(y1, [torch.tensor([[0.5]])], 0.3)
    v1 = float(chr_loss(y1, [torch.tensor([[0.5]])], g1))
    assert v1 == pytest.approx(0.6931471805599453, abs=1e-6)

    y2 = torch.tensor([[0.0]], dtype=torch.float64)
    p2 = [torch.tensor([[0.1]], dtype=torch.float64), torch.tensor([[0.4]], dtype=torch.float64)]
    g2 = compute_gates(y2, p2, 0.3)
    v2 = float(chr_loss(y2, p2, g2))
    assert v2 == pytest.approx(0.25541281188299536, abs=1e-6)

    y3 = torch.tensor([[1.0, 0.0, 1.0, 0.0, 0.0]])
    p3 = [y3.clamp(1e-9, 1 - 1e-9) for _ in range(3)]
    v3 = float(chr_loss(y3, p3, compute_gates(y3, p3, 0.3)))
    assert v3 <= 5 * -np.log(1 - 1e-7) + 1e-9

    torch.manual_seed(0)
    y = torch.ones(6, 5)
    preds = [torch.rand(6, 5) for _ in range(3)]
    gates = compute_gates(y, preds, 0.3)
    assert float(chr_loss(y, preds, gates)) == float(plain_bce_loss(y, preds))
    _report(2, "worked closed forms within 1e-6; all-positive equals plain exactly")


# --------------------------------------------------------------------------
# 3. gradient check
# --------------------------------------------------------------------------


def test_c03_gradient_check_50_instances():
    t0 = time.monotonic()
    rng = np.random.default_rng(99)
    step = 1e-3
    max_err = 0.0
    for _ in range(50):
        b = int(rng.integers(1, 4))
        c = int(rng.integers(1, 6))
        levels = int(rng.integers(1, 4))
        y = torch.tensor(rng.integers(0, 2, (b, c)), dtype=torch.float32)
        logits = [
            torch.tensor(rng.normal(0.0, 1.5, (b, c)), dtype=torch.float32, requires_grad=True)
            for _ in range(levels)
        ]
        preds = [torch.sigmoid(z) for z in logits]
        gates = compute_gates(y, preds, 0.3)  # frozen for both evaluations
        loss = chr_loss(y, preds, gates)
        loss.backward()
        y64 = y.double()
        gates64 = GateMask([w.double() for w in gates.levels], gates.epsilon)
        base = [z.detach().double() for z in logits]
        for li, z in enumerate(logits):
            analytic = z.grad.numpy()
            fd = np.zeros_like(analytic, dtype=np.float64)
            for i in range(b):
                for j in range(c):
                    plus = [t.clone() for t in base]
                    minus = [t.clone() for t in base]
                    plus[li][i, j] += step
                    minus[li][i, j] -= step
                    f_plus = float(chr_loss(y64, [torch.sigmoid(t) for t in plus], gates64))
                    f_minus = float(chr_loss(y64, [torch.sigmoid(t) for t in minus], gates64))
                    fd[i, j] = (f_plus - f_minus) / (2 * step)
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-2)
            max_err = max(max_err, float(np.max(np.abs(analytic - fd) / denom)))
    elapsed = time.monotonic() - t0
    assert max_err < 1e-3, f"max relative gradient error {max_err}"
    assert elapsed < 60.0, f"gradient check took {elapsed:.1f}s"
    _report(3, f"50 instances, max relative error {max_err:.2e} ({elapsed:.1f}s)")


# --------------------------------------------------------------------------
# 4. AP oracle equivalence
# --------------------------------------------------------------------------


def _reference_ap(scores, labels, ids):
    n = len(scores)
    order = sorted(range(n), key=lambda i: (-scores[i], ids[i]))
    num_pos = sum(labels)
    precisions, recalls = [], []
    for k in range(1, n + 1):
        tp = sum(labels[order[i]] for i in range(k))
        precisions.append(tp / k)
        recalls.append(tp / num_pos)
    ap, prev = 0.0, 0.0
    for k in range(n):
        if labels[order[k]] == 1:
            r = recalls[k]
            ap += (r - prev) * max(p for p, rr in zip(precisions, recalls) if rr >= r)
            prev = r
    return ap


def test_c04_ap_equals_bruteforce_reference():
    assert average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(
        0.8333333333333333, abs=1e-9
    )
    rng = np.random.default_rng(4)
    for _ in range(1000):
        n = int(rng.integers(1, 17))
        labels = rng.integers(0, 2, n)
        if labels.sum() == 0:
            labels[int(rng.integers(0, n))] = 1
        scores = np.round(rng.uniform(0, 1, n), 2)
        ids = [f"s{i:02d}" for i in range(n)]
        lib = average_precision(scores, labels, ids)
        ref = _reference_ap(list(scores), list(labels), ids)
        assert abs(lib - ref) < 1e-9
    _report(4, "1000 random instances equal the O(N^2) reference within 1e-9")


# --------------------------------------------------------------------------
# 5. CAM/GAP consistency
# --------------------------------------------------------------------------


def test_c05_cam_gap_consistency_100_trials():
    torch.manual_seed(55)
    worst = 0.0
    for _ in range(100):
        channels = int(torch.randint(4, 96, ()))
        size = int(torch.randint(2, 13, ()))
        batch = int(torch.randint(1, 4, ()))
        clf = LevelClassifier(channels, 5)
        feat = torch.randn(batch, channels, size, size)
        logits = clf.logits(feat)
        recovered = clf.cams(feat).mean(dim=(2, 3)) + clf.fc.bias
        worst = max(worst, float((recovered - logits).abs().max()))
    assert worst < 1e-5, f"max |mean(CAM)+bias - logit| = {worst}"
    _report(5, f"100 trials, max deviation {worst:.2e} < 1e-5")


# --------------------------------------------------------------------------
# 6. composition algebra
# --------------------------------------------------------------------------


def test_c06_composition_algebra_200_scenes():
    rng = np.random.default_rng(6)
    for trial in range(200):
        k = int(rng.integers(1, 7))
        items = [
            PlacedItem(
                int(rng.integers(0, 11)),
                (rng.uniform(0, 1, (12, 12, 3)) * (rng.uniform(0, 1, (12, 12, 1)) > 0.4)).astype(
                    np.float32
                ),
                None,
            )
            for _ in range(k)
        ]
        bg = rng.uniform(0, 0.3, (12, 12, 3)).astype(np.float32)
        base = compose(Scene(bg, items, "additive"))
        perm = rng.permutation(k)
        shuffled = compose(Scene(bg, [items[i] for i in perm], "additive"))
        assert np.array_equal(base, shuffled), f"trial {trial}: permutation changed output"
        single = compose(Scene(np.zeros_like(bg), [items[0]], "additive"))
        assert np.array_equal(single, items[0].image), f"trial {trial}: identity broken"
    _report(6, "200 scenes: permutation invariance and single-item identity exact")


# --------------------------------------------------------------------------
# 7. subset builder exactness
# --------------------------------------------------------------------------


def test_c07_subset_builder_exact_counts():
    cases = [(50, 10), (50, 100), (20, 1000)]
    pool = make_pool(60, 20_000)
    for positives, ratio in cases:
        train_m, test_m = build_subsets(
            pool, SubsetSpec(ratio=ratio, positive_count=positives, seed=positives + ratio)
        )
        n_pos = len(train_m.positives()) + len(test_m.positives())
        n_neg = len(train_m.negatives()) + len(test_m.negatives())
        assert n_pos == positives
        assert n_neg == ratio * positives, f"|neg| must equal {ratio}x{positives}"
        assert len(train_m.positives()) == round(0.8 * positives)
        assert len(test_m.positives()) == positives - round(0.8 * positives)
        assert len(train_m.negatives()) == round(0.8 * ratio * positives)
        assert len(test_m.negatives()) == ratio * positives - round(0.8 * ratio * positives)
        train_ids = {e.sample_id for e in train_m.entries}
        test_ids = {e.sample_id for e in test_m.entries}
        assert not train_ids & test_ids and len(train_ids | test_ids) == n_pos + n_neg
    _report(7, "subsets (50,10), (50,100), (20,1000): exact ratio and 80/20 split")


# --------------------------------------------------------------------------
# 9. determinism: resume bit-exact, evaluate byte-identical
# --------------------------------------------------------------------------


def test_c09_determinism_resume_and_evaluate(tiny_dataset, small_train_config, tmp_path):
    config = dataclasses.replace(small_train_config, epochs=4, batch_size=8)
    full = train(config, tiny_dataset, None, out_dir=tmp_path / "full")
    train(config, tiny_dataset, None, out_dir=tmp_path / "part", stop_after_epoch=2)
    resumed = train(config, tiny_dataset, None, out_dir=tmp_path / "part", resume=True)
    a, _ = read_checkpoint(full)
    b, _ = read_checkpoint(resumed)
    assert sorted(a) == sorted(b)
    for key in a:
        assert np.array_equal(a[key], b[key]), f"array {key} differs after resume"

    report_1 = evaluate(full, tiny_dataset, batch_size=8)
    report_2 = evaluate(full, tiny_dataset, batch_size=8)
    bytes_1 = write_report(report_1, tmp_path / "r1.json").read_bytes()
    bytes_2 = write_report(report_2, tmp_path / "r2.json").read_bytes()
    assert bytes_1 == bytes_2
    _report(9, "resume equals uninterrupted run bit-exactly; reports byte-identical")


# --------------------------------------------------------------------------
# 10. pointing localization fixtures
# --------------------------------------------------------------------------


def _exhaustive_peak(cams, image_hw):
    best = None
    for level, cam in enumerate(cams):
        up = bilinear_resize(np.asarray(cam), image_hw)
        for r in range(image_hw[0]):
            for c in range(image_hw[1]):
                if best is None or up[r, c] > best[0]:
                    best = (up[r, c], level, r, c)
    return best[1:]


def test_c10_pointing_fixtures():
    hw = (24, 24)
    box = BBox(6, 6, 14, 14, 1)
    img = np.zeros((24, 24, 3), np.float32)
    sample = Sample(img, LabelVector((0, 1, 0, 0, 0), 5), "p", (box,))

    inside = np.zeros((12, 12))
    inside[5, 5] = 2.0  # upscales into the box interior
    d1 = pointing_localize(sample, [inside, np.zeros((6, 6))], 1)
    assert d1.hit
    assert (d1.level, d1.row, d1.col) == _exhaustive_peak([inside, np.zeros((6, 6))], hw)

    outside = np.zeros((12, 12))
    outside[0, 11] = 2.0
    d2 = pointing_localize(sample, [outside, np.zeros((6, 6))], 1)
    assert not d2.hit
    assert (d2.level, d2.row, d2.col) == _exhaustive_peak([outside, np.zeros((6, 6))], hw)

    constant = [np.ones((12, 12)), np.ones((6, 6))]
    d3 = pointing_hit(constant, [box], hw)
    assert (d3.level, d3.row, d3.col) == (0, 0, 0) == _exhaustive_peak(constant, hw)
    assert not d3.hit  # (0, 0) outside the box
    d4 = pointing_hit(constant, [BBox(0, 0, 4, 4, 1)], hw)
    assert d4.hit  # (0, 0) inside a corner box
    _report(10, "hit/miss/tie-break fixtures agree with the exhaustive argmax scan")
