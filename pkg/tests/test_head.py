import math

import pytest
import torch

from chrnet.errors import ConfigError
from chrnet.head import (
    HeadConfig,
    LevelClassifier,
    RefinementHead,
    VARIANT_WIRING,
)


def nonneg_pyramid(channels, sizes, seed=0, batch=2):
    torch.manual_seed(seed)
    return [torch.rand(batch, c, s, s) for c, s in zip(channels, sizes)]


def identity_head(channels):
    """Refinement head whose blocks project concat -> [I | 0] exactly."""
    head = RefinementHead(channels, HeadConfig(width=channels[0], norm="none"), refine=True)
    with torch.no_grad():
        for l, block in enumerate(head.blocks):
            w = torch.zeros_like(block.conv.weight)
            for c in range(channels[l]):
                w[c, c, 0, 0] = 1.0
            block.conv.weight.copy_(w)
            block.conv.bias.zero_()
    return head


def test_refine_identity_projection_reproduces_input():
    channels = (16, 16, 16)
    pyramid = nonneg_pyramid(channels, (8, 4, 2))
    head = identity_head(channels)
    head.eval()
    with torch.no_grad():
        refined = head.refine(pyramid)
    for r, x in zip(refined, pyramid):
        assert torch.equal(r, x)


def test_refine_single_level_is_identity_with_no_blocks():
    head = RefinementHead([32], HeadConfig(width=8), refine=True)
    assert len(head.blocks) == 0
    pyramid = nonneg_pyramid((32,), (4,))
    refined = head.refine(pyramid)
    assert torch.equal(refined[0], pyramid[0])


def test_refine_applies_exactly_l_minus_one_blocks_top_down():
    head = RefinementHead((8, 8, 8), HeadConfig(width=8), refine=True)
    assert len(head.blocks) == 2
    calls = []
    for idx, block in enumerate(head.blocks):
        block.register_forward_hook(lambda m, i, o, idx=idx: calls.append(idx))
    head.eval()
    with torch.no_grad():
        head.refine(nonneg_pyramid((8, 8, 8), (8, 4, 2)))
    # level 2 (index 1) refined before level 1 (index 0)
    assert calls == [1, 0]


def test_refine_keeps_top_level_untouched():
    head = RefinementHead((8, 8), HeadConfig(width=4), refine=True)
    head.eval()
    pyramid = nonneg_pyramid((8, 8), (4, 2))
    with torch.no_grad():
        refined = head.refine(pyramid)
    assert refined[-1] is pyramid[-1]
    assert refined[0].shape == (2, 4, 4, 4)


def test_refine_shape_mismatch_names_level():
    head = RefinementHead((8, 8, 8), HeadConfig(width=8), refine=True)
    bad = [torch.rand(1, 8, 8, 8), torch.rand(1, 8, 5, 5), torch.rand(1, 8, 2, 2)]
    with pytest.raises(ConfigError, match="level"):
        head.refine(bad)
    with pytest.raises(ConfigError, match="levels"):
        head.refine(bad[:2])


def test_refine_is_pure_in_eval_mode():
    torch.manual_seed(3)
    head = RefinementHead((8, 8, 8), HeadConfig(width=16), refine=True)
    head.eval()
    pyramid = nonneg_pyramid((8, 8, 8), (8, 4, 2), seed=4)
    with torch.no_grad():
        a = head.refine(pyramid)
        b = head.refine(pyramid)
    for ta, tb in zip(a, b):
        assert torch.equal(ta, tb)


def _fixed_prob_head(probs, channels=8):
    """Classifiers with zero weights and bias = logit(p), one level per prob."""
    head = RefinementHead([channels] * len(probs), HeadConfig(width=channels), refine=False)
    with torch.no_grad():
        for clf, p in zip(head.classifiers, probs):
            clf.fc.weight.zero_()
            clf.fc.bias.fill_(math.log(p / (1 - p)))
    return head


def test_classify_fuses_by_arithmetic_mean():
    head = _fixed_prob_head([0.2, 0.4, 0.9])
    out = head(nonneg_pyramid((8, 8, 8), (8, 4, 2)))
    for p, expected in zip(out.per_level, (0.2, 0.4, 0.9)):
        assert torch.allclose(p, torch.full_like(p, expected), atol=1e-6)
    assert torch.allclose(out.fused, torch.full_like(out.fused, 0.5), atol=1e-6)


def test_classify_equal_levels_fuse_to_same_value():
    head = _fixed_prob_head([0.7, 0.7])
    out = head(nonneg_pyramid((8, 8), (4, 2)))
    assert torch.allclose(out.fused, torch.full_like(out.fused, 0.7), atol=1e-6)


def test_zero_classifier_scores_half():
    head = RefinementHead((8,), HeadConfig(width=8), refine=False)
    with torch.no_grad():
        head.classifiers[0].fc.weight.zero_()
        head.classifiers[0].fc.bias.zero_()
    out = head(nonneg_pyramid((8,), (4,)))
    assert torch.equal(out.per_level[0], torch.full_like(out.per_level[0], 0.5))


def test_fused_score_between_level_extremes():
    torch.manual_seed(7)
    head = RefinementHead((8, 8, 8), HeadConfig(width=16), refine=True)
    head.eval()
    out = head(nonneg_pyramid((8, 8, 8), (8, 4, 2), seed=8))
    stacked = torch.stack(out.per_level)
    assert bool((out.fused >= stacked.min(dim=0).values - 1e-7).all())
    assert bool((out.fused <= stacked.max(dim=0).values + 1e-7).all())
    assert bool((out.fused > 0).all() and (out.fused < 1).all())


def test_cam_basis_vector_selects_channel():
    clf = LevelClassifier(4, 5)
    with torch.no_grad():
        clf.fc.weight.zero_()
        clf.fc.weight[2, 3] = 1.0  # class 2 reads channel 3
    feat = torch.rand(2, 4, 6, 6)
    cam = clf.cam(feat, 2)
    assert torch.equal(cam, feat[:, 3])


def test_cam_zero_features_give_zero_heatmap():
    clf = LevelClassifier(4, 5)
    cam = clf.cam(torch.zeros(1, 4, 3, 3), 0)
    assert torch.equal(cam, torch.zeros(1, 3, 3))


def test_cam_class_index_out_of_range():
    clf = LevelClassifier(4, 5)
    with pytest.raises(ConfigError):
        clf.cam(torch.rand(1, 4, 3, 3), 5)


def test_cam_constant_feature_recovers_logit_identity():
    torch.manual_seed(9)
    clf = LevelClassifier(6, 5)
    feat = torch.full((1, 6, 4, 4), 0.37)
    for c in range(5):
        cam = clf.cam(feat, c)
        logit = clf.logits(feat)[0, c]
        assert torch.allclose(cam.mean() + clf.fc.bias[c], logit, atol=1e-6)
        assert float(cam.detach().std()) == 0.0  # constant feature -> constant heatmap


def test_gap_cam_consistency_over_random_trials():
    torch.manual_seed(10)
    for trial in range(20):
        channels = int(torch.randint(4, 64, ()))
        size = int(torch.randint(2, 13, ()))
        clf = LevelClassifier(channels, 5)
        feat = torch.randn(3, channels, size, size)
        logits = clf.logits(feat)
        cams = clf.cams(feat)
        recovered = cams.mean(dim=(2, 3)) + clf.fc.bias
        assert torch.allclose(recovered, logits, atol=1e-5)


def test_variant_wiring_matches_ablation_table():
    assert VARIANT_WIRING["baseline"] == (False, False, "plain")
    assert VARIANT_WIRING["H"] == (True, False, "plain")
    assert VARIANT_WIRING["CH"] == (True, False, "balanced")
    assert VARIANT_WIRING["HR"] == (True, True, "plain")
    assert VARIANT_WIRING["CHR"] == (True, True, "balanced")
