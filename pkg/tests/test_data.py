import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chrnet.data import (
    BBox,
    DatasetManifest,
    LabelVector,
    Sample,
    is_positive,
    load_image,
    load_manifest,
    save_image,
)
from chrnet.errors import DataError
from conftest import make_entry


def _sample(bits, bboxes=()):
    img = np.zeros((32, 32, 3), dtype=np.float32)
    return Sample(img, LabelVector(tuple(bits), 5), "s0", tuple(bboxes))


def test_is_positive_trivial_cases():
    assert is_positive(_sample([0, 0, 0, 0, 0])) is False
    assert is_positive(_sample([0, 1, 0, 0, 0])) is True
    assert is_positive(_sample([1, 1, 1, 1, 1])) is True


def test_is_positive_exhaustive_over_all_label_vectors():
    for bits in itertools.product((0, 1), repeat=5):
        assert is_positive(_sample(bits)) == (sum(bits) > 0)


def test_label_vector_rejects_bad_entries():
    with pytest.raises(DataError):
        LabelVector((0, 2, 0), 3)
    with pytest.raises(DataError):
        LabelVector((0, 1), 3)
    with pytest.raises(DataError):
        LabelVector((0, 1), 0)


def test_label_vector_unobserved_tail_is_masked_not_zero():
    lv = LabelVector((1, 0, 1, 0, 0, 1, 0), prohibited_count=5)
    assert lv.observed == (1, 0, 1, 0, 0)
    assert lv.observed_mask == (True,) * 5 + (False,) * 2
    assert lv.is_positive()


def test_bbox_validation():
    with pytest.raises(DataError):
        BBox(5, 5, 5, 9, 0)
    with pytest.raises(DataError):
        BBox(-1, 0, 4, 4, 0)
    box = BBox(2, 3, 6, 8, 1)
    assert box.contains(2, 3) and not box.contains(6, 3)


def test_sample_bbox_must_match_positive_label():
    with pytest.raises(DataError):
        _sample([0, 0, 0, 0, 0], bboxes=[BBox(0, 0, 4, 4, 2)])
    with pytest.raises(DataError):
        _sample([1, 0, 0, 0, 0], bboxes=[BBox(0, 0, 40, 4, 0)])  # outside image


def test_sample_image_is_frozen():
    s = _sample([1, 0, 0, 0, 0])
    with pytest.raises(ValueError):
        s.image[0, 0, 0] = 1.0


def test_manifest_rejects_duplicate_ids():
    with pytest.raises(DataError):
        DatasetManifest([make_entry("a", [0] * 5), make_entry("a", [1, 0, 0, 0, 0])])


bbox_st = st.builds(
    lambda x, y, w, h, c: BBox(x, y, x + w, y + h, c),
    st.integers(0, 20),
    st.integers(0, 20),
    st.integers(1, 10),
    st.integers(1, 10),
    st.integers(0, 4),
)


@st.composite
def entry_st(draw, index):
    bits = list(draw(st.lists(st.integers(0, 1), min_size=5, max_size=5)))
    boxes = []
    if any(bits):
        positive_classes = [i for i, b in enumerate(bits) if b]
        for b in draw(st.lists(bbox_st, max_size=3)):
            boxes.append(
                BBox(b.x_min, b.y_min, b.x_max, b.y_max,
                     positive_classes[b.class_id % len(positive_classes)])
            )
    return make_entry(f"s{index:04d}", bits, bboxes=boxes)


@settings(max_examples=50, deadline=None)
@given(st.data())
def test_manifest_round_trip_identity(tmp_path_factory, data):
    n = data.draw(st.integers(1, 8))
    entries = [data.draw(entry_st(i)) for i in range(n)]
    manifest = DatasetManifest(entries, split_tag="train", seed=1)
    path = tmp_path_factory.mktemp("rt") / "m.jsonl"
    manifest.save(path)
    loaded = load_manifest(path, prohibited_count=5)
    assert len(loaded) == len(manifest)
    for a, b in zip(manifest.entries, loaded.entries):
        assert a.sample_id == b.sample_id
        assert a.labels == b.labels
        assert a.bboxes == b.bboxes
        assert a.split == b.split
    # second round trip is byte-identical
    path2 = path.parent / "m2.jsonl"
    loaded.save(path2)
    assert path.read_bytes() == path2.read_bytes()


def test_manifest_rejects_mixed_splits(tmp_path):
    path = tmp_path / "m.jsonl"
    lines = [
        make_entry("a", [0] * 5, split="train").to_json_line(),
        make_entry("b", [0] * 5, split="test").to_json_line(),
    ]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError):
        load_manifest(path)


def test_manifest_check_images_reports_missing(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(make_entry("a", [0] * 5).to_json_line() + "\n")
    with pytest.raises(DataError, match="missing"):
        load_manifest(path, check_images=True)


def test_image_round_trip_is_exact_for_8bit_payloads(tmp_path):
    rng = np.random.default_rng(0)
    stored = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    path = tmp_path / "img.png"
    save_image(stored.astype(np.float32) / 255.0, path)
    loaded = load_image(path)
    assert np.array_equal(np.round(loaded * 255).astype(np.uint8), stored)
    assert loaded.dtype == np.float32
    assert loaded.min() >= 0.0 and loaded.max() <= 1.0
