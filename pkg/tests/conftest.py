import numpy as np
import pytest

from chrnet.data import BBox, DatasetManifest, LabelVector, ManifestEntry


def make_entry(sample_id, bits, split="train", image="images/x.png", bboxes=()):
    return ManifestEntry(
        sample_id=sample_id,
        image=image,
        labels=LabelVector(tuple(bits), len(bits)),
        bboxes=tuple(bboxes),
        split=split,
    )


def make_pool(n_pos, n_neg, split="train"):
    """In-memory manifest pool; positives carry one random prohibited bit."""
    rng = np.random.default_rng(7)
    entries = []
    for i in range(n_pos):
        bits = [0] * 5
        bits[int(rng.integers(0, 5))] = 1
        entries.append(make_entry(f"p{i:06d}", bits, split))
    for i in range(n_neg):
        entries.append(make_entry(f"n{i:06d}", [0] * 5, split))
    return DatasetManifest(entries, split_tag=split, seed=0)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A small rendered dataset shared by trainer/eval/CLI tests (64px canvas)."""
    from chrnet.synth import generate_dataset

    root = tmp_path_factory.mktemp("tiny_data")
    manifest = generate_dataset(12, 24, root, seed=11, canvas_hw=(64, 64))
    return manifest


@pytest.fixture()
def small_train_config():
    from chrnet.backbone import BackboneConfig
    from chrnet.head import HeadConfig
    from chrnet.trainer import TrainConfig

    return TrainConfig(
        variant="CHR",
        epochs=1,
        batch_size=8,
        learning_rate=0.02,
        seed=3,
        backbone=BackboneConfig(
            stem_channels=4, channels=(8, 8, 8, 8), taps=(1, 2, 3), input_hw=(64, 64)
        ),
        head=HeadConfig(width=16),
    )
