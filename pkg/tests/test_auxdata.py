import pytest
import torch

from contgan.auxdata import (
    AuxiliaryBatch,
    Provenance,
    build_aux_batch,
    montage,
    montage_pair,
    prev_label_batch,
    swap,
    tile_channels,
)
from contgan.errors import ConfigurationError, ModeError, SequencingError

from conftest import make_batch


def patch_is_verbatim(out_patch, sources, patch):
    """Brute-force search: does out_patch appear at any (image, y, x)?"""
    k = out_patch.shape[-1]
    for s in range(sources.shape[0]):
        windows = sources[s].unfold(1, k, 1).unfold(2, k, 1)  # [C, ny, nx, k, k]
        diff = (windows - out_patch[:, None, None]).abs()
        match = diff.permute(1, 2, 0, 3, 4).flatten(2).amax(dim=-1) == 0
        if match.any():
            return True
    return False


class TestMontage:
    def test_full_size_patch_is_permutation_with_replacement(self, seg_sequence):
        batch = make_batch(seg_sequence.tasks[0], 4, seed=0)
        out = montage(batch.targets, patch_size=64, seed=1)
        for i in range(len(out)):
            assert any(torch.equal(out[i], batch.targets[j]) for j in range(len(batch)))

    def test_every_cell_verbatim(self, seg_sequence):
        batch = make_batch(seg_sequence.tasks[0], 3, seed=1)
        patch = 16
        out = montage(batch.targets, patch, seed=2)
        for i in range(len(out)):
            for gy in range(64 // patch):
                for gx in range(64 // patch):
                    cell = out[i, :, gy * patch : (gy + 1) * patch, gx * patch : (gx + 1) * patch]
                    assert patch_is_verbatim(cell, batch.targets, patch)

    def test_same_seed_identical(self, seg_sequence):
        batch = make_batch(seg_sequence.tasks[0], 3, seed=1)
        assert torch.equal(montage(batch.targets, 16, seed=9), montage(batch.targets, 16, seed=9))

    def test_non_divisor_rejected(self, seg_sequence):
        batch = make_batch(seg_sequence.tasks[0], 3, seed=1)
        with pytest.raises(ConfigurationError):
            montage(batch.targets, 17, seed=0)

    def test_pair_montage_is_aligned(self, seg_sequence):
        batch = make_batch(seg_sequence.tasks[0], 3, seed=1)
        conds, imgs = montage_pair(batch.conditions, batch.targets, 16, seed=4)
        # conditions are dyed targets, so foregrounds must still agree cellwise
        assert torch.equal(conds.max(dim=1, keepdim=True).values > 0, imgs > 0)


class TestSwap:
    def test_involution_up_to_tiling(self, seg_sequence):
        from contgan.data import PairedBatch

        batch = make_batch(seg_sequence.tasks[0], 4, seed=2)
        once = swap(batch)
        again = swap(
            PairedBatch(
                mode=batch.mode,
                conditions=once.conditions,
                targets=once.images,
                digit_labels=batch.digit_labels,
            )
        )
        assert torch.equal(again.images, once.conditions)
        assert torch.equal(again.conditions, batch.conditions)

    def test_lengths_and_provenance(self, seg_sequence):
        batch = make_batch(seg_sequence.tasks[0], 5, seed=2)
        out = swap(batch)
        assert len(out) == len(batch) and out.provenance is Provenance.SWAP

    def test_mask_tiled_to_three_channels(self, seg_sequence):
        batch = make_batch(seg_sequence.tasks[0], 4, seed=2)
        out = swap(batch)
        assert out.conditions.shape[1] == 3
        for c in range(3):
            assert torch.equal(out.conditions[:, c : c + 1], batch.targets)

    def test_label_mode_rejected(self, label_sequence):
        batch = make_batch(label_sequence.tasks[0], 4, seed=2)
        with pytest.raises(ModeError):
            swap(batch)


class TestPrevLabelBatch:
    def test_support_is_previous_classes(self):
        out = prev_label_batch([(0, 1, 2)], 64, seed=0)
        assert set(out.argmax(dim=1).tolist()) <= {0, 1, 2}
        assert torch.all(out.sum(dim=1) == 1.0)

    def test_uniform_within_3_sigma(self):
        n = 10_000
        out = prev_label_batch([(0, 1, 2), (3, 4)], n, seed=1)
        counts = out.sum(dim=0)[:5]
        p = 1 / 5
        sigma = (n * p * (1 - p)) ** 0.5
        assert torch.all((counts - n * p).abs() <= 3 * sigma)

    def test_same_seed_identical(self):
        a = prev_label_batch([(0, 1)], 32, seed=7)
        b = prev_label_batch([(0, 1)], 32, seed=7)
        assert torch.equal(a, b)

    def test_task_one_rejected(self):
        with pytest.raises(SequencingError):
            prev_label_batch([], 8, seed=0)


class TestBuildAuxBatch:
    def test_label_mode_never_swaps(self, label_sequence):
        batch = make_batch(label_sequence.tasks[1], 8, seed=0)
        for seed in range(10):
            aux = build_aux_batch(batch, [(0, 1, 2)], patch_size=16, seed=seed)
            assert aux.provenance is Provenance.PREV_LABELS

    def test_image_mode_yields_both_provenances(self, seg_sequence):
        batch = make_batch(seg_sequence.tasks[1], 8, seed=0)
        seen = {build_aux_batch(batch, [(0, 1, 2)], 16, seed=s).provenance for s in range(20)}
        assert seen == {Provenance.MONTAGE, Provenance.SWAP}

    def test_sizes_match_training_batch(self, seg_sequence, label_sequence):
        for seq in (seg_sequence, label_sequence):
            batch = make_batch(seq.tasks[1], 6, seed=0)
            aux = build_aux_batch(batch, [(0, 1, 2)], 16, seed=3)
            assert len(aux) == len(batch)

    def test_ablation_modes(self, seg_sequence):
        batch = make_batch(seg_sequence.tasks[1], 4, seed=0)
        assert build_aux_batch(batch, [(0, 1, 2)], 16, 0, "montage_only").provenance is Provenance.MONTAGE
        assert build_aux_batch(batch, [(0, 1, 2)], 16, 0, "swap_only").provenance is Provenance.SWAP
        cur = build_aux_batch(batch, [(0, 1, 2)], 16, 0, "current")
        assert cur.provenance is Provenance.CURRENT
        assert torch.equal(cur.conditions, batch.conditions)


def test_tile_channels_rejects_multichannel_source():
    with pytest.raises(ConfigurationError):
        tile_channels(torch.zeros(1, 2, 4, 4), 3)
