import numpy as np
import pytest

from regionalign import (
    ConfigError,
    EmbeddingBank,
    EvalRecord,
    FeatureMap,
    Kind,
    RecordKind,
    RegionSpec,
    accuracy_table,
    bank_cosines,
    classify_record,
    confusion,
    mean_accuracy,
)


def make_bank(embeddings, kinds):
    return EmbeddingBank(
        names=tuple(f"cat_{i}" for i in range(len(embeddings))),
        kinds=tuple(kinds),
        embeddings=np.asarray(embeddings, dtype=np.float64),
    )


def unit_world(rng, d, c, hw=(4, 4)):
    """Bank of d orthonormal directions plus one map of random features."""
    q, _ = np.linalg.qr(rng.normal(size=(c, d)))
    kinds = [Kind.THING] * (d // 2 + d % 2) + [Kind.STUFF] * (d // 2)
    bank = make_bank(q.T, kinds)
    fmap = FeatureMap(rng.normal(size=(hw[0], hw[1], c)))
    return bank, fmap


def box_record(gt, image_index=0, box=None):
    return EvalRecord(
        RecordKind.BOX, gt, box=box or RegionSpec(0.5, 0.5, 2.5, 2.5), image_index=image_index
    )


class TestClassifyRecord:
    def test_self_embedding_ranks_first(self):
        rng = np.random.default_rng(0)
        bank, _ = unit_world(rng, 5, 8)
        target = 3
        data = np.tile(bank.embeddings[target], (4, 4, 1))
        fmap = FeatureMap(data)
        rank = classify_record(fmap, box_record(target), bank, tau=0.01)
        assert rank[0] == target

    def test_tie_breaks_to_lower_index(self):
        bank = make_bank([[1.0, 0.0], [1.0, 0.0]], [Kind.THING, Kind.STUFF])
        fmap = FeatureMap(np.tile([1.0, 0.0], (3, 3, 1)))
        rank = classify_record(fmap, box_record(0, box=RegionSpec(0, 0, 3, 3)), bank, 0.01)
        assert rank.tolist() == [0, 1]

    def test_matches_cosine_sort_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            bank, fmap = unit_world(rng, int(rng.integers(3, 8)), 8)
            record = box_record(0, box=RegionSpec(0.2, 0.2, 3.4, 3.7))
            rank = classify_record(fmap, record, bank, tau=0.01)
            from regionalign import pool_region

            feat = pool_region(fmap, record.box)
            cos = [float(bank_cosines(feat, bank)[j]) for j in range(len(bank))]
            want = sorted(range(len(bank)), key=lambda j: (-cos[j], j))
            assert rank.tolist() == want

    def test_mask_record_pools_by_coverage(self):
        rng = np.random.default_rng(2)
        bank, _ = unit_world(rng, 4, 6)
        data = np.zeros((3, 3, 6))
        data[0, 0] = bank.embeddings[1]
        fmap = FeatureMap(data + 1e-9)
        mask = np.zeros((3, 3), dtype=np.float32)
        mask[0, 0] = 1.0
        record = EvalRecord(RecordKind.MASK_THING, 1, mask=mask)
        rank = classify_record(fmap, record, bank, tau=0.01)
        assert rank[0] == 1

    def test_tiny_mask_weights_ignored(self):
        rng = np.random.default_rng(3)
        bank, _ = unit_world(rng, 4, 6)
        data = np.zeros((2, 2, 6))
        data[0, 0] = bank.embeddings[0]
        data[1, 1] = bank.embeddings[2]
        fmap = FeatureMap(data + 1e-9)
        mask = np.zeros((2, 2), dtype=np.float64)
        mask[0, 0] = 1e-9  # below the floor: ignored
        mask[1, 1] = 1.0
        rank = classify_record(fmap, EvalRecord(RecordKind.MASK_THING, 0, mask=mask), bank, 0.01)
        assert rank[0] == 2


class TestMeanAccuracy:
    def _perfect_setup(self, rng, d=4, per_cat=2):
        bank, _ = unit_world(rng, d, 8)
        maps = []
        records = []
        for cat in range(d):
            for _ in range(per_cat):
                data = np.tile(bank.embeddings[cat], (4, 4, 1))
                maps.append(FeatureMap(data + 0.001 * rng.normal(size=(4, 4, 8))))
                records.append(box_record(cat, image_index=len(maps) - 1))
        return bank, maps, records

    def test_all_correct(self):
        rng = np.random.default_rng(4)
        bank, maps, records = self._perfect_setup(rng)
        result = mean_accuracy(records, maps, bank, tau=0.01, k=1)
        assert result[RecordKind.BOX].mean_accuracy == 1.0

    def test_macro_not_micro(self):
        # cat_0: 2 records 1 hit; cat_1: 1 record 1 hit -> macro (0.5 + 1)/2
        rng = np.random.default_rng(5)
        bank, _ = unit_world(rng, 2, 4)
        hit0 = FeatureMap(np.tile(bank.embeddings[0], (3, 3, 1)) + 1e-6)
        miss0 = FeatureMap(np.tile(bank.embeddings[1], (3, 3, 1)) + 1e-6)
        hit1 = FeatureMap(np.tile(bank.embeddings[1], (3, 3, 1)) + 1e-6)
        maps = [hit0, miss0, hit1]
        records = [
            box_record(0, 0, RegionSpec(0, 0, 3, 3)),
            box_record(0, 1, RegionSpec(0, 0, 3, 3)),
            box_record(1, 2, RegionSpec(0, 0, 3, 3)),
        ]
        result = mean_accuracy(records, maps, bank, tau=0.01, k=1)
        assert result[RecordKind.BOX].mean_accuracy == pytest.approx(0.75)
        assert result[RecordKind.BOX].per_category == {0: 0.5, 1: 1.0}

    def test_top_d_is_one(self):
        rng = np.random.default_rng(6)
        bank, fmap = unit_world(rng, 5, 8)
        records = [box_record(i) for i in range(5)]
        result = mean_accuracy(records, [fmap], bank, tau=0.01, k=5)
        assert result[RecordKind.BOX].mean_accuracy == 1.0

    def test_monotone_in_k(self):
        rng = np.random.default_rng(7)
        bank, fmap = unit_world(rng, 6, 8)
        records = [box_record(int(rng.integers(0, 6))) for _ in range(20)]
        accs = [
            mean_accuracy(records, [fmap], bank, 0.01, k)[RecordKind.BOX].mean_accuracy
            for k in range(1, 7)
        ]
        assert all(a <= b + 1e-12 for a, b in zip(accs, accs[1:]))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(8)
        bank, maps, records = self._perfect_setup(rng)
        records[2] = box_record(records[2].gt_category, records[2].image_index,
                                RegionSpec(0.1, 0.1, 1.5, 3.2))
        forward = mean_accuracy(records, maps, bank, 0.01, 1)
        backward = mean_accuracy(records[::-1], maps, bank, 0.01, 1)
        assert forward[RecordKind.BOX].mean_accuracy == backward[RecordKind.BOX].mean_accuracy

    def test_duplication_leaves_per_category_unchanged(self):
        rng = np.random.default_rng(9)
        bank, maps, records = self._perfect_setup(rng)
        dup = records + [r for r in records if r.gt_category == 1]
        a = mean_accuracy(records, maps, bank, 0.01, 1)[RecordKind.BOX]
        b = mean_accuracy(dup, maps, bank, 0.01, 1)[RecordKind.BOX]
        assert a.per_category == b.per_category

    def test_absent_kind_not_reported(self):
        rng = np.random.default_rng(10)
        bank, maps, records = self._perfect_setup(rng)
        result = mean_accuracy(records, maps, bank, 0.01, 1)
        assert RecordKind.MASK_THING not in result
        assert RecordKind.MASK_STUFF not in result

    def test_kind_consistency_enforced(self):
        rng = np.random.default_rng(11)
        bank, fmap = unit_world(rng, 4, 6)  # cats 0,1 thing; 2,3 stuff
        mask = np.ones((4, 4), dtype=np.float32)
        bad = EvalRecord(RecordKind.MASK_THING, 3, mask=mask)
        with pytest.raises(ConfigError):
            mean_accuracy([bad], [fmap], bank, 0.01, 1)

    def test_accuracy_table_top5_ge_top1(self):
        rng = np.random.default_rng(12)
        bank, fmap = unit_world(rng, 6, 8)
        records = [box_record(int(rng.integers(0, 6))) for _ in range(30)]
        mask = np.ones((4, 4), dtype=np.float32)
        records += [
            EvalRecord(RecordKind.MASK_STUFF, 3 + int(rng.integers(0, 3)), mask=mask)
            for _ in range(10)
        ]
        table = accuracy_table(records, [fmap], bank, 0.01)
        for summary in table.kinds.values():
            assert summary.top5 >= summary.top1


class TestConfusion:
    def test_perfect_diagonal(self):
        rng = np.random.default_rng(13)
        bank, _ = unit_world(rng, 3, 6)
        maps, records = [], []
        for cat in range(3):
            maps.append(FeatureMap(np.tile(bank.embeddings[cat], (3, 3, 1)) + 1e-8))
            records.append(box_record(cat, image_index=cat, box=RegionSpec(0, 0, 3, 3)))
        matrix = confusion(records, maps, bank, 0.01)
        assert np.array_equal(matrix.counts, np.eye(3, dtype=np.int64))

    def test_single_offdiagonal(self):
        rng = np.random.default_rng(14)
        bank, _ = unit_world(rng, 3, 6)
        fmap = FeatureMap(np.tile(bank.embeddings[1], (3, 3, 1)) + 1e-8)
        records = [box_record(2, box=RegionSpec(0, 0, 3, 3))]  # gt 2 predicted 1
        matrix = confusion(records, [fmap], bank, 0.01)
        assert matrix.counts.sum() == 1
        assert matrix.counts[2, 1] == 1

    def test_row_sums_equal_category_counts(self):
        rng = np.random.default_rng(15)
        bank, fmap = unit_world(rng, 5, 8)
        records = [box_record(int(rng.integers(0, 5))) for _ in range(40)]
        matrix = confusion(records, [fmap], bank, 0.01)
        want = np.bincount([r.gt_category for r in records], minlength=5)
        assert np.array_equal(matrix.counts.sum(axis=1), want)

    def test_diagonal_matches_record_weighted_top1(self):
        rng = np.random.default_rng(16)
        bank, fmap = unit_world(rng, 5, 8)
        records = [box_record(int(rng.integers(0, 5))) for _ in range(60)]
        matrix = confusion(records, [fmap], bank, 0.01)
        hits = 0
        for record in records:
            rank = classify_record(fmap, record, bank, 0.01)
            hits += int(rank[0] == record.gt_category)
        assert matrix.counts.trace() == hits
