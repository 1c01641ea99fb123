import struct

import numpy as np
import pytest

from regionalign import (
    ConfigError,
    EmbeddingBank,
    EvalRecord,
    FeatureMap,
    FormatError,
    Kind,
    RecordKind,
    RegionSpec,
    StudentHead,
    TrainConfig,
    WorldConfig,
    gen_world,
)
from regionalign.io import (
    load_train_config,
    load_world_config,
    read_annotations,
    read_bank,
    read_checkpoint,
    read_feature_map,
    read_world_split,
    write_annotations,
    write_bank,
    write_checkpoint,
    write_feature_map,
    write_world,
)


def random_bank(rng, d=4, c=6):
    return EmbeddingBank(
        names=tuple(f"cat_{i}" for i in range(d)),
        kinds=tuple(Kind.THING if i % 2 == 0 else Kind.STUFF for i in range(d)),
        embeddings=rng.normal(size=(d, c)).astype(np.float32),
    )


class TestFeatureFile:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        fmap = FeatureMap(rng.normal(size=(5, 7, 3)).astype(np.float32))
        path = tmp_path / "map.dfm"
        write_feature_map(path, fmap)
        first = path.read_bytes()
        loaded = read_feature_map(path)
        np.testing.assert_array_equal(loaded.data, fmap.data)
        write_feature_map(path, loaded)
        assert path.read_bytes() == first

    def test_byte_count(self, tmp_path):
        # byte-count oracle: 16-byte header + H*W*C*4 payload = 16 + 16
        fmap = FeatureMap(np.array([[[1.0], [2.0]], [[3.0], [4.0]]], dtype=np.float32))
        path = tmp_path / "tiny.dfm"
        write_feature_map(path, fmap)
        data = path.read_bytes()
        assert len(data) == 32
        assert data[:4] == b"DFM1"
        h, w, c = struct.unpack("<III", data[4:16])
        assert (h, w, c) == (2, 2, 1)
        np.testing.assert_array_equal(
            np.frombuffer(data[16:], dtype="<f4"), [1.0, 2.0, 3.0, 4.0]
        )

    def test_bad_magic_offset_zero(self, tmp_path):
        path = tmp_path / "bad.dfm"
        path.write_bytes(b"DFM2" + struct.pack("<III", 1, 1, 1) + b"\x00" * 4)
        with pytest.raises(FormatError, match="offset 0"):
            read_feature_map(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "trunc.dfm"
        path.write_bytes(b"DFM1" + struct.pack("<III", 2, 2, 1) + b"\x00" * 8)
        with pytest.raises(FormatError, match="truncated"):
            read_feature_map(path)

    def test_non_finite_payload(self, tmp_path):
        path = tmp_path / "nan.dfm"
        payload = np.array([1.0, np.nan, 0.0, 2.0], dtype="<f4").tobytes()
        path.write_bytes(b"DFM1" + struct.pack("<III", 2, 2, 1) + payload)
        with pytest.raises(FormatError, match="offset 20"):
            read_feature_map(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "extra.dfm"
        payload = np.zeros(4, dtype="<f4").tobytes()
        path.write_bytes(b"DFM1" + struct.pack("<III", 2, 2, 1) + payload + b"xx")
        with pytest.raises(FormatError, match="trailing"):
            read_feature_map(path)


class TestBankFile:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(1)
        bank = random_bank(rng)
        path = tmp_path / "bank.ebk"
        write_bank(path, bank)
        first = path.read_bytes()
        loaded = read_bank(path)
        assert loaded.names == bank.names
        assert loaded.kinds == bank.kinds
        np.testing.assert_array_equal(loaded.embeddings, bank.embeddings)
        write_bank(path, loaded)
        assert path.read_bytes() == first

    def test_duplicate_names_rejected(self, tmp_path):
        path = tmp_path / "dup.ebk"
        name = b"same"
        entry = struct.pack("<H", 4) + name + struct.pack("<B", 0)
        payload = np.ones(4, dtype="<f4").tobytes()
        path.write_bytes(b"EBK1" + struct.pack("<II", 2, 2) + entry + entry + payload)
        with pytest.raises(FormatError, match="duplicate"):
            read_bank(path)

    def test_invalid_kind_rejected(self, tmp_path):
        path = tmp_path / "kind.ebk"
        entry_a = struct.pack("<H", 1) + b"a" + struct.pack("<B", 0)
        entry_b = struct.pack("<H", 1) + b"b" + struct.pack("<B", 7)
        payload = np.ones(4, dtype="<f4").tobytes()
        path.write_bytes(b"EBK1" + struct.pack("<II", 2, 2) + entry_a + entry_b + payload)
        with pytest.raises(FormatError, match="kind"):
            read_bank(path)

    def test_unicode_names(self, tmp_path):
        bank = EmbeddingBank(
            names=("ciel bleu", "bâtiment"),
            kinds=(Kind.STUFF, Kind.THING),
            embeddings=np.eye(2, dtype=np.float32),
        )
        path = tmp_path / "uni.ebk"
        write_bank(path, bank)
        assert read_bank(path).names == bank.names


class TestAnnotationFile:
    def _records(self):
        mask = np.zeros((4, 5), dtype=np.float32)
        mask[1:3, 2:4] = 1.0
        half = np.zeros((4, 5), dtype=np.float32)
        half[0, 0] = 0.5
        half[3, 4] = 0.25
        return [
            EvalRecord(RecordKind.BOX, 1, box=RegionSpec(0.5, 1.0, 3.5, 2.0)),
            EvalRecord(RecordKind.MASK_THING, 0, mask=mask),
            EvalRecord(RecordKind.MASK_STUFF, 3, mask=half),
        ]

    def test_round_trip_bit_identical(self, tmp_path):
        path = tmp_path / "ann.ann"
        write_annotations(path, self._records())
        first = path.read_bytes()
        loaded = read_annotations(path, map_shape=(4, 5), n_categories=4)
        assert [r.kind for r in loaded] == [
            RecordKind.BOX, RecordKind.MASK_THING, RecordKind.MASK_STUFF,
        ]
        np.testing.assert_array_equal(loaded[1].mask, self._records()[1].mask)
        np.testing.assert_array_equal(loaded[2].mask, self._records()[2].mask)
        write_annotations(path, loaded)
        assert path.read_bytes() == first

    def test_randomized_round_trips(self, tmp_path):
        rng = np.random.default_rng(33)
        for trial in range(20):
            h, w = int(rng.integers(2, 8)), int(rng.integers(2, 8))
            records = []
            for _ in range(int(rng.integers(1, 6))):
                if rng.random() < 0.5:
                    x0, y0 = rng.uniform(0, w - 1), rng.uniform(0, h - 1)
                    box = RegionSpec(x0, y0, rng.uniform(x0 + 0.5, w), rng.uniform(y0 + 0.5, h))
                    records.append(EvalRecord(RecordKind.BOX, int(rng.integers(0, 4)), box=box))
                else:
                    mask = (rng.random((h, w)) * (rng.random((h, w)) < 0.4)).astype(np.float32)
                    mask[int(rng.integers(0, h)), int(rng.integers(0, w))] = 1.0
                    kind = RecordKind.MASK_THING if rng.random() < 0.5 else RecordKind.MASK_STUFF
                    records.append(EvalRecord(kind, int(rng.integers(0, 4)), mask=mask))
            path = tmp_path / f"rt_{trial}.ann"
            write_annotations(path, records)
            first = path.read_bytes()
            loaded = read_annotations(path, map_shape=(h, w), n_categories=4)
            write_annotations(path, loaded)
            assert path.read_bytes() == first

    def test_gt_out_of_bounds(self, tmp_path):
        path = tmp_path / "oob.ann"
        write_annotations(path, self._records())
        with pytest.raises(FormatError, match="ground truth"):
            read_annotations(path, map_shape=(4, 5), n_categories=2)

    def test_location_out_of_bounds(self, tmp_path):
        path = tmp_path / "loc.ann"
        record = struct.pack("<BI", 1, 0) + struct.pack("<I", 1) + struct.pack("<If", 99, 1.0)
        path.write_bytes(b"ANN1" + struct.pack("<I", 1) + record)
        with pytest.raises(FormatError, match="location index"):
            read_annotations(path, map_shape=(4, 5))

    def test_bad_kind_byte(self, tmp_path):
        path = tmp_path / "kind.ann"
        path.write_bytes(b"ANN1" + struct.pack("<I", 1) + struct.pack("<BI", 9, 0))
        with pytest.raises(FormatError, match="kind"):
            read_annotations(path, map_shape=(4, 5))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        head = StudentHead.identity(3, hidden=True, residual=True)
        params = {
            name: arr + 0.1 * rng.normal(size=arr.shape)
            for name, arr in head.param_arrays().items()
        }
        head = head.with_params(params)
        path = tmp_path / "head.json"
        write_checkpoint(path, head)
        loaded = read_checkpoint(path)
        assert loaded.residual == head.residual
        for name in head.param_arrays():
            np.testing.assert_array_equal(
                loaded.param_arrays()[name], head.param_arrays()[name]
            )

    def test_deterministic_bytes(self, tmp_path):
        head = StudentHead.identity(4)
        write_checkpoint(tmp_path / "a.json", head)
        write_checkpoint(tmp_path / "b.json", head)
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


class TestConfigs:
    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text('{"tau": 0.01, "thteta": 0.3}')
        with pytest.raises(ConfigError, match="thteta"):
            load_train_config(path)

    def test_train_config_round_trip(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text('{"tau": 0.05, "theta": 0.2, "epochs": 3, "warmup_steps": 5}')
        cfg = load_train_config(path)
        assert cfg == TrainConfig(tau=0.05, theta=0.2, epochs=3, warmup_steps=5)

    def test_world_config_cooccurrence(self, tmp_path):
        path = tmp_path / "world.json"
        path.write_text(
            '{"n_thing": 2, "n_stuff": 2, "channels": 8, "cooccurrence": [[0], [1]]}'
        )
        cfg = load_world_config(path)
        assert cfg.cooccurrence == ((0,), (1,))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_world_config(path)


class TestWorldSerialization:
    def test_world_round_trip(self, tmp_path):
        cfg = WorldConfig(
            n_thing=2, n_stuff=2, channels=8, map_height=6, map_width=6,
            n_train=3, n_eval=2, noise_sigma=0.02, bias_beta=0.4, seed=5,
        )
        world = gen_world(cfg)
        write_world(world, tmp_path / "world")
        bank, images = read_world_split(tmp_path / "world", "train")
        assert bank.names == world.bank.names
        assert len(images) == 3
        base, teacher, records = images[1]
        np.testing.assert_allclose(
            base.data, world.train_images[1].base.data.astype(np.float32), rtol=1e-6
        )
        assert len(records) == len(world.train_images[1].records)
        assert all(r.image_index == 1 for r in records)
