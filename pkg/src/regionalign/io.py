"""Bit-exact file formats, JSON configs, and report emission.

Three little-endian binary formats carry the data between tools:

* feature maps:  ``DFM1`` | u32 H, W, C | H*W*C float32, row-major
  location-then-channel;
* embedding banks: ``EBK1`` | u32 D, C | D x (u16 name length, UTF-8 name,
  u8 kind 0=thing 1=stuff) | D*C float32;
* annotations: ``ANN1`` | u32 count | records of (u8 kind 0=box
  1=mask-thing 2=mask-stuff, u32 ground-truth index, geometry), where box
  geometry is 4 float32 and mask geometry is u32 weight count followed by
  (u32 row-major location index, float32 weight) pairs.

Payloads are single precision on disk; loss arithmetic upstream runs at
double precision. Readers validate magic bytes, declared sizes, payload
finiteness, and name uniqueness, and report the byte offset of whatever
they reject. Reports are UTF-8 JSON (accuracy, loss logs, checkpoints) or
CSV (confusion matrices), serialized deterministically.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .evalkit import AccuracyTable, ConfusionMatrix, EvalRecord, RecordKind
from .featmap import FeatureMap, RegionSpec
from .retrieval import EmbeddingBank, Kind
from .student import StudentHead, TrainConfig, TrainLogEntry
from .synth import SyntheticWorld, WorldConfig

FEATURE_MAGIC = b"DFM1"
BANK_MAGIC = b"EBK1"
ANNOTATION_MAGIC = b"ANN1"


class _Reader:
    """Byte cursor that reports the offset of truncation or bad values."""

    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"{self.path}: truncated while reading {what}", offset=self.pos
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f32(self, count: int, what: str) -> np.ndarray:
        start = self.pos
        raw = self.take(4 * count, what)
        values = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(values)):
            bad = int(np.argmin(np.isfinite(values)))
            raise FormatError(
                f"{self.path}: non-finite value in {what}", offset=start + 4 * bad
            )
        return values

    def expect_magic(self, magic: bytes) -> None:
        got = self.take(len(magic), "magic")
        if got != magic:
            raise FormatError(
                f"{self.path}: bad magic {got!r}, expected {magic!r}", offset=0
            )

    def expect_end(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(
                f"{self.path}: {len(self.data) - self.pos} unexpected trailing bytes",
                offset=self.pos,
            )


def write_feature_map(path, fmap: FeatureMap) -> None:
    payload = np.ascontiguousarray(fmap.data, dtype="<f4").tobytes()
    header = FEATURE_MAGIC + struct.pack("<III", fmap.height, fmap.width, fmap.channels)
    Path(path).write_bytes(header + payload)


def read_feature_map(path) -> FeatureMap:
    reader = _Reader(Path(path).read_bytes(), str(path))
    reader.expect_magic(FEATURE_MAGIC)
    height = reader.u32("height")
    width = reader.u32("width")
    channels = reader.u32("channels")
    if min(height, width, channels) < 1:
        raise FormatError(f"{path}: zero dimension {height}x{width}x{channels}", offset=4)
    values = reader.f32(height * width * channels, "feature payload")
    reader.expect_end()
    return FeatureMap(values.astype(np.float32).reshape(height, width, channels))


def write_bank(path, bank: EmbeddingBank) -> None:
    out = [BANK_MAGIC, struct.pack("<II", len(bank), bank.channels)]
    for name, kind in zip(bank.names, bank.kinds):
        encoded = name.encode("utf-8")
        out.append(struct.pack("<H", len(encoded)))
        out.append(encoded)
        out.append(struct.pack("<B", int(kind)))
    out.append(np.ascontiguousarray(bank.embeddings, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(out))


def read_bank(path) -> EmbeddingBank:
    reader = _Reader(Path(path).read_bytes(), str(path))
    reader.expect_magic(BANK_MAGIC)
    d = reader.u32("category count")
    channels = reader.u32("channel count")
    if d < 1 or channels < 1:
        raise FormatError(f"{path}: empty bank ({d} x {channels})", offset=4)
    names = []
    kinds = []
    for i in range(d):
        name_len = reader.u16(f"name length of entry {i}")
        name_offset = reader.pos
        name = reader.take(name_len, f"name of entry {i}").decode("utf-8")
        if name in names:
            raise FormatError(f"{path}: duplicate category name '{name}'", offset=name_offset)
        kind_byte = reader.u8(f"kind of entry {i}")
        if kind_byte not in (0, 1):
            raise FormatError(f"{path}: invalid kind byte {kind_byte}", offset=reader.pos - 1)
        names.append(name)
        kinds.append(Kind(kind_byte))
    values = reader.f32(d * channels, "embedding payload")
    reader.expect_end()
    return EmbeddingBank(
        names=tuple(names),
        kinds=tuple(kinds),
        embeddings=values.astype(np.float32).reshape(d, channels),
    )


def write_annotations(path, records) -> None:
    out = [ANNOTATION_MAGIC, struct.pack("<I", len(records))]
    for record in records:
        out.append(struct.pack("<BI", int(record.kind), record.gt_category))
        if record.kind == RecordKind.BOX:
            box = record.box
            out.append(struct.pack("<4f", box.x0, box.y0, box.x1, box.y1))
        else:
            mask = np.asarray(record.mask)
            rows, cols = np.nonzero(mask)
            flat = rows * mask.shape[1] + cols
            weights = mask[rows, cols].astype("<f4")
            out.append(struct.pack("<I", len(flat)))
            for loc, w in zip(flat, weights):
                out.append(struct.pack("<If", int(loc), float(w)))
    Path(path).write_bytes(b"".join(out))


def read_annotations(
    path,
    map_shape: tuple[int, int] | None = None,
    n_categories: int | None = None,
) -> list[EvalRecord]:
    """Read annotation records; bounds are validated when the companion
    feature-map shape or bank size is supplied."""
    reader = _Reader(Path(path).read_bytes(), str(path))
    reader.expect_magic(ANNOTATION_MAGIC)
    count = reader.u32("record count")
    records = []
    for i in range(count):
        kind_offset = reader.pos
        kind_byte = reader.u8(f"kind of record {i}")
        if kind_byte not in (0, 1, 2):
            raise FormatError(f"{path}: invalid record kind {kind_byte}", offset=kind_offset)
        kind = RecordKind(kind_byte)
        gt = reader.u32(f"ground truth of record {i}")
        if n_categories is not None and gt >= n_categories:
            raise FormatError(
                f"{path}: record {i} ground truth {gt} outside bank of size {n_categories}",
                offset=kind_offset + 1,
            )
        if kind == RecordKind.BOX:
            x0, y0, x1, y1 = struct.unpack("<4f", reader.take(16, f"box of record {i}"))
            records.append(EvalRecord(kind, gt, box=RegionSpec(x0, y0, x1, y1)))
        else:
            if map_shape is None:
                raise ConfigError(
                    f"{path}: mask records need the companion feature-map shape"
                )
            n_weights = reader.u32(f"weight count of record {i}")
            mask = np.zeros(map_shape, dtype=np.float32)
            for j in range(n_weights):
                loc_offset = reader.pos
                loc = reader.u32(f"location of record {i} weight {j}")
                weight = struct.unpack(
                    "<f", reader.take(4, f"weight {j} of record {i}")
                )[0]
                if loc >= map_shape[0] * map_shape[1]:
                    raise FormatError(
                        f"{path}: location index {loc} outside {map_shape[0]}x{map_shape[1]} map",
                        offset=loc_offset,
                    )
                mask[loc // map_shape[1], loc % map_shape[1]] = weight
            records.append(EvalRecord(kind, gt, mask=mask))
    reader.expect_end()
    return records


def write_checkpoint(path, head: StudentHead) -> None:
    payload = {
        "channels": head.channels,
        "residual": head.residual,
        "weight": head.weight.tolist(),
        "bias": head.bias.tolist(),
        "hidden_weight": None if head.hidden_weight is None else head.hidden_weight.tolist(),
        "hidden_bias": None if head.hidden_bias is None else head.hidden_bias.tolist(),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", "utf-8")


def read_checkpoint(path) -> StudentHead:
    try:
        payload = json.loads(Path(path).read_text("utf-8"))
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: invalid checkpoint JSON: {err}") from err
    def arr(key):
        value = payload.get(key)
        return None if value is None else np.asarray(value, dtype=np.float64)
    return StudentHead(
        weight=arr("weight"),
        bias=arr("bias"),
        hidden_weight=arr("hidden_weight"),
        hidden_bias=arr("hidden_bias"),
        residual=bool(payload.get("residual", False)),
    )


def write_loss_log(path, log: list[TrainLogEntry]) -> None:
    entries = [
        {"step": e.step, "lr": e.lr, "image_loss": e.image_loss, "kept_count": e.kept_count}
        for e in log
    ]
    Path(path).write_text(json.dumps(entries, sort_keys=True, indent=1) + "\n", "utf-8")


def accuracy_report_dict(table: AccuracyTable, bank: EmbeddingBank) -> dict:
    report = {}
    for kind, summary in table.kinds.items():
        report[kind.name] = {
            "top1": summary.top1,
            "top5": summary.top5,
            "per_category_top1": {
                bank.names[c]: acc for c, acc in summary.per_category_top1.items()
            },
            "per_category_top5": {
                bank.names[c]: acc for c, acc in summary.per_category_top5.items()
            },
            "counts": {bank.names[c]: n for c, n in summary.counts.items()},
        }
    return report


def write_accuracy_report(path, table: AccuracyTable, bank: EmbeddingBank) -> None:
    Path(path).write_text(
        json.dumps(accuracy_report_dict(table, bank), sort_keys=True, indent=1) + "\n",
        "utf-8",
    )


def write_confusion_csv(path, matrix: ConfusionMatrix) -> None:
    lines = ["gt\\pred," + ",".join(matrix.names)]
    for i, name in enumerate(matrix.names):
        lines.append(name + "," + ",".join(str(int(v)) for v in matrix.counts[i]))
    Path(path).write_text("\n".join(lines) + "\n", "utf-8")


def _load_config(path, cls):
    try:
        payload = json.loads(Path(path).read_text("utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON: {err}") from err
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys: {', '.join(unknown)}")
    if "cooccurrence" in payload and payload["cooccurrence"] is not None:
        payload["cooccurrence"] = tuple(tuple(p) for p in payload["cooccurrence"])
    return cls(**payload)


def load_world_config(path) -> WorldConfig:
    return _load_config(path, WorldConfig)


def load_train_config(path) -> TrainConfig:
    return _load_config(path, TrainConfig)


def write_world(world: SyntheticWorld, out_dir) -> None:
    """Serialize a synthetic world: bank, per-image maps, and annotations.

    Layout: ``bank.ebk``, ``world.json`` (split sizes), and per split
    ``train/NNN.base.dfm``, ``NNN.teacher.dfm``, ``NNN.ann``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_bank(out / "bank.ebk", world.bank)
    manifest = {"n_train": len(world.train_images), "n_eval": len(world.eval_images)}
    (out / "world.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n", "utf-8")
    for split, images in (("train", world.train_images), ("eval", world.eval_images)):
        split_dir = out / split
        split_dir.mkdir(exist_ok=True)
        for i, image in enumerate(images):
            write_feature_map(split_dir / f"{i:03d}.base.dfm", image.base)
            write_feature_map(split_dir / f"{i:03d}.teacher.dfm", image.teacher)
            write_annotations(split_dir / f"{i:03d}.ann", image.records)


def read_world_split(data_dir, split: str):
    """Load one split back as (base, teacher, records) triples plus the bank."""
    data = Path(data_dir)
    bank = read_bank(data / "bank.ebk")
    manifest = json.loads((data / "world.json").read_text("utf-8"))
    count = manifest[f"n_{split}"]
    images = []
    for i in range(count):
        base = read_feature_map(data / split / f"{i:03d}.base.dfm")
        teacher = read_feature_map(data / split / f"{i:03d}.teacher.dfm")
        records = read_annotations(
            data / split / f"{i:03d}.ann",
            map_shape=(base.height, base.width),
            n_categories=len(bank),
        )
        records = [dataclasses.replace(r, image_index=i) for r in records]
        images.append((base, teacher, records))
    return bank, images
