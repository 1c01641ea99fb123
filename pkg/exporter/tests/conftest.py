import zlib

import numpy as np
import pytest
import torch
from PIL import Image
from transformers import CLIPConfig, CLIPModel

from vlmexport import DenseFeatureEncoder


class StubTokenizer:
    """Deterministic whitespace tokenizer for config-built test models.

    Emits bos / hashed-word / eos ids inside the tiny vocab so the real CLIP
    text tower (which pools at the eos position) runs unchanged.
    """

    bos, eos, pad, vocab = 1, 2, 0, 100

    def __call__(self, texts, padding=True, return_tensors="pt"):
        rows = []
        for text in texts:
            ids = [self.bos]
            ids += [3 + zlib.crc32(w.encode()) % (self.vocab - 3) for w in text.split()]
            ids.append(self.eos)
            rows.append(ids)
        width = max(len(r) for r in rows)
        input_ids = torch.full((len(rows), width), self.pad, dtype=torch.long)
        mask = torch.zeros((len(rows), width), dtype=torch.long)
        for i, row in enumerate(rows):
            input_ids[i, : len(row)] = torch.tensor(row)
            mask[i, : len(row)] = 1
        return {"input_ids": input_ids, "attention_mask": mask}


@pytest.fixture(scope="session")
def tiny_encoder():
    config = CLIPConfig(
        vision_config=dict(
            hidden_size=64,
            intermediate_size=128,
            num_hidden_layers=2,
            num_attention_heads=4,
            image_size=64,
            patch_size=16,
        ),
        text_config=dict(
            hidden_size=48,
            intermediate_size=96,
            num_hidden_layers=2,
            num_attention_heads=4,
            vocab_size=100,
            max_position_embeddings=32,
            eos_token_id=2,
            bos_token_id=1,
            pad_token_id=0,
        ),
        projection_dim=32,
    )
    torch.manual_seed(1234)
    model = CLIPModel(config)
    return DenseFeatureEncoder(model, StubTokenizer())


@pytest.fixture
def sample_images(tmp_path):
    """Three small deterministic PNGs with distinct content."""
    paths = []
    rng = np.random.default_rng(55)
    for i in range(3):
        arr = np.zeros((48, 48, 3), dtype=np.uint8)
        arr[:, :, i % 3] = np.linspace(0, 255, 48, dtype=np.uint8)[None, :]
        arr[8 * i : 8 * i + 16, 10 : 10 + 8 * (i + 1)] = rng.integers(
            0, 255, size=(16, 8 * (i + 1), 3)
        )
        path = tmp_path / f"img_{i}.png"
        Image.fromarray(arr).save(path)
        paths.append(str(path))
    return paths
