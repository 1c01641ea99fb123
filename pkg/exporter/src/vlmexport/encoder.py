"""Dense patch features and prompt embeddings from a CLIP-style model.

The dense map comes from the vision tower with its final residual attention
block modified: the query-key softmax is dropped and each token is carried
through the value path alone (v_proj -> out_proj), then through the block's
MLP, the final layer norm, and the visual projection. Patch tokens then
live in the shared image-text embedding space, so cosine against prompt
embeddings is meaningful per patch.
"""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image

# standard CLIP pixel normalization
IMAGE_MEAN = (0.48145466, 0.4578275, 0.40821073)
IMAGE_STD = (0.26862954, 0.26130258, 0.27577711)


class DenseFeatureEncoder:
    """Wraps a transformers CLIPModel (or compatible) plus its tokenizer."""

    def __init__(self, model, tokenizer):
        self.model = model.eval()
        self.tokenizer = tokenizer

    @classmethod
    def from_pretrained(cls, identifier: str) -> "DenseFeatureEncoder":
        from transformers import AutoTokenizer, CLIPModel

        return cls(CLIPModel.from_pretrained(identifier), AutoTokenizer.from_pretrained(identifier))

    @property
    def patch_size(self) -> int:
        return self.model.vision_model.config.patch_size

    @property
    def channels(self) -> int:
        return self.model.config.projection_dim

    def preprocess(self, image: Image.Image, image_size: int) -> torch.Tensor:
        """Resize to a square, normalize with CLIP statistics, return 1x3xSxS."""
        rgb = image.convert("RGB").resize((image_size, image_size), Image.BICUBIC)
        arr = np.asarray(rgb, dtype=np.float32) / 255.0
        arr = (arr - np.array(IMAGE_MEAN, dtype=np.float32)) / np.array(IMAGE_STD, dtype=np.float32)
        return torch.from_numpy(arr.transpose(2, 0, 1)).unsqueeze(0)

    @torch.no_grad()
    def dense_feature_map(self, pixel_values: torch.Tensor) -> np.ndarray:
        """(S/patch) x (S/patch) x C patch features from the modified last block."""
        vision = self.model.vision_model
        size = pixel_values.shape[-1]
        if size % self.patch_size != 0:
            raise ValueError(f"image size {size} not divisible by patch size {self.patch_size}")
        interpolate = size != vision.config.image_size
        out = vision(
            pixel_values=pixel_values,
            output_hidden_states=True,
            interpolate_pos_encoding=interpolate,
        )
        hidden = out.hidden_states[-2]  # input to the final block

        block = vision.encoder.layers[-1]
        normed = block.layer_norm1(hidden)
        values = block.self_attn.out_proj(block.self_attn.v_proj(normed))
        hidden = hidden + values  # softmax-free attention: value path only
        hidden = hidden + block.mlp(block.layer_norm2(hidden))
        hidden = vision.post_layernorm(hidden)
        projected = self.model.visual_projection(hidden)

        patches = projected[0, 1:, :]  # drop the class token
        grid = size // self.patch_size
        return patches.reshape(grid, grid, -1).cpu().numpy()

    @torch.no_grad()
    def text_embeddings(self, prompts: list[str]) -> np.ndarray:
        """One embedding per prompt in the shared space, as a (D, C) array."""
        batch = self.tokenizer(prompts, padding=True, return_tensors="pt")
        features = self.model.get_text_features(
            input_ids=batch["input_ids"], attention_mask=batch.get("attention_mask")
        )
        if not isinstance(features, torch.Tensor):  # newer transformers returns an output object
            features = features.pooler_output
        return features.cpu().numpy()
