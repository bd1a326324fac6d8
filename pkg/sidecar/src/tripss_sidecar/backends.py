"""Model backends behind the wire protocol.

Two implementations: ``HashBackend`` is fully deterministic and dependency
free, used for tests and offline contract checks; ``TorchBackend`` serves the
real models (ResNet-50 pooled features, a sentence embedder, and optionally a
vision captioner) and is loaded lazily so the service can report 503 while
weights come up.
"""

from __future__ import annotations

import hashlib
import io

import numpy as np

IMAGE_DIM = 2048
TEXT_DIM = 768

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


class BackendError(RuntimeError):
    """Inference failed for a well-formed request."""


def _hash_unit_vector(data: bytes, dim: int) -> np.ndarray:
    """Keyed blake2b counter stream mapped to a unit vector; platform stable."""
    key = hashlib.blake2b(data, digest_size=16).digest()
    blocks = []
    needed = dim
    counter = 0
    while needed > 0:
        digest = hashlib.blake2b(counter.to_bytes(8, "little"), key=key, digest_size=64).digest()
        blocks.append(np.frombuffer(digest, dtype="<u8"))
        needed -= 8
        counter += 1
    u = np.concatenate(blocks)[:dim].astype(np.float64) / 2.0**64
    v = 2.0 * u - 1.0
    norm = np.linalg.norm(v)
    if norm == 0:
        v[0] = 1.0
        norm = 1.0
    return (v / norm).astype(np.float32)


class HashBackend:
    """Deterministic stand-in backend for tests and offline runs."""

    image_provider_id = "hash:image"
    text_provider_id = "hash:text"
    caption_provider_id = "hash:caption"

    def load(self) -> None:
        pass

    def image_vector(self, png_bytes: bytes) -> np.ndarray:
        return _hash_unit_vector(png_bytes, IMAGE_DIM)

    def text_vector(self, text: str) -> np.ndarray:
        return _hash_unit_vector(text.encode("utf-8"), TEXT_DIM)

    def caption(self, png_bytes: bytes, prompt: str, deterministic: bool) -> str:
        digest = hashlib.blake2b(png_bytes, digest_size=6).hexdigest()
        return f"A deterministic caption for image {digest}."


class TorchBackend:
    """Real models: ResNet-50 (IMAGENET1K_V2, classification head removed),
    all-mpnet-base-v2 sentence embeddings, and an optional captioner.

    ``load()`` downloads/initializes weights; until it returns, the app
    answers 503. Inference runs in eval mode with sampling disabled, so
    identical inputs produce identical outputs.
    """

    image_provider_id = "torch:resnet50-imagenet1k-v2"
    text_provider_id = "torch:all-mpnet-base-v2"

    def __init__(self, caption_model: str | None = None):
        self.caption_model_name = caption_model
        self.caption_provider_id = f"torch:{caption_model}" if caption_model else "torch:none"
        self._image_model = None
        self._preprocess = None
        self._text_model = None
        self._captioner = None

    def load(self) -> None:
        import torch
        from torchvision import models, transforms

        weights = models.ResNet50_Weights.IMAGENET1K_V2
        model = models.resnet50(weights=weights)
        model.fc = torch.nn.Identity()
        model.eval()
        self._image_model = model
        self._preprocess = transforms.Compose(
            [
                transforms.Resize(256),
                transforms.CenterCrop(224),
                transforms.ToTensor(),
                transforms.Normalize(
                    mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225]
                ),
            ]
        )

        from sentence_transformers import SentenceTransformer

        self._text_model = SentenceTransformer("all-mpnet-base-v2")

        if self.caption_model_name:
            from transformers import pipeline

            self._captioner = pipeline("image-to-text", model=self.caption_model_name)

    def image_vector(self, png_bytes: bytes) -> np.ndarray:
        import torch
        from PIL import Image

        try:
            image = Image.open(io.BytesIO(png_bytes)).convert("RGB")
        except Exception as exc:
            raise BackendError(f"cannot decode image: {exc}") from exc
        with torch.no_grad():
            features = self._image_model(self._preprocess(image).unsqueeze(0))
        return features.squeeze(0).numpy().astype(np.float32)

    def text_vector(self, text: str) -> np.ndarray:
        return np.asarray(self._text_model.encode(text), dtype=np.float32)

    def caption(self, png_bytes: bytes, prompt: str, deterministic: bool) -> str:
        if self._captioner is None:
            raise BackendError("no caption model configured (start with --caption-model)")
        from PIL import Image

        image = Image.open(io.BytesIO(png_bytes)).convert("RGB")
        out = self._captioner(image, generate_kwargs={"do_sample": not deterministic})
        return out[0]["generated_text"]


def make_backend(name: str, caption_model: str | None = None):
    if name == "hash":
        return HashBackend()
    if name == "torch":
        return TorchBackend(caption_model=caption_model)
    raise ValueError(f"unknown backend {name!r} (expected 'hash' or 'torch')")
