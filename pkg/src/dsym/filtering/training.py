"""Contrastive training of the cross-modal filter and its scoring estimator."""

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator

from ..data.defects import BBox, DefectClass
from ..exceptions import TrainingDivergedError
from ..validation import check_fitted, check_positive
from .encoders import (
    BACKGROUND_ROW,
    ImageEncoder,
    PromptTable,
    crop_region,
    crops_to_batch,
)
from .gate import cosine_similarity


def _overlaps_any(corners, taken) -> bool:
    x1, y1, x2, y2 = corners
    for a1, b1, a2, b2 in taken:
        if x1 < a2 and a1 < x2 and y1 < b2 and b1 < y2:
            return True
    return False


def sample_background_box(sample, rng, tries: int = 20):
    """Random box avoiding every annotation, or None if rejection fails."""
    size = sample.image.shape[0]
    taken = [b.to_corners(size) for _, b in sample.annotations]
    for _ in range(tries):
        w = rng.uniform(0.15, 0.35)
        h = rng.uniform(0.15, 0.35)
        cx = rng.uniform(w / 2, 1 - w / 2)
        cy = rng.uniform(h / 2, 1 - h / 2)
        box = BBox(cx, cy, w, h)
        if not _overlaps_any(box.to_corners(size), taken):
            return box
    return None


def build_crop_dataset(samples, rng, pad: float = 0.2, background_per_image: int = 1):
    """Padded annotation crops with class rows, plus background crops.

    Returns (crops, rows): crops are float arrays in [0,1], rows index the
    prompt table (class value, or the background row).
    """
    crops, rows = [], []
    for s in samples:
        for cls, box in s.annotations:
            crops.append(crop_region(s.image, box, pad=pad))
            rows.append(int(cls))
        for _ in range(background_per_image):
            box = sample_background_box(s, rng)
            if box is not None:
                crops.append(crop_region(s.image, box, pad=0.0))
                rows.append(BACKGROUND_ROW)
    return crops, rows


def contrastive_loss(
    img_emb: torch.Tensor, txt_emb: torch.Tensor, temperature: float = 0.1
) -> torch.Tensor:
    """Symmetric InfoNCE over paired (image, prompt) embeddings.

    Both inputs are (B, d) and are normalized here; row i of each is a
    positive pair, everything else in the batch is a negative.
    """
    if img_emb.shape != txt_emb.shape or img_emb.ndim != 2:
        raise ValueError(
            f"expected matching (B, d) embeddings, got {tuple(img_emb.shape)} "
            f"and {tuple(txt_emb.shape)}"
        )
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    img = F.normalize(img_emb, dim=1)
    txt = F.normalize(txt_emb, dim=1)
    logits = img @ txt.T / temperature
    labels = torch.arange(img.shape[0])
    return 0.5 * (F.cross_entropy(logits, labels) + F.cross_entropy(logits.T, labels))


def train_contrastive(
    samples,
    d: int = 32,
    epochs: int = 150,
    batch_size: int = 64,
    lr: float = 3e-3,
    temperature: float = 0.1,
    pad: float = 0.2,
    background_per_image: int = 1,
    seed: int = 0,
    log_fn=None,
):
    """Train the image tower against the prompt table; returns per-epoch losses."""
    rng = np.random.default_rng(seed)
    crops, rows = build_crop_dataset(
        samples, rng, pad=pad, background_per_image=background_per_image
    )
    if not crops:
        raise ValueError("no crops to train on")
    torch.manual_seed(seed)
    encoder = ImageEncoder(d=d)
    table = PromptTable(d=d)
    images = crops_to_batch(crops, input_size=encoder.input_size)
    row_idx = torch.tensor(rows, dtype=torch.long)
    opt = torch.optim.Adam(
        list(encoder.parameters()) + list(table.parameters()), lr=lr
    )
    generator = torch.Generator().manual_seed(seed)
    losses = []
    n = len(crops)
    for epoch in range(epochs):
        order = torch.randperm(n, generator=generator)
        total, batches = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            if len(idx) < 2:
                continue
            loss = contrastive_loss(
                encoder(images[idx]), table(row_idx[idx]), temperature
            )
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    "contrastive loss is not finite",
                    snapshot={"epoch": epoch, "loss": float(loss.detach())},
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach())
            batches += 1
        losses.append(total / max(batches, 1))
        if log_fn is not None:
            log_fn(epoch, losses[-1])
    encoder.eval()
    return encoder, table, losses


@torch.no_grad()
def retrieval_accuracy(encoder, table, crops, rows) -> float:
    """Top-1 accuracy of crop-to-prompt retrieval over all table rows."""
    if not crops:
        raise ValueError("no crops to evaluate")
    encoder.eval()
    img = F.normalize(encoder(crops_to_batch(crops, encoder.input_size)), dim=1)
    txt = F.normalize(table.rows.weight, dim=1)
    pred = (img @ txt.T).argmax(dim=1)
    return float((pred == torch.tensor(rows)).float().mean())


class ContrastiveFilter(BaseEstimator):
    """Region-vs-prompt similarity scorer with a usability gate.

    After ``fit`` the filter measures held-out retrieval accuracy; if it does
    not clear ``retrieval_gate`` the filter marks itself unusable
    (``usable_ = False``) and downstream gating falls back to pass-through.
    """

    def __init__(
        self,
        d: int = 32,
        epochs: int = 150,
        batch_size: int = 64,
        lr: float = 3e-3,
        temperature: float = 0.1,
        pad: float = 0.2,
        background_per_image: int = 1,
        retrieval_gate: float = 0.7,
        seed: int = 0,
    ):
        self.d = d
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.temperature = temperature
        self.pad = pad
        self.background_per_image = background_per_image
        self.retrieval_gate = retrieval_gate
        self.seed = seed

    def fit(self, samples, val_samples=None, log_fn=None):
        check_positive(self.epochs, "epochs")
        check_positive(self.batch_size, "batch_size")
        self.encoder_, self.table_, self.losses_ = train_contrastive(
            samples,
            d=self.d,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            temperature=self.temperature,
            pad=self.pad,
            background_per_image=self.background_per_image,
            seed=self.seed,
            log_fn=log_fn,
        )
        held_out = val_samples if val_samples is not None else samples
        crops, rows = build_crop_dataset(
            held_out,
            np.random.default_rng(self.seed + 1),
            pad=self.pad,
            background_per_image=self.background_per_image,
        )
        self.retrieval_accuracy_ = retrieval_accuracy(
            self.encoder_, self.table_, crops, rows
        )
        self.usable_ = bool(self.retrieval_accuracy_ > self.retrieval_gate)
        return self

    @torch.no_grad()
    def embed_region(self, image: np.ndarray, box: BBox) -> np.ndarray:
        check_fitted(self, "encoder_")
        crop = crop_region(image, box, pad=self.pad)
        return self.encoder_(crops_to_batch([crop], self.encoder_.input_size))[0].numpy()

    @torch.no_grad()
    def similarity_to_class(self, image, box: BBox, defect_class) -> float:
        """Cosine similarity between the padded box crop and the class prompt."""
        check_fitted(self, "encoder_")
        text = self.table_.encode_prompt(DefectClass(defect_class)).numpy()
        return cosine_similarity(self.embed_region(np.asarray(image), box), text)

    def save(self, path):
        check_fitted(self, "encoder_")
        torch.save(
            {
                "params": self.get_params(),
                "encoder": self.encoder_.state_dict(),
                "table": self.table_.state_dict(),
                "retrieval_accuracy": self.retrieval_accuracy_,
                "usable": self.usable_,
            },
            path,
        )

    @classmethod
    def load(cls, path) -> "ContrastiveFilter":
        blob = torch.load(path, weights_only=False)
        est = cls(**blob["params"])
        torch.manual_seed(est.seed)
        est.encoder_ = ImageEncoder(d=est.d)
        est.table_ = PromptTable(d=est.d)
        est.encoder_.load_state_dict(blob["encoder"])
        est.table_.load_state_dict(blob["table"])
        est.encoder_.eval()
        est.retrieval_accuracy_ = blob["retrieval_accuracy"]
        est.usable_ = blob["usable"]
        est.losses_ = []
        return est
