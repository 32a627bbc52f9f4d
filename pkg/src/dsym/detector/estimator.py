"""Supervised detector estimator over annotated image samples."""

import numpy as np
import torch
from sklearn.base import BaseEstimator

from ..data.defects import NUM_CLASSES
from ..exceptions import NonFiniteInputError, TrainingDivergedError
from ..validation import check_fitted, check_positive
from .decode import detect
from .losses import assign_targets, detection_loss
from .network import DetectorNet


def samples_to_tensors(samples, size: int):
    """Images plus per-image corner boxes and class ids for training."""
    images = torch.from_numpy(np.stack([s.image for s in samples])).unsqueeze(1)
    boxes, classes = [], []
    for s in samples:
        boxes.append([b.to_corners(size) for _, b in s.annotations])
        classes.append([int(c) for c, _ in s.annotations])
    return images, boxes, classes


def forward_checked(net, images, context=None):
    """Forward pass that reports exploded training state as divergence.

    A blown-up step leaves non-finite parameters or activations, which the
    network's own validation rejects mid-forward; translate that case into
    the divergence error so callers see one failure mode.
    """
    try:
        return net(images)
    except NonFiniteInputError:
        raise TrainingDivergedError(
            "non-finite activations in forward pass", snapshot=context or {}
        ) from None
    except ValueError:
        if any(not torch.isfinite(p).all() for p in net.parameters()):
            raise TrainingDivergedError(
                "model parameters became non-finite", snapshot=context or {}
            ) from None
        raise


def train_detector(
    net: DetectorNet,
    samples,
    epochs: int,
    batch_size: int,
    lr: float,
    momentum: float,
    seed: int,
    epoch_hook=None,
):
    """Plain supervised SGD loop; returns per-epoch mean losses."""
    images, boxes, classes = samples_to_tensors(samples, net.size)
    opt = torch.optim.SGD(net.parameters(), lr=lr, momentum=momentum)
    generator = torch.Generator().manual_seed(seed)
    n = len(samples)
    losses = []
    for epoch in range(epochs):
        net.train()
        order = torch.randperm(n, generator=generator)
        total, batches = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            outputs = forward_checked(net, images[idx], {"epoch": epoch})
            targets = [
                assign_targets(outputs, boxes[i], classes[i]) for i in idx.tolist()
            ]
            loss, _ = detection_loss(outputs, targets, net.num_classes, net.size)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    "detection loss is not finite",
                    snapshot={"epoch": epoch, "loss": float(loss.detach())},
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach())
            batches += 1
        losses.append(total / max(batches, 1))
        if epoch_hook is not None:
            epoch_hook(epoch, losses[-1])
    return losses


class DefectDetector(BaseEstimator):
    """Fully supervised detector with the state-space head."""

    def __init__(
        self,
        num_classes: int = NUM_CLASSES,
        dim: int = 32,
        m: int = 8,
        state_dim: int = 8,
        size: int = 64,
        epochs: int = 40,
        batch_size: int = 16,
        lr: float = 1e-3,
        momentum: float = 0.9,
        conf_thresh: float = 0.25,
        iou_nms: float = 0.5,
        use_ssm: bool = True,
        seed: int = 0,
    ):
        self.num_classes = num_classes
        self.dim = dim
        self.m = m
        self.state_dim = state_dim
        self.size = size
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.conf_thresh = conf_thresh
        self.iou_nms = iou_nms
        self.use_ssm = use_ssm
        self.seed = seed

    def _build(self) -> DetectorNet:
        torch.manual_seed(self.seed)
        return DetectorNet(
            num_classes=self.num_classes,
            dim=self.dim,
            m=self.m,
            state_dim=self.state_dim,
            size=self.size,
            use_ssm=self.use_ssm,
        )

    def fit(self, samples, epoch_hook=None):
        check_positive(self.epochs, "epochs")
        check_positive(self.batch_size, "batch_size")
        self.net_ = self._build()
        self.losses_ = train_detector(
            self.net_,
            samples,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.momentum,
            seed=self.seed,
            epoch_hook=epoch_hook,
        )
        self.net_.eval()
        return self

    def predict(self, samples):
        """One detection list per sample, score-descending."""
        check_fitted(self, "net_")
        self.net_.eval()
        out = []
        for s in samples:
            image = torch.from_numpy(np.asarray(s.image, dtype=np.float32))
            out.append(detect(self.net_, image, self.conf_thresh, self.iou_nms))
        return out

    def save(self, path):
        check_fitted(self, "net_")
        torch.save({"params": self.get_params(), "net": self.net_.state_dict()}, path)

    @classmethod
    def load(cls, path) -> "DefectDetector":
        blob = torch.load(path, weights_only=False)
        est = cls(**blob["params"])
        est.net_ = est._build()
        est.net_.load_state_dict(blob["net"])
        est.net_.eval()
        est.losses_ = []
        return est
