"""Two-phase teacher-student training loop and its estimator wrapper."""

import copy
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch
from sklearn.base import BaseEstimator

from ..detector.decode import detect
from ..detector.estimator import forward_checked, samples_to_tensors, train_detector
from ..detector.losses import assign_targets, detection_loss
from ..detector.network import DetectorNet
from ..exceptions import NonFiniteInputError, TrainingDivergedError
from ..filtering.gate import FilterConfig
from ..metrics.harness import evaluate_model
from ..validation import check_fitted
from .ema import ema_module_update
from .losses import TrainConfig, consistency_loss, head_activation_maps, lambda_unsup
from .pseudo import generate_pseudo_labels


@dataclass
class MetricRow:
    """One logged evaluation; split distinguishes the student and teacher."""

    epoch: int
    split: str
    map50: float
    precision: float
    recall: float
    accepted_pseudo_count: int


@dataclass
class DSYMResult:
    student: DetectorNet
    teacher: DetectorNet
    rows: List[MetricRow]
    phase1_losses: List[float] = field(default_factory=list)
    phase2_losses: List[float] = field(default_factory=list)
    filter_passthrough: bool = False


def _pseudo_targets(detections, size: int):
    """Hard corner/class targets from accepted teacher detections."""
    boxes = [list(d.to_tuple(size)[2:]) for d in detections]
    classes = [int(d.defect_class) for d in detections]
    return boxes, classes


class _BatchCycler:
    """Reshuffling index stream so unlabeled batches pair 1:1 with labeled."""

    def __init__(self, n: int, batch_size: int, generator: torch.Generator):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.generator = generator
        self.order = torch.randperm(n, generator=generator)
        self.pos = 0

    def next_batch(self):
        if self.pos + self.batch_size > self.n:
            self.order = torch.randperm(self.n, generator=self.generator)
            self.pos = 0
        idx = self.order[self.pos : self.pos + self.batch_size]
        self.pos += self.batch_size
        return idx.tolist()


def run_dsym(
    labeled,
    unlabeled,
    val,
    config: TrainConfig,
    synthesized=(),
    noise_filter=None,
    filter_config: Optional[FilterConfig] = None,
    detector_kwargs: Optional[dict] = None,
    conf_thresh: float = 0.25,
    iou_nms: float = 0.5,
    eval_every: int = 1,
    log_fn=None,
) -> DSYMResult:
    """Supervised pre-training, then teacher-student co-training.

    Phase 1 trains the student on labeled plus synthesized samples. Phase 2
    initializes the teacher as a copy of the student and, per step, pairs one
    supervised batch with one unlabeled batch: the teacher pseudo-labels the
    unlabeled batch, the gate filters it, and the student minimizes
    L_sup + lambda_unsup(epoch) * (L_consistency + L_pseudo), after which the
    teacher takes an EMA step. Deterministic for a fixed config and inputs.
    """
    if not labeled:
        raise ValueError("labeled split is empty")
    if filter_config is None:
        filter_config = FilterConfig(
            total_steps=config.epochs_total, tau_conf=config.tau_conf
        )
    elif filter_config.total_steps < config.epochs_total:
        raise ValueError(
            "filter_config.total_steps must cover epochs_total "
            f"({filter_config.total_steps} < {config.epochs_total})"
        )
    supervised_pool = list(labeled) + list(synthesized)
    torch.manual_seed(config.seed)
    student = DetectorNet(**(detector_kwargs or {}))
    size = student.size

    rows: List[MetricRow] = []

    def log_eval(epoch: int, net, split: str, accepted: int):
        try:
            summary = evaluate_model(net, val, conf_thresh, iou_nms)
        except NonFiniteInputError:
            raise TrainingDivergedError(
                "non-finite activations during evaluation",
                snapshot={"epoch": epoch, "split": split},
            ) from None
        rows.append(
            MetricRow(
                epoch=epoch,
                split=split,
                map50=summary.map50,
                precision=summary.precision,
                recall=summary.recall,
                accepted_pseudo_count=accepted,
            )
        )
        if log_fn is not None:
            log_fn(rows[-1])

    def phase1_hook(epoch_idx: int, loss: float):
        epoch = epoch_idx + 1
        if epoch % eval_every == 0 or epoch == config.epochs_sup:
            log_eval(epoch, student, "val_student", 0)

    phase1_losses = train_detector(
        student,
        supervised_pool,
        epochs=config.epochs_sup,
        batch_size=config.batch_size,
        lr=config.lr,
        momentum=config.momentum,
        seed=config.seed,
        epoch_hook=phase1_hook,
    )

    teacher = copy.deepcopy(student)
    teacher.requires_grad_(False)
    teacher.eval()

    phase2_losses: List[float] = []
    if config.epochs_total > config.epochs_sup:
        if not unlabeled:
            raise ValueError("phase 2 requires a non-empty unlabeled split")
        images_l, boxes_l, classes_l = samples_to_tensors(supervised_pool, size)
        opt = torch.optim.SGD(
            student.parameters(), lr=config.lr, momentum=config.momentum
        )
        gen_l = torch.Generator().manual_seed(config.seed + 1)
        gen_u = torch.Generator().manual_seed(config.seed + 2)
        cycler = _BatchCycler(len(unlabeled), config.batch_size, gen_u)
        n = len(supervised_pool)
        for epoch in range(config.epochs_sup + 1, config.epochs_total + 1):
            lam = lambda_unsup(epoch, config)
            order = torch.randperm(n, generator=gen_l)
            student.train()
            total, batches, accepted_count = 0.0, 0, 0
            for start in range(0, n, config.batch_size):
                idx = order[start : start + config.batch_size]
                outputs = forward_checked(student, images_l[idx], {"epoch": epoch})
                targets = [
                    assign_targets(outputs, boxes_l[i], classes_l[i])
                    for i in idx.tolist()
                ]
                loss_sup, _ = detection_loss(outputs, targets, student.num_classes, size)

                u_samples = [unlabeled[i] for i in cycler.next_batch()]
                pseudo = generate_pseudo_labels(
                    teacher, u_samples, noise_filter, epoch, filter_config,
                    conf_thresh, iou_nms,
                )
                accepted = [
                    (s, p) for s, p in zip(u_samples, pseudo) if p.accepted
                ]
                accepted_count += len(accepted)
                if lam > 0.0 and accepted:
                    u_images = torch.stack(
                        [
                            torch.from_numpy(s.image).to(torch.float32)
                            for s, _ in accepted
                        ]
                    ).unsqueeze(1)
                    out_student = forward_checked(
                        student, u_images, {"epoch": epoch}
                    )
                    with torch.no_grad():
                        out_teacher = teacher(u_images)
                    loss_cons = consistency_loss(
                        head_activation_maps(out_student, size),
                        head_activation_maps(out_teacher, size),
                    )
                    pseudo_targets = []
                    for _, p in accepted:
                        b, c = _pseudo_targets(p.detections, size)
                        pseudo_targets.append(assign_targets(out_student, b, c))
                    loss_pseudo, _ = detection_loss(
                        out_student, pseudo_targets, student.num_classes, size
                    )
                    loss = loss_sup + lam * (loss_cons + loss_pseudo)
                else:
                    loss = loss_sup
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(
                        "semi-supervised loss is not finite",
                        snapshot={
                            "epoch": epoch,
                            "loss": float(loss.detach()),
                            "loss_sup": float(loss_sup.detach()),
                            "lambda_unsup": lam,
                        },
                    )
                opt.zero_grad()
                loss.backward()
                opt.step()
                ema_module_update(teacher, student, config.alpha)
                total += float(loss.detach())
                batches += 1
            phase2_losses.append(total / max(batches, 1))
            if epoch % eval_every == 0 or epoch == config.epochs_total:
                log_eval(epoch, student, "val_student", accepted_count)
                log_eval(epoch, teacher, "val_teacher", accepted_count)

    student.eval()
    teacher.eval()
    passthrough = noise_filter is None or not getattr(noise_filter, "usable_", False)
    return DSYMResult(
        student=student,
        teacher=teacher,
        rows=rows,
        phase1_losses=phase1_losses,
        phase2_losses=phase2_losses,
        filter_passthrough=passthrough,
    )


class DSYMTrainer(BaseEstimator):
    """Estimator facade over run_dsym; predicts with the teacher."""

    def __init__(
        self,
        epochs_sup: int = 50,
        epochs_total: int = 200,
        alpha: float = 0.999,
        tau_conf: float = 0.5,
        lambda_unsup_max: float = 1.0,
        ramp_epochs: int = 30,
        batch_size: int = 16,
        lr: float = 1e-3,
        momentum: float = 0.9,
        seed: int = 0,
        conf_thresh: float = 0.25,
        iou_nms: float = 0.5,
        eval_every: int = 1,
    ):
        self.epochs_sup = epochs_sup
        self.epochs_total = epochs_total
        self.alpha = alpha
        self.tau_conf = tau_conf
        self.lambda_unsup_max = lambda_unsup_max
        self.ramp_epochs = ramp_epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.seed = seed
        self.conf_thresh = conf_thresh
        self.iou_nms = iou_nms
        self.eval_every = eval_every

    def _config(self) -> TrainConfig:
        return TrainConfig(
            epochs_sup=self.epochs_sup,
            epochs_total=self.epochs_total,
            alpha=self.alpha,
            tau_conf=self.tau_conf,
            lambda_unsup_max=self.lambda_unsup_max,
            ramp_epochs=self.ramp_epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.momentum,
            seed=self.seed,
        )

    def fit(
        self,
        labeled,
        unlabeled=(),
        val=(),
        synthesized=(),
        noise_filter=None,
        filter_config=None,
        detector_kwargs=None,
        log_fn=None,
    ):
        result = run_dsym(
            labeled,
            unlabeled,
            val,
            self._config(),
            synthesized=synthesized,
            noise_filter=noise_filter,
            filter_config=filter_config,
            detector_kwargs=detector_kwargs,
            conf_thresh=self.conf_thresh,
            iou_nms=self.iou_nms,
            eval_every=self.eval_every,
            log_fn=log_fn,
        )
        self.student_ = result.student
        self.teacher_ = result.teacher
        self.rows_ = result.rows
        self.result_ = result
        self.detector_kwargs_ = dict(detector_kwargs or {})
        return self

    def predict(self, samples):
        """Teacher detections per sample, score-descending."""
        check_fitted(self, "teacher_")
        out = []
        for s in samples:
            image = torch.from_numpy(np.asarray(s.image, dtype=np.float32))
            out.append(detect(self.teacher_, image, self.conf_thresh, self.iou_nms))
        return out

    def save(self, path):
        check_fitted(self, "teacher_")
        torch.save(
            {
                "params": self.get_params(),
                "detector_kwargs": self.detector_kwargs_,
                "student": self.student_.state_dict(),
                "teacher": self.teacher_.state_dict(),
            },
            path,
        )

    @classmethod
    def load(cls, path) -> "DSYMTrainer":
        blob = torch.load(path, weights_only=False)
        est = cls(**blob["params"])
        est.detector_kwargs_ = blob["detector_kwargs"]
        torch.manual_seed(est.seed)
        est.student_ = DetectorNet(**est.detector_kwargs_)
        est.teacher_ = DetectorNet(**est.detector_kwargs_)
        est.student_.load_state_dict(blob["student"])
        est.teacher_.load_state_dict(blob["teacher"])
        est.student_.eval()
        est.teacher_.eval()
        est.rows_ = []
        return est
