"""Teacher-student parameter tracking via exponential moving average."""

from dataclasses import dataclass, replace
from typing import List

import torch


@dataclass
class TeacherStudentState:
    """Paired parameter lists; the teacher is only ever moved by ema_update."""

    theta_student: List[torch.Tensor]
    theta_teacher: List[torch.Tensor]
    alpha: float
    step: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if len(self.theta_student) != len(self.theta_teacher):
            raise ValueError("student and teacher parameter lists differ in length")
        for s, t in zip(self.theta_student, self.theta_teacher):
            if s.shape != t.shape:
                raise ValueError(f"shape mismatch: {tuple(s.shape)} vs {tuple(t.shape)}")


def ema_update(state: TeacherStudentState) -> TeacherStudentState:
    """theta_t <- alpha * theta_t + (1 - alpha) * theta_s; student untouched."""
    a = state.alpha
    new_teacher = [
        a * t + (1.0 - a) * s
        for s, t in zip(state.theta_student, state.theta_teacher)
    ]
    return replace(state, theta_teacher=new_teacher, step=state.step + 1)


@torch.no_grad()
def ema_module_update(teacher: torch.nn.Module, student: torch.nn.Module, alpha: float):
    """In-place EMA over module parameters; buffers are copied verbatim."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    t_params = list(teacher.parameters())
    s_params = list(student.parameters())
    if len(t_params) != len(s_params):
        raise ValueError("teacher and student have different parameter counts")
    for t, s in zip(t_params, s_params):
        t.mul_(alpha).add_(s, alpha=1.0 - alpha)
    for bt, bs in zip(teacher.buffers(), student.buffers()):
        bt.copy_(bs)
