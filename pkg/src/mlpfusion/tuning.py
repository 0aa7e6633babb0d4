"""Layer-wise tuning of fused blocks, the clustering output-error bound, and a toy trainer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .compress import FusedMlp
from .errors import InvalidArgument, NumericFailure, PreconditionViolation
from .kmeans import ClusterAssignment
from .linalg import as_matrix, frob_distance, make_rng, spectral_norm
from .mlp import MlpWeights, ScalarHead, sub_mlp_embeddings


@dataclass(frozen=True)
class TuneConfig:
    steps: int = 100
    lr: float = 1e-3
    optimizer: str = "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # None means full batch
    batch_size: int | None = None

    def __post_init__(self):
        if self.steps < 0:
            raise InvalidArgument("steps must be non-negative")
        if not self.lr >= 0 or not math.isfinite(self.lr):
            raise InvalidArgument("lr must be a finite non-negative number")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidArgument(f"unknown optimizer {self.optimizer!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidArgument("betas must lie in [0, 1)")
        if not self.eps > 0:
            raise InvalidArgument("eps must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise InvalidArgument("batch_size must be positive")

    def make_optimizer(self):
        if self.optimizer == "adam":
            return Adam(self.lr, self.beta1, self.beta2, self.eps)
        return SGD(self.lr)


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params: dict, grads: dict) -> dict:
        return {name: value - self.lr * grads[name] if name in grads else value
                for name, value in params.items()}


class Adam:
    """First/second-moment update with optional bias correction; state keyed by parameter name."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8, bias_correction=True):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.bias_correction = bias_correction
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        for name, value in params.items():
            if name not in grads:
                out[name] = value
                continue
            g = grads[name]
            m = self.beta1 * self.m.get(name, 0.0) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(name, 0.0) + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            if self.bias_correction:
                m = m / (1 - self.beta1**self.t)
                v = v / (1 - self.beta2**self.t)
            out[name] = value - self.lr * m / (np.sqrt(v) + self.eps)
        return out


@dataclass(frozen=True)
class LossTrajectory:
    """Loss before the first step followed by the loss after each step."""

    values: list = field(default_factory=list)

    def __post_init__(self):
        vals = [float(v) for v in self.values]
        if not all(math.isfinite(v) for v in vals):
            raise NumericFailure("trajectory contains non-finite values")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)

    @property
    def initial(self) -> float:
        return self.values[0]

    @property
    def final(self) -> float:
        return self.values[-1]

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("step,loss\n")
            for i, v in enumerate(self.values):
                fh.write(f"{i},{v!r}\n")

    @classmethod
    def from_csv(cls, path) -> "LossTrajectory":
        with open(path) as fh:
            rows = [line.strip().split(",") for line in fh if line.strip()]
        return cls([float(r[1]) for r in rows[1:]])


def trajectory_distance(a: LossTrajectory, b: LossTrajectory) -> float:
    """Mean squared difference between two equal-length trajectories."""
    if len(a) != len(b):
        raise InvalidArgument("trajectories differ in length")
    return float(np.mean((np.asarray(a.values) - np.asarray(b.values)) ** 2))


# ---------------------------------------------------------------------------
# layer-wise tuning

_TUNED = ("W1", "b1", "W2")


def tuning_loss(teacher, student, inputs, targets=None):
    """Mean over inputs of the per-entry MSE between teacher and student outputs."""
    targets = [teacher.forward(X) for X in inputs] if targets is None else targets
    return float(np.mean([np.mean((student.forward(X) - T) ** 2) for X, T in zip(inputs, targets)]))


def layerwise_tune(teacher: MlpWeights, student: FusedMlp, inputs, cfg: TuneConfig):
    """Fit a fused student to the teacher's block outputs by MSE.

    Only ``W1``, ``b1`` and ``W2`` move; ``P`` and ``b2`` stay fixed.  Returns
    ``(tuned_student, LossTrajectory)``.
    """
    if not isinstance(student, FusedMlp):
        raise InvalidArgument(f"layer-wise tuning needs a fused student, got {student.variant!r}")
    if student.p != teacher.p:
        raise InvalidArgument("teacher and student disagree on p")
    inputs = [as_matrix(X, "X") for X in inputs]
    if not inputs:
        raise InvalidArgument("layer-wise tuning needs at least one input")
    targets = [teacher.forward(X) for X in inputs]
    opt = cfg.make_optimizer()
    count = len(inputs)
    losses = []
    for step in range(cfg.steps + 1):
        diffs = [student.forward(X) - T for X, T in zip(inputs, targets)]
        loss = float(sum(np.mean(d**2) for d in diffs) / count)
        if not math.isfinite(loss):
            raise NumericFailure(f"tuning loss became non-finite at step {step}", step=step)
        losses.append(loss)
        if step == cfg.steps:
            break
        grads = {name: 0.0 for name in _TUNED}
        for X, diff in zip(inputs, diffs):
            g = student.gradients(X, 2.0 * diff / (diff.size * count)).as_dict()
            for name in _TUNED:
                grads[name] = grads[name] + g[name]
        student = student.with_trainable(opt.step(student.trainable(), grads))
    return student, LossTrajectory(losses)


# ---------------------------------------------------------------------------
# output-error bound for clustered blocks


@dataclass(frozen=True)
class BoundReport:
    epsilon: float
    C1: float
    C2: float
    CX: float
    L: float
    bound: float
    measured: float

    @property
    def holds(self) -> bool:
        return self.measured <= self.bound + 1e-9


def output_bound(epsilon, C1, C2, CX, L):
    return L * (C2 * CX + C1 * CX) * epsilon + L * CX * epsilon**2


def check_output_bound(teacher: MlpWeights, assignment: ClusterAssignment, X, strict: bool = True) -> BoundReport:
    """Compare ``||H - H_C||_F`` for a bias-free teacher with its clustering bound.

    ``epsilon = ||W - C^T W_tilde||_F`` over the full embedding matrix, ``C1`` and
    ``C2`` are spectral norms of ``W1`` and ``W2``, ``CX = ||X||_F`` and ``L`` is the
    activation's Lipschitz constant.  With ``strict`` a violated bound raises
    :class:`NumericFailure`.
    """
    if np.any(teacher.b1 != 0) or np.any(teacher.b2 != 0):
        raise PreconditionViolation("the output bound assumes b1 = 0 and b2 = 0")
    X = as_matrix(X, "X")
    E = sub_mlp_embeddings(teacher)
    recon = assignment.C.T @ assignment.centroids
    p = teacher.p
    clustered = MlpWeights(recon[:, :p].T, recon[:, p], recon[:, p + 1 :], teacher.b2, teacher.act)
    report = BoundReport(
        epsilon=frob_distance(E, recon),
        C1=spectral_norm(teacher.W1),
        C2=spectral_norm(teacher.W2),
        CX=float(np.linalg.norm(X)),
        L=teacher.act.lipschitz,
        bound=0.0,
        measured=frob_distance(teacher.forward(X), clustered.forward(X)),
    )
    report = BoundReport(**{**report.__dict__, "bound": output_bound(
        report.epsilon, report.C1, report.C2, report.CX, report.L)})
    if strict and not report.holds:
        raise NumericFailure(f"output bound violated: measured {report.measured} > bound {report.bound}")
    return report


# ---------------------------------------------------------------------------
# toy fine-tuning dynamics


@dataclass(frozen=True, eq=False)
class ToyDataset:
    inputs: list
    labels: np.ndarray  # 0/1

    def __post_init__(self):
        if not self.inputs:
            raise InvalidArgument("dataset must be non-empty")
        if len(self.labels) != len(self.inputs):
            raise InvalidArgument("one label per input is required")


def label_by_teacher(teacher, head: ScalarHead, inputs) -> ToyDataset:
    """Binary labels from the sign of the teacher's centred score ``f(X) - median f``.

    Centring keeps the classes balanced; ``r . b2`` shifts the raw score, and
    on many seeds its sign alone puts every input in one class.
    """
    f = np.array([head.r @ teacher.forward(X).mean(axis=0) for X in inputs])
    return ToyDataset(list(inputs), (f > np.median(f)).astype(np.float64))


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def train_toy(model, head: ScalarHead, dataset: ToyDataset, cfg: TuneConfig, seed: int = 0,
              return_model: bool = False):
    """Logistic-loss training of the block and the readout on a binary task.

    Full-batch by default; with ``cfg.batch_size`` minibatches are drawn from
    Philox(seed).  Entry ``i`` of the trajectory is the full-dataset loss after
    ``i`` steps.
    """
    head.check(model)
    rng = make_rng(seed)
    opt = cfg.make_optimizer()
    params = dict(model.trainable())
    params["r"] = head.r.copy()
    y = np.asarray(dataset.labels, dtype=np.float64)
    N = len(dataset.inputs)

    def evaluate(model, r, idx, want_grad):
        loss = 0.0
        grads = {}
        for i in idx:
            X = dataset.inputs[i]
            H = model.forward(X)
            pooled = H.mean(axis=0)
            f = float(r @ pooled)
            loss += (_softplus(f) - y[i] * f) / len(idx)
            if want_grad:
                dfdl = (float(_sigmoid(f)) - y[i]) / len(idx)
                G = np.tile(r * (dfdl / X.shape[0]), (X.shape[0], 1))
                for name, g in model.gradients(X, G).as_dict().items():
                    grads[name] = grads.get(name, 0.0) + g
                grads["r"] = grads.get("r", 0.0) + dfdl * pooled
        return loss, grads

    everything = np.arange(N)
    losses = []
    for step in range(cfg.steps + 1):
        current = model.with_trainable({k: v for k, v in params.items() if k != "r"})
        loss, _ = evaluate(current, params["r"], everything, False)
        if not math.isfinite(loss):
            raise NumericFailure(f"training loss became non-finite at step {step}", step=step)
        losses.append(loss)
        if step == cfg.steps:
            model = current
            break
        idx = everything if cfg.batch_size is None else rng.choice(N, size=min(cfg.batch_size, N), replace=False)
        _, grads = evaluate(current, params["r"], idx, True)
        params = opt.step(params, grads)
    traj = LossTrajectory(losses)
    if return_model:
        return traj, model, ScalarHead(params["r"])
    return traj
