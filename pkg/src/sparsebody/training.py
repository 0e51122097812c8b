"""Training of corrective tables, activation weights and skinning weights.

The objective is the sum of a vertex-to-vertex data term over a batch of
registrations, a Frobenius penalty on the corrective tables, an L1
penalty on the ReLU-gated activations (this is what drives the support
regions sparse) and a skinning regularizer that anchors the weights to a
prior while sparsifying them.

Optimization is plain mini-batch SGD with optional momentum.  The L1
weights on activations and the corrective penalty are annealed
geometrically so the data term dominates late training.  Batching and
summation order are deterministic given the seed, so a fixed seed yields
a bit-identical trajectory.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields

import numpy as np

from .body import BodyModel, CorrectiveTable
from .errors import InvalidArgumentError, NumericalError, ValidationError
from .mesh import Mesh, geodesic_distances, joint_seed_vertices


@dataclass(frozen=True)
class Registration:
    """One ground-truth vertex set in model topology with its parameters."""

    vertices: np.ndarray  # (3N,)
    pose: np.ndarray  # (3K,)
    shape: np.ndarray  # shape coefficients, possibly fewer than the model's

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=np.float64))
        object.__setattr__(self, "pose", np.asarray(self.pose, dtype=np.float64))
        object.__setattr__(self, "shape", np.asarray(self.shape, dtype=np.float64))
        if not (
            np.all(np.isfinite(self.vertices))
            and np.all(np.isfinite(self.pose))
            and np.all(np.isfinite(self.shape))
        ):
            raise ValidationError("registration arrays must be finite")


@dataclass(frozen=True)
class TrainConfig:
    """Loss weights, annealing schedule and optimizer settings.

    Every key is also a valid entry of the train config file.  The
    skinning prior defaults to the model's skinning weights at the start
    of training.
    """

    lambda_b: float = 1e-3  # corrective table penalty
    lambda_c: float = 1e-2  # activation L1 (sparsity pressure)
    lambda_p: float = 1e-2  # skinning anchor to the prior
    lambda_s: float = 0.0  # skinning L1
    anneal_decay_b: float = 0.8
    anneal_decay_c: float = 0.8
    anneal_interval: int = 5  # epochs between annealing steps
    step_size: float = 1e-3
    batch_size: int = 8
    epochs: int = 50
    seed: int = 0
    momentum: float = 0.0
    fresh_init: bool = False  # zero the correctives and re-seed activations first
    init_epsilon_scale: float = 1.0  # geodesic guard for fresh_init, in mean edge lengths
    refine_theta: bool = False  # one pose refinement pass per epoch
    w_prior: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("lambda_b", "lambda_c", "lambda_p", "lambda_s"):
            if getattr(self, name) < 0.0:
                raise InvalidArgumentError(f"{name} must be non-negative")
        for name in ("anneal_decay_b", "anneal_decay_c"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise InvalidArgumentError(f"{name} must be in (0, 1]")
        if self.anneal_interval < 1 or self.batch_size < 1 or self.epochs < 0:
            raise InvalidArgumentError("anneal_interval, batch_size >= 1 and epochs >= 0 required")
        if self.step_size <= 0.0:
            raise InvalidArgumentError("step_size must be positive")
        if self.w_prior is not None:
            prior = np.asarray(self.w_prior, dtype=np.float64)
            if np.any(prior < 0) or np.any(np.abs(prior.sum(axis=1) - 1.0) > 1e-9):
                raise InvalidArgumentError("w_prior rows must be convex weights")
            object.__setattr__(self, "w_prior", prior)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def effective_lambdas(self, epoch: int) -> tuple[float, float, float, float]:
        """Annealed weights at the given epoch: exactly lambda * decay**m."""
        m = epoch // self.anneal_interval
        return (
            self.lambda_b * self.anneal_decay_b**m,
            self.lambda_c * self.anneal_decay_c**m,
            self.lambda_p,
            self.lambda_s,
        )


@dataclass
class EpochMetrics:
    epoch: int
    total_loss: float
    loss_data: float
    loss_blend: float
    loss_activation: float
    loss_skinning: float
    v2v: float
    nonzero_params: int
    mean_support_size: float

    CSV_HEADER = (
        "epoch",
        "total_loss",
        "L_D",
        "L_B",
        "L_A",
        "L_W",
        "v2v",
        "nonzero_params",
        "mean_support_size",
    )

    def csv_row(self) -> list:
        return [
            self.epoch,
            self.total_loss,
            self.loss_data,
            self.loss_blend,
            self.loss_activation,
            self.loss_skinning,
            self.v2v,
            self.nonzero_params,
            self.mean_support_size,
        ]


@dataclass
class LossGradients:
    """Gradients of the full objective with respect to the trained blocks."""

    correctives: list[np.ndarray]  # per non-root joint, same shape as the stored table
    activations: np.ndarray  # (K-1, N)
    skinning: np.ndarray  # (N, K)


# ------------------------------------------------------------------ the losses


def loss_data(model: BodyModel, batch) -> float:
    """Batch mean of per-registration vertex L2 errors."""
    if not batch:
        raise InvalidArgumentError("batch must be non-empty")
    total = 0.0
    for reg in batch:
        residual = model.forward_vertices(reg.shape, reg.pose) - reg.vertices
        total += float(np.linalg.norm(residual))
    return total / len(batch)


def loss_blend(model: BodyModel, lambda_b: float) -> float:
    """Frobenius penalty summed over the per-joint corrective tables."""
    return lambda_b * sum(float(np.linalg.norm(block.table)) for block in model.correctives)


def loss_activation(model: BodyModel, lambda_c: float) -> float:
    """L1 of the summed ReLU activations; all terms are non-negative."""
    return lambda_c * float(np.maximum(model.activations, 0.0).sum())


def loss_skinning(model: BodyModel, lambda_p: float, lambda_s: float, w_prior: np.ndarray) -> float:
    return lambda_p * float(np.linalg.norm(model.skinning_weights - w_prior)) + lambda_s * float(
        np.abs(model.skinning_weights).sum()
    )


def _data_term_with_gradients(model: BodyModel, batch, grads: LossGradients) -> tuple[float, float]:
    """Accumulate the data term and its gradients; returns (loss, mean v2v)."""
    n, k = model.num_vertices, model.num_joints
    inv_b = 1.0 / len(batch)
    total = 0.0
    v2v_sum = 0.0
    for reg in batch:
        theta = np.asarray(reg.pose, dtype=np.float64)
        beta2 = model.beta2_of(reg.shape)
        v_shaped = model.shaped_vertices(reg.shape).reshape(n, 3)
        joints = model.joint_regressor @ v_shaped
        features = model._features(theta, beta2)
        raws = []
        gates = []
        # Accumulated separately and added once so the forward value here is
        # bit-identical to forward_vertices (exact-fit residuals must be 0).
        corr = np.zeros_like(v_shaped)
        for j in range(1, k):
            block = model.correctives[j - 1]
            raw = block.table @ features[j - 1]
            gate = np.maximum(model.activations[j - 1][block.vertex_ids], 0.0)
            corr[block.vertex_ids] += gate[:, None] * raw
            raws.append(raw)
            gates.append(gate)
        t_p = v_shaped + corr
        rotations = model._local_rotations(theta)
        world_rot, world_t = model._global_transforms(joints, rotations)
        skin_trans = world_t - np.einsum("kab,kb->ka", world_rot, joints)
        posed_parts = np.einsum("kab,nb->nka", world_rot, t_p) + skin_trans[None, :, :]
        out = np.einsum("nk,nka->na", model.skinning_weights, posed_parts)

        residual = out - reg.vertices.reshape(n, 3)
        norm = float(np.linalg.norm(residual))
        total += norm * inv_b
        v2v_sum += float(np.abs(residual).mean()) * 1000.0
        if norm == 0.0:
            continue
        g = residual * (inv_b / norm)
        grads.skinning += np.einsum("na,nka->nk", g, posed_parts)
        blended_rot = np.einsum("nk,kab->nab", model.skinning_weights, world_rot)
        g_tp = np.einsum("nab,na->nb", blended_rot, g)
        for j in range(1, k):
            block = model.correctives[j - 1]
            ids = block.vertex_ids
            g_rows = g_tp[ids]
            grads.correctives[j - 1] += (
                gates[j - 1][:, None, None] * g_rows[:, :, None] * features[j - 1][None, None, :]
            )
            live = model.activations[j - 1][ids] > 0.0
            grads.activations[j - 1][ids] += live * np.einsum("mc,mc->m", raws[j - 1], g_rows)
    return total, v2v_sum / len(batch)


def _total_loss_full(model: BodyModel, batch, cfg: TrainConfig, epoch: int):
    lam_b, lam_c, lam_p, lam_s = cfg.effective_lambdas(epoch)
    w_prior = cfg.w_prior if cfg.w_prior is not None else model.skinning_weights
    grads = LossGradients(
        correctives=[np.zeros_like(block.table) for block in model.correctives],
        activations=np.zeros_like(model.activations),
        skinning=np.zeros_like(model.skinning_weights),
    )
    l_data, v2v = _data_term_with_gradients(model, batch, grads)
    l_blend = 0.0
    for j, block in enumerate(model.correctives):
        frob = float(np.linalg.norm(block.table))
        l_blend += lam_b * frob
        if frob > 0.0:
            grads.correctives[j] += (lam_b / frob) * block.table
    l_act = lam_c * float(np.maximum(model.activations, 0.0).sum())
    grads.activations += lam_c * (model.activations > 0.0)
    diff = model.skinning_weights - w_prior
    frob_w = float(np.linalg.norm(diff))
    l_skin = lam_p * frob_w + lam_s * float(np.abs(model.skinning_weights).sum())
    if frob_w > 0.0:
        grads.skinning += (lam_p / frob_w) * diff
    grads.skinning += lam_s * np.sign(model.skinning_weights)
    components = (l_data, l_blend, l_act, l_skin)
    return l_data + l_blend + l_act + l_skin, components, grads, v2v


def total_loss(model: BodyModel, batch, cfg: TrainConfig, epoch: int = 0):
    """Full objective and its gradients at the given annealing epoch.

    Subgradient zero is used at the ReLU kink and at L1 zeros, so dead
    activations stay dead.  Returns (loss, components, gradients) where
    components is the (data, blend, activation, skinning) breakdown.
    """
    loss, components, grads, _ = _total_loss_full(model, batch, cfg, epoch)
    return loss, components, grads


# -------------------------------------------------------------- initialization


def init_activations(model: BodyModel, mesh: Mesh, epsilon_scale: float = 1e-6) -> np.ndarray:
    """Geodesic activation initialization, one row per non-root joint.

    Each vertex gets the reciprocal of its geodesic distance to the
    joint's seed vertices, guarded by epsilon_scale mean edge lengths so
    the seeds themselves stay finite, then the row is affinely rescaled
    to [0, 1]: seeds land at 1, the farthest vertex at 0.
    """
    if epsilon_scale <= 0.0:
        raise InvalidArgumentError("epsilon_scale must be positive")
    seeds = joint_seed_vertices(mesh, model.joint_regressor)
    eps = epsilon_scale * mesh.mean_edge_length()
    rows = np.empty((model.num_joints - 1, model.num_vertices))
    for j in range(1, model.num_joints):
        dist = geodesic_distances(mesh, seeds[j])
        recip = 1.0 / np.maximum(eps, dist)
        lo, hi = float(recip.min()), float(recip.max())
        rows[j - 1] = (recip - lo) / (hi - lo) if hi > lo else np.ones_like(recip)
    return rows


def initialize_for_training(model: BodyModel, epsilon_scale: float = 1.0) -> BodyModel:
    """Fresh trainee: zeroed correctives, geodesic activations, dense tables."""
    mesh = model.template_mesh()
    zeroed = tuple(
        CorrectiveTable.dense(np.zeros((model.num_vertices, 3, block.feature_size)))
        for block in model.correctives
    )
    return model.with_arrays(
        correctives=zeroed,
        activations=init_activations(model, mesh, epsilon_scale),
        pruned=False,
    )


# -------------------------------------------------------------------- training


def _project_to_simplex_rows(weights: np.ndarray, fallback: np.ndarray):
    """Clamp to >= 0 and renormalize each row; dead rows fall back to the prior."""
    np.maximum(weights, 0.0, out=weights)
    sums = weights.sum(axis=1)
    dead = sums <= 0.0
    if np.any(dead):
        weights[dead] = fallback[dead]
        sums[dead] = 1.0
    weights /= sums[:, None]


def train(model: BodyModel, dataset, cfg: TrainConfig) -> tuple[BodyModel, list[EpochMetrics]]:
    """Minimize the full objective over the dataset with mini-batch SGD.

    Returns the trained model and one metrics row per epoch.  Aborts
    with :class:`NumericalError` naming the epoch, batch and parameter
    block as soon as a non-finite loss or gradient shows up.
    """
    if not dataset:
        raise InvalidArgumentError("dataset must be non-empty")
    work = copy.deepcopy(model)
    if cfg.fresh_init:
        work = initialize_for_training(work, cfg.init_epsilon_scale)
    # The trainer owns these arrays exclusively; updates mutate them in place.
    tables = [block.table for block in work.correctives]
    activations = work.activations
    skinning = work.skinning_weights
    prior = cfg.w_prior.copy() if cfg.w_prior is not None else skinning.copy()
    cfg_run = TrainConfig(**{**_config_as_dict(cfg), "w_prior": prior})

    dataset = list(dataset)
    if cfg.refine_theta:
        dataset = [Registration(r.vertices, r.pose.copy(), r.shape) for r in dataset]
    rng = np.random.default_rng(cfg.seed)
    velocity = None
    if cfg.momentum > 0.0:
        velocity = LossGradients(
            correctives=[np.zeros_like(t) for t in tables],
            activations=np.zeros_like(activations),
            skinning=np.zeros_like(skinning),
        )
    metrics: list[EpochMetrics] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        sums = np.zeros(5)
        v2v_mean = 0.0
        batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [dataset[i] for i in order[start : start + cfg.batch_size]]
            loss, components, grads, batch_v2v = _total_loss_full(work, batch, cfg_run, epoch)
            if not np.isfinite(loss):
                block = _first_non_finite(components)
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {batches}, block {block}"
                )
            step = cfg.step_size
            if velocity is None:
                for j in range(len(tables)):
                    tables[j] -= step * grads.correctives[j]
                activations -= step * grads.activations
                skinning -= step * grads.skinning
            else:
                mu = cfg.momentum
                for j in range(len(tables)):
                    velocity.correctives[j] *= mu
                    velocity.correctives[j] -= step * grads.correctives[j]
                    tables[j] += velocity.correctives[j]
                velocity.activations *= mu
                velocity.activations -= step * grads.activations
                activations += velocity.activations
                velocity.skinning *= mu
                velocity.skinning -= step * grads.skinning
                skinning += velocity.skinning
            _project_to_simplex_rows(skinning, prior)
            if not all(np.all(np.isfinite(t)) for t in tables):
                raise NumericalError(
                    f"non-finite correctives at epoch {epoch}, batch {batches}, block correctives"
                )
            sums += (loss, *components)
            v2v_mean += batch_v2v
            batches += 1
        if cfg.refine_theta:
            _refine_poses(work, dataset)
        count = work.count_nonzero_params()
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                total_loss=sums[0] / batches,
                loss_data=sums[1] / batches,
                loss_blend=sums[2] / batches,
                loss_activation=sums[3] / batches,
                loss_skinning=sums[4] / batches,
                v2v=v2v_mean / batches,
                nonzero_params=count.nonzero,
                mean_support_size=work.mean_support_size(),
            )
        )
    return work, metrics


def _config_as_dict(cfg: TrainConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(TrainConfig)}


def _first_non_finite(components) -> str:
    names = ("data", "correctives", "activations", "skinning")
    for name, value in zip(names, components):
        if not np.isfinite(value):
            return name
    return "total"


def _refine_poses(model: BodyModel, dataset):
    from .fitting import FitOptions, fit

    options = FitOptions(max_iterations=1, shape_coeffs=0)
    for idx, reg in enumerate(dataset):
        result = fit(model, reg.vertices, reg.pose, reg.shape, options)
        dataset[idx] = Registration(reg.vertices, np.asarray(result.pose), reg.shape)


def reference_train_config() -> TrainConfig:
    """The frozen training configuration for the reference recovery run.

    Calibrated once against the reference synthetic body (200
    registrations, pose range 0.3, shape range 1.0, noise 1e-4, data
    seed 7) and then frozen: it recovers the ground-truth support
    regions exactly and leaves under 10 percent of the dense parameter
    count alive.
    """
    return TrainConfig(
        lambda_b=1e-4,
        lambda_c=0.08,
        lambda_p=0.1,
        lambda_s=0.0,
        anneal_decay_b=0.8,
        anneal_decay_c=0.8,
        anneal_interval=5,
        step_size=5e-3,
        batch_size=4,
        epochs=100,
        seed=11,
        fresh_init=True,
        init_epsilon_scale=1.0,
    )


# --------------------------------------------------------------------- pruning


def prune(model: BodyModel, threshold: float = 0.0) -> BodyModel:
    """Drop corrective rows whose activation the ReLU holds at or below threshold.

    The affected activations are set to exactly zero and the surviving
    rows move to compressed storage keyed by vertex index.  At threshold
    zero only already-dead rows disappear, so forward outputs are
    unchanged bit for bit.
    """
    if threshold < 0.0:
        raise InvalidArgumentError("threshold must be non-negative")
    activations = model.activations.copy()
    correctives = []
    for j in range(1, model.num_joints):
        row = activations[j - 1]
        row[np.maximum(row, 0.0) <= threshold] = 0.0
        block = model.correctives[j - 1]
        keep = row[block.vertex_ids] > 0.0
        correctives.append(CorrectiveTable(block.vertex_ids[keep], block.table[keep].copy()))
    return model.with_arrays(
        correctives=tuple(correctives), activations=activations, pruned=True
    )
