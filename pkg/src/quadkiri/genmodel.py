"""Generative-model mathematics without a neural backbone.

Covers the rectified-path flow-matching loss, exact optimal-transport
minibatch coupling, Euler probability-flow integration for any pluggable
velocity field, and GRPO: z-scored group advantages turned into positive
softmax weights that reweight an update toward high-reward samples.

A Gaussian mean-field policy over log10-ratio space stands in for the paper's
neural sampler so the preference-alignment loop closes at desk scale: it
samples fields, scores them through decode / checks / simulate / reward, and
moves its mean by the weighted regression update.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import BoundaryAnchors, GridShape, RatioField, default_anchors, march_decode
from .metrics import AlignConfig, MetricError, RewardConfig, reward, siou, total_variation
from .raster import RasterConfig, SilhouetteMask, simulate

__all__ = [
    "FlowPath",
    "Condition",
    "GrpoGroup",
    "MeanFieldPolicy",
    "make_flow_path",
    "cfm_sample_loss",
    "ot_coupling",
    "euler_integrate",
    "grpo_advantages",
    "grpo_weights",
    "grpo_rollout",
    "grpo_update",
    "run_grpo_training",
]


@dataclass(frozen=True)
class Condition:
    """Conditioning bundle for a velocity field: target, deployment, anchors."""

    target: SilhouetteMask | None = None
    phi: float | None = None
    anchors: BoundaryAnchors | None = None


@dataclass(frozen=True)
class FlowPath:
    x0: np.ndarray
    x1: np.ndarray
    t: float
    xt: np.ndarray
    target_velocity: np.ndarray


def make_flow_path(x0: np.ndarray, x1: np.ndarray, t: float) -> FlowPath:
    """Straight interpolation path: xt = (1-t) x0 + t x1."""
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"path time must lie in [0, 1], got {t}")
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    return FlowPath(x0=x0, x1=x1, t=float(t), xt=(1.0 - t) * x0 + t * x1,
                    target_velocity=x1 - x0)


def cfm_sample_loss(v, x0: np.ndarray, x1: np.ndarray, t: float,
                    condition: Condition | None = None) -> float:
    """Per-sample flow-matching regression term: squared error of the
    predicted velocity against the straight-path velocity."""
    path = make_flow_path(x0, x1, t)
    pred = np.asarray(v(path.xt, path.t, condition), dtype=float)
    if pred.shape != path.target_velocity.shape:
        raise ValueError("velocity field output shape mismatch")
    if not np.all(np.isfinite(pred)):
        raise FloatingPointError("velocity field returned non-finite values")
    resid = pred - path.target_velocity
    return float((resid ** 2).sum())


def ot_coupling(base_batch, data_batch, max_size: int = 4096) -> np.ndarray:
    """Exact squared-distance optimal pairing between two equal-size batches.

    Returns the permutation pi with base i coupled to data pi[i], minimizing
    the total squared Frobenius distance over all assignments.
    """
    base = [np.asarray(b, dtype=float) for b in base_batch]
    data = [np.asarray(d, dtype=float) for d in data_batch]
    if len(base) != len(data):
        raise ValueError(f"batch sizes differ: {len(base)} vs {len(data)}")
    if len(base) > max_size:
        raise ValueError(f"batch size {len(base)} exceeds limit {max_size}")
    if not base:
        return np.empty(0, dtype=int)
    B = np.stack([b.ravel() for b in base])
    D = np.stack([d.ravel() for d in data])
    cost = ((B[:, None, :] - D[None, :, :]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(base), dtype=int)
    perm[rows] = cols
    return perm


def euler_integrate(v, x0: np.ndarray, condition: Condition | None = None,
                    steps: int = 8) -> np.ndarray:
    """Left-endpoint Euler integration of dx/dt = v(x, t) from t=0 to t=1."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.asarray(x0, dtype=float).copy()
    h = 1.0 / steps
    for k in range(steps):
        x = x + h * np.asarray(v(x, k * h, condition), dtype=float)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state after Euler step {k}")
    return x


def grpo_advantages(rewards, epsilon: float = 1e-8) -> np.ndarray:
    """Group-relative advantages: (r - mean) / (population std + epsilon)."""
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("need a flat group of at least two rewards")
    mu = r.mean()
    sigma = r.std()  # population form
    return (r - mu) / (sigma + epsilon)


def grpo_weights(advantages, temperature: float = 0.2) -> np.ndarray:
    """Positive mean-one weights: exp(A/T) normalized by the group mean.

    Overflow-guarded with max subtraction; the result is invariant to the
    shift by construction.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    a = np.asarray(advantages, dtype=float) / temperature
    e = np.exp(a - a.max())
    e = np.maximum(e, 1e-300)  # extreme spreads underflow; weights stay positive
    return e / e.mean()


@dataclass
class GrpoGroup:
    candidates: list[RatioField]
    z_samples: np.ndarray            # pre-clamp log10-space samples (G, m, n)
    rewards: np.ndarray
    advantages: np.ndarray
    weights: np.ndarray
    temperature: float
    epsilon: float
    sious: list[float | None]
    tvs: np.ndarray


@dataclass(frozen=True)
class MeanFieldPolicy:
    """Gaussian policy over log10-ratio space with a fixed noise scale."""

    mean_z: np.ndarray
    noise_scale: float = 0.15
    learning_rate: float = 0.3

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean_z", np.asarray(self.mean_z, dtype=float))
        if self.noise_scale <= 0 or self.learning_rate <= 0:
            raise ValueError("noise scale and learning rate must be positive")

    def sample_z(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.mean_z[None] + self.noise_scale * rng.standard_normal(
            (count,) + self.mean_z.shape
        )

    @staticmethod
    def z_to_field(z: np.ndarray) -> RatioField:
        return RatioField(10.0 ** np.clip(z, -1.0, 1.0))


@dataclass(frozen=True)
class GrpoEnv:
    """Everything a rollout needs to turn a sampled field into a reward."""

    target: SilhouetteMask
    grid: GridShape
    phi: float
    anchors: BoundaryAnchors
    raster: RasterConfig
    align: AlignConfig
    reward_cfg: RewardConfig

    @classmethod
    def create(
        cls,
        target: SilhouetteMask,
        grid: GridShape,
        phi: float,
        reward_cfg: RewardConfig | None = None,
        align: AlignConfig | None = None,
    ) -> "GrpoEnv":
        return cls(
            target=target,
            grid=grid,
            phi=phi,
            anchors=default_anchors(grid, phi),
            raster=RasterConfig(target.width, target.height),
            align=align or AlignConfig(),
            reward_cfg=reward_cfg or RewardConfig(),
        )


def grpo_rollout(
    policy: MeanFieldPolicy,
    env: GrpoEnv,
    group_size: int = 4,
    rng: np.random.Generator | None = None,
    temperature: float = 0.2,
    epsilon: float = 1e-8,
) -> GrpoGroup:
    """Sample a group, push each candidate through decode / checks / (if the
    decode succeeded) simulation, and score it. Evaluator failures become the
    fixed low reward; the group always completes."""
    rng = rng or np.random.default_rng()
    zs = policy.sample_z(rng, group_size)
    fields: list[RatioField] = []
    rewards = np.empty(group_size)
    sious: list[float | None] = []
    tvs = np.empty(group_size)
    for g in range(group_size):
        siou_val: float | None = None
        if np.all(np.isfinite(zs[g])):
            x = policy.z_to_field(zs[g])
            layout = march_decode(x, env.phi, env.anchors)
            feas = layout.feasibility
            if not feas.decode_failed:
                try:
                    mask = simulate(layout, env.raster)
                    siou_val = siou(mask, env.target, env.align)
                except (MetricError, ValueError):
                    siou_val = None
            rewards[g] = reward(x, feas, siou_val, env.reward_cfg)
        else:
            x = RatioField(np.ones((env.grid.m, env.grid.n)))
            rewards[g] = -env.reward_cfg.pen_fail
        fields.append(x)
        sious.append(siou_val)
        tvs[g] = total_variation(x)
    adv = grpo_advantages(rewards, epsilon)
    w = grpo_weights(adv, temperature)
    return GrpoGroup(
        candidates=fields,
        z_samples=zs,
        rewards=rewards,
        advantages=adv,
        weights=w,
        temperature=temperature,
        epsilon=epsilon,
        sious=sious,
        tvs=tvs,
    )


def grpo_update(policy: MeanFieldPolicy, group: GrpoGroup) -> MeanFieldPolicy:
    """Weighted regression of the policy mean toward the sampled candidates:

        mean <- mean + lr * (1/G) sum_g w_g (z_g - mean)

    using the pre-clamp log-space samples. Noise scale is unchanged.
    """
    zs = group.z_samples
    w = group.weights
    pull = (w[:, None, None] * (zs - policy.mean_z[None])).mean(axis=0)
    return replace(policy, mean_z=policy.mean_z + policy.learning_rate * pull)


@dataclass
class GroupRecord:
    call_count: int
    rewards: list[float]
    mean_reward: float
    best_siou: float | None
    tv_of_best: float


def run_grpo_training(
    policy: MeanFieldPolicy,
    env: GrpoEnv,
    calls: int,
    group_size: int = 4,
    temperature: float = 0.2,
    seed: int = 0,
) -> tuple[MeanFieldPolicy, list[GroupRecord]]:
    """Run rollout/update cycles until the environment-call budget is spent.

    One call is one sampled candidate through the full evaluation path; each
    group consumes exactly `group_size` calls.
    """
    if calls % group_size != 0:
        raise ValueError("call budget must be a multiple of the group size")
    rng = np.random.default_rng(seed)
    trace: list[GroupRecord] = []
    n_calls = 0
    for _ in range(calls // group_size):
        group = grpo_rollout(policy, env, group_size, rng, temperature)
        policy = grpo_update(policy, group)
        n_calls += group_size
        best = int(np.argmax(group.rewards))
        trace.append(
            GroupRecord(
                call_count=n_calls,
                rewards=[float(r) for r in group.rewards],
                mean_reward=float(group.rewards.mean()),
                best_siou=group.sious[best],
                tv_of_best=float(group.tvs[best]),
            )
        )
    return policy, trace
