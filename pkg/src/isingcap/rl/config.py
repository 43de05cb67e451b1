from __future__ import annotations

from dataclasses import asdict, dataclass, field


@dataclass
class RlConfig:
    """Training hyperparameters shared by both trainers (desk-scale defaults)."""

    episodes: int = 200            # M
    steps: int = 500               # T (DDPG steps, or POU blocks, per episode)
    t_mc: int = 100_000            # Monte-Carlo evaluation length
    mc_chains: int = 100           # parallel chains the evaluation is split over
    eval_every: int = 10           # episodes between Monte-Carlo refreshes
    batch: int = 64                # N (DDPG minibatch, POU parallel unrolls)
    sigma2: float = 0.05           # exploration noise variance
    alpha: float = 0.01            # target-network averaging
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    unroll: int = 20               # n (POU)
    dropout: float = 0.0           # POU exploration
    hidden: tuple = (64, 64)
    replay_threshold: float = 0.1
    replay_capacity: int = 10_000
    grad_clip: float = 10.0
    critic_action: str = "stored"  # or "actor"
    actor_init: str = "random"     # or "zeros" (uniform policy)
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        positive = ("episodes", "steps", "t_mc", "mc_chains", "eval_every", "batch", "unroll")
        for name in positive:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("sigma2", "actor_lr", "critic_lr", "replay_threshold", "grad_clip"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.critic_action not in ("stored", "actor"):
            raise ValueError("critic_action must be 'stored' or 'actor'")
        if self.actor_init not in ("random", "zeros"):
            raise ValueError("actor_init must be 'random' or 'zeros'")
        self.hidden = tuple(int(h) for h in self.hidden)

    def to_dict(self) -> dict:
        return asdict(self)
