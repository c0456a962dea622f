"""Implicit Q-Learning on offline trajectories.

Q-functions are fit to Bellman targets bootstrapped through a state-value
network trained by expectile regression on min(Q1, Q2) - V, which never
queries actions outside the dataset. The policy head is extracted with
advantage-weighted regression on squared action error, weights capped at
100. Single-step 7-d actions; the whole dataset (successes and failures)
is used, with sparse rewards: zero everywhere except the terminal step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..config import ExperimentConfig, IQLConfig
from ..encoder import EncoderCheckpoint
from ..exceptions import TrainingDivergedError, ValidationError
from .common import (EncodedTrajectories, Normalizer, PolicyArtifact,
                     encode_trajectories, make_mlp)

AWR_WEIGHT_CAP = 100.0


def expectile_loss(u, tau: float):
    """Asymmetric squared error |tau - 1{u<0}| * u^2.

    Works elementwise on floats, numpy arrays and torch tensors.
    """
    if not (0.0 < tau < 1.0):
        raise ValidationError(f"tau must be in (0,1), got {tau}")
    if isinstance(u, torch.Tensor):
        weight = torch.abs(tau - (u < 0).to(u.dtype))
        return weight * u * u
    arr = np.asarray(u, dtype=np.float64)
    weight = np.abs(tau - (arr < 0).astype(np.float64))
    out = weight * arr * arr
    return float(out) if np.ndim(u) == 0 else out


@dataclass
class Transitions:
    states: np.ndarray       # (n, state_dim)
    actions: np.ndarray      # (n, action_dim)
    rewards: np.ndarray      # (n,)
    next_states: np.ndarray  # (n, state_dim)
    dones: np.ndarray        # (n,) float 0/1

    def __len__(self) -> int:
        return self.states.shape[0]


def transitions_from_set(inputs: list[np.ndarray], actions: list[np.ndarray],
                         rewards: list[float]) -> Transitions:
    """One transition per step; the final step is terminal and carries the
    trajectory reward (its next-state is unused because done masks it)."""
    ss, aa, rr, ns, dd = [], [], [], [], []
    for x, a, reward in zip(inputs, actions, rewards):
        t = x.shape[0]
        nxt = np.concatenate([x[1:], x[-1:]])
        r = np.zeros(t, dtype=np.float32)
        r[-1] = reward
        d = np.zeros(t, dtype=np.float32)
        d[-1] = 1.0
        ss.append(x)
        aa.append(a)
        rr.append(r)
        ns.append(nxt)
        dd.append(d)
    return Transitions(
        states=np.concatenate(ss).astype(np.float32),
        actions=np.concatenate(aa).astype(np.float32),
        rewards=np.concatenate(rr),
        next_states=np.concatenate(ns).astype(np.float32),
        dones=np.concatenate(dd),
    )


class IQLNets:
    """Twin Q-networks with Polyak targets, a V-network, and a policy head."""

    def __init__(self, state_dim: int, action_dim: int, cfg: IQLConfig):
        cfg.validate()
        torch.manual_seed(cfg.seed)
        self.cfg = cfg
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.q1 = make_mlp(state_dim + action_dim, cfg.hidden, 1)
        self.q2 = make_mlp(state_dim + action_dim, cfg.hidden, 1)
        self.v = make_mlp(state_dim, cfg.hidden, 1)
        self.policy = make_mlp(state_dim, cfg.hidden, action_dim)
        self.q1_target = make_mlp(state_dim + action_dim, cfg.hidden, 1)
        self.q2_target = make_mlp(state_dim + action_dim, cfg.hidden, 1)
        self.q1_target.load_state_dict(self.q1.state_dict())
        self.q2_target.load_state_dict(self.q2.state_dict())
        for p in list(self.q1_target.parameters()) + list(self.q2_target.parameters()):
            p.requires_grad_(False)
        self.opt_q = torch.optim.Adam(
            list(self.q1.parameters()) + list(self.q2.parameters()), lr=cfg.lr)
        self.opt_v = torch.optim.Adam(self.v.parameters(), lr=cfg.lr)
        self.opt_pi = torch.optim.Adam(self.policy.parameters(), lr=cfg.lr)

    def q_target_min(self, states: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        sa = torch.cat([states, actions], dim=1)
        return torch.minimum(self.q1_target(sa), self.q2_target(sa)).squeeze(-1)

    def polyak_update(self) -> None:
        rho = self.cfg.polyak
        with torch.no_grad():
            for main, target in ((self.q1, self.q1_target), (self.q2, self.q2_target)):
                for p, pt in zip(main.parameters(), target.parameters()):
                    pt.mul_(1.0 - rho).add_(p, alpha=rho)


def iql_update(batch: Transitions, nets: IQLNets, cfg: IQLConfig) -> dict:
    """One gradient step on V, both Qs, and the policy, then target update."""
    if len(batch) == 0:
        raise ValidationError("iql_update needs a non-empty batch")
    s = torch.from_numpy(batch.states)
    a = torch.from_numpy(batch.actions)
    r = torch.from_numpy(batch.rewards)
    s2 = torch.from_numpy(batch.next_states)
    d = torch.from_numpy(batch.dones)

    with torch.no_grad():
        q_min = nets.q_target_min(s, a)

    v_pred = nets.v(s).squeeze(-1)
    v_loss = expectile_loss(q_min - v_pred, cfg.tau).mean()
    nets.opt_v.zero_grad()
    v_loss.backward()
    nets.opt_v.step()

    with torch.no_grad():
        target = r + cfg.gamma * (1.0 - d) * nets.v(s2).squeeze(-1)
    sa = torch.cat([s, a], dim=1)
    q1 = nets.q1(sa).squeeze(-1)
    q2 = nets.q2(sa).squeeze(-1)
    q_loss = torch.mean((q1 - target) ** 2) + torch.mean((q2 - target) ** 2)
    nets.opt_q.zero_grad()
    q_loss.backward()
    nets.opt_q.step()

    with torch.no_grad():
        adv = q_min - nets.v(s).squeeze(-1)
        # exp of a clamped exponent == min(exp(beta * adv), cap), sans overflow
        weights = torch.exp(torch.clamp(cfg.beta * adv, max=math.log(AWR_WEIGHT_CAP)))
    pi_err = torch.mean((nets.policy(s) - a) ** 2, dim=1)
    pi_loss = torch.mean(weights * pi_err)
    nets.opt_pi.zero_grad()
    pi_loss.backward()
    nets.opt_pi.step()

    nets.polyak_update()

    record = {"v_loss": float(v_loss.detach()), "q_loss": float(q_loss.detach()),
              "pi_loss": float(pi_loss.detach())}
    if not all(np.isfinite(v) for v in record.values()):
        norms = {name: float(sum(p.norm() ** 2 for p in net.parameters()).sqrt())
                 for name, net in (("q1", nets.q1), ("q2", nets.q2),
                                   ("v", nets.v), ("policy", nets.policy))}
        raise TrainingDivergedError("IQL loss became non-finite", epoch=0, batch=-1,
                                    param_norms=norms)
    return record


def iql_train(dataset, encoder: EncoderCheckpoint, cfg: ExperimentConfig,
              encoded: EncodedTrajectories | None = None) -> PolicyArtifact:
    """Offline IQL over all trajectories, failures included."""
    iql = cfg.iql
    iql.validate()
    if encoded is None:
        if len(dataset) == 0:
            raise ValidationError("IQL needs a non-empty dataset")
        encoded = encode_trajectories(dataset, encoder, cfg)
    trans = transitions_from_set(encoded.inputs, encoded.actions, encoded.rewards)

    normalizer = Normalizer.fit(trans.states, enabled=iql.normalize_inputs)
    trans = Transitions(
        states=normalizer.apply(trans.states),
        actions=trans.actions,
        rewards=trans.rewards,
        next_states=normalizer.apply(trans.next_states),
        dones=trans.dones,
    )

    state_dim, action_dim = trans.states.shape[1], trans.actions.shape[1]
    nets = IQLNets(state_dim, action_dim, iql)
    rng = np.random.default_rng(iql.seed)
    n = len(trans)
    loss_log = []
    for step in range(iql.steps):
        idx = rng.integers(0, n, size=min(iql.batch, n))
        batch = Transitions(trans.states[idx], trans.actions[idx], trans.rewards[idx],
                            trans.next_states[idx], trans.dones[idx])
        try:
            record = iql_update(batch, nets, iql)
        except TrainingDivergedError as err:
            err.epoch = step
            raise
        if step % max(1, iql.steps // 50) == 0 or step == iql.steps - 1:
            loss_log.append({"step": step, **record})

    for net in (nets.q1, nets.q2, nets.v, nets.policy):
        net.eval()
    meta = {
        "input_dim": state_dim,
        "action_dim": action_dim,
        "horizon": 1,
        "replan_every": 1,
        "encoder_fingerprint": encoded.encoder_fingerprint,
        "encoder_digest": encoded.encoder_digest,
        "config_fingerprint": cfg.fingerprint(),
        "seed": iql.seed,
        "net_specs": {
            "policy": {"in": state_dim, "hidden": list(iql.hidden), "out": action_dim},
            "q1": {"in": state_dim + action_dim, "hidden": list(iql.hidden), "out": 1},
            "q2": {"in": state_dim + action_dim, "hidden": list(iql.hidden), "out": 1},
            "v": {"in": state_dim, "hidden": list(iql.hidden), "out": 1},
        },
    }
    return PolicyArtifact(
        kind="iql",
        nets={"policy": nets.policy, "q1": nets.q1, "q2": nets.q2, "v": nets.v},
        normalizer=normalizer, meta=meta, loss_log=loss_log,
    )
