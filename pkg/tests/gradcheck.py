"""Finite-difference gradient checks shared by the unit and acceptance tests."""
import numpy as np

from drlpart.a2c import Episode, a2c_loss, normalize_returns, discounted_returns
from drlpart.edge_sep import EDGE_MASK_FEATURES, EDGE_SIDE_SWAP
from drlpart.nn import GraphContext, Tensor, coarse_agent_forward, pick, refine_agent_forward
from drlpart.vertex_sep import VERTEX_MASK_FEATURES, VERTEX_SIDE_SWAP


def random_states(g, channels, steps, rng, kind):
    """Feature matrices with one-hot side channels and a few boundary flags."""
    states = []
    for _ in range(steps):
        F = np.zeros((g.n, channels))
        if kind == "coarse":
            picked = rng.random(g.n) < 0.3
            picked[0] = False
            F[:, 0] = ~picked
            F[:, 1] = picked
        else:
            sides = 3 if channels == 7 else 2
            F[np.arange(g.n), rng.integers(0, sides, g.n)] = 1.0
            mask_col = 2 if channels == 5 else 3
            F[:, mask_col] = rng.random(g.n) < 0.2
            F[0, mask_col] = 0.0
            if channels == 7:
                F[:, 4] = rng.random(g.n) < 0.3
                F[0, 4] = 0.0
            F[:, -2:] = rng.dirichlet([1.0, 1.0, 1.0])[:2]
        states.append(F)
    return states


def _forward(kind, ctx, F, params):
    if kind == "coarse":
        return coarse_agent_forward(ctx, F, params, training=True)
    if F.shape[1] == 5:
        return refine_agent_forward(ctx, F, EDGE_MASK_FEATURES, params, training=True, side_swap=EDGE_SIDE_SWAP)
    return refine_agent_forward(ctx, F, VERTEX_MASK_FEATURES, params, training=True, side_swap=VERTEX_SIDE_SWAP)


def _returns(rewards, gamma):
    return normalize_returns(discounted_returns(rewards, gamma))


def episode_loss(kind, ctx, states, actions, rewards, params, alpha=0.1, gamma=0.9):
    """The library A2C loss over a recorded episode."""
    ep = Episode()
    for F, a, r in zip(states, actions, rewards):
        out = _forward(kind, ctx, F, params)
        ep.append(a, r, pick(out.actor, a), out.critic)
    return a2c_loss(ep, _returns(rewards, gamma), alpha)


def _is_critic_param(kind, name):
    if kind == "coarse":
        return name.split(".")[0] in ("gate1", "gate2", "critic1", "critic2")
    return name.startswith("critic")


def max_relative_error(store, g, rng, steps=2, h=1e-5, floor=1e-6, alpha=0.1, gamma=0.9):
    """Largest relative deviation between analytic and central-difference gradients.

    The analytic side is the library loss. The numeric side differences a
    surrogate whose exact gradient equals it: the advantage is frozen and,
    for the refinement network, the critic reads the shared layers at the
    base point (its input is detached). Terms a parameter cannot reach are
    constant and cancel in the central difference, so they are skipped.
    """
    kind = store.kind
    ctx = GraphContext.of(g)
    states = random_states(g, store.channels, steps, rng, kind)
    actions = [0] * steps
    rewards = rng.normal(size=steps).tolist()
    R = _returns(rewards, gamma)

    leaves = store.as_tensors()
    episode_loss(kind, ctx, states, actions, rewards, leaves, alpha, gamma).backward()
    analytic = np.concatenate([np.zeros(store.shapes[k]).ravel() if leaves[k].grad is None
                               else leaves[k].grad.ravel() for k in store.shapes])

    base = store.as_tensors(requires_grad=False)
    v0 = [_forward(kind, ctx, F, base).critic.item() for F in states]

    def actor_term(params):
        if kind == "coarse":
            outs = [_forward(kind, ctx, F, params) for F in states]
            return (-sum(o.actor.value[a] * (R[t] - v0[t]) for t, (o, a) in enumerate(zip(outs, actions)))
                    + alpha * sum((R[t] - o.critic.item()) ** 2 for t, o in enumerate(outs)))
        total = 0.0
        for t, (F, a) in enumerate(zip(states, actions)):
            swap = EDGE_SIDE_SWAP if F.shape[1] == 5 else VERTEX_SIDE_SWAP
            mf = EDGE_MASK_FEATURES if F.shape[1] == 5 else VERTEX_MASK_FEATURES
            lp = refine_agent_forward(ctx, F, mf, params, training=False, side_swap=swap).actor.value
            total -= lp[a] * (R[t] - v0[t])
        return total

    def critic_term(params):
        return alpha * sum((R[t] - _forward(kind, ctx, F, params).critic.item()) ** 2
                           for t, F in enumerate(states))

    numeric = []
    for name in store.shapes:
        fn = actor_term
        if kind != "coarse" and _is_critic_param(kind, name):
            fn = critic_term
        flat = base[name].value.reshape(-1)
        for i in range(flat.size):
            vals = []
            for d in (h, -h):
                params = dict(base)
                pert = flat.copy()
                pert[i] += d
                params[name] = Tensor(pert.reshape(base[name].shape))
                vals.append(fn(params))
            numeric.append((vals[0] - vals[1]) / (2 * h))
    numeric = np.array(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
