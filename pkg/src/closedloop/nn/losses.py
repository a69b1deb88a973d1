"""Learner losses with analytic gradients.

Every function returns ``(loss, grads, info)`` where ``grads`` maps the
network's parameter names to arrays (a list of such maps for twin Q-nets).
"""

from __future__ import annotations

import numpy as np

from .network import Network, log_softmax, sigmoid, softmax


def policy_entropy(probs: np.ndarray) -> np.ndarray:
    logp = np.log(np.clip(probs, 1e-300, None))
    return -(probs * logp).sum(axis=-1)


def loss_ssl_policy(net: Network, x, actions, alpha: float):
    """Cross-entropy to planner actions minus alpha times policy entropy, batch-averaged."""
    x = np.atleast_2d(x)
    actions = np.asarray(actions, dtype=int)
    n = len(actions)
    out, cache = net.forward(x)
    z = out["logits"]
    logp = log_softmax(z)
    p = np.exp(logp)
    ent = -(p * logp).sum(axis=1)
    nll = -logp[np.arange(n), actions]
    loss = float(np.mean(nll - alpha * ent))

    dz = p.copy()
    dz[np.arange(n), actions] -= 1.0
    # d(-alpha H)/dz_j = alpha * p_j * (log p_j + H)
    dz += alpha * p * (logp + ent[:, None])
    dz /= n
    grads = net.backward(cache, {"logits": dz})
    return loss, grads, {"entropy": float(ent.mean()), "nll": float(nll.mean())}


def loss_ssl_value(net: Network, x, v_safe, v_collision):
    """Mask MSE against nonzero indicators plus indicator-gated value MSE.

    Labels are expected on the network's (normalized) scale.
    """
    x = np.atleast_2d(x)
    labels = np.stack([np.asarray(v_safe, float), np.asarray(v_collision, float)], axis=1)
    n = len(labels)
    ind = (labels != 0.0).astype(float)
    out, cache = net.forward(x)
    m = sigmoid(out["mask"])
    v = out["value"]
    mask_err = m - ind
    value_err = ind * v - labels
    l_mask = float((mask_err**2).sum() / n)
    l_value = float((value_err**2).sum() / n)
    d_mask = 2.0 * mask_err * m * (1.0 - m) / n
    d_value = 2.0 * value_err * ind / n
    grads = net.backward(cache, {"mask": d_mask, "value": d_value})
    return l_mask + l_value, grads, {"mask": l_mask, "value": l_value}


def min_q(q_nets, x) -> np.ndarray:
    return np.minimum(*[q.forward(x)[0]["q"] for q in q_nets]) if len(q_nets) > 1 else q_nets[0].forward(x)[0]["q"]


def loss_sac_policy(net: Network, q_nets, x, alpha: float):
    """E_x[ pi(x)^T (alpha log pi(x) - Q(x)) ] with the exact sum over actions.

    Q is the elementwise minimum over ``q_nets`` and is held constant.
    """
    x = np.atleast_2d(x)
    n = x.shape[0]
    q = min_q(q_nets, x)
    out, cache = net.forward(x)
    logp = log_softmax(out["logits"])
    p = np.exp(logp)
    f = alpha * logp - q
    per = (p * f).sum(axis=1)
    loss = float(per.mean())
    dz = p * (f - per[:, None]) / n
    grads = net.backward(cache, {"logits": dz})
    ent = -(p * logp).sum(axis=1)
    return loss, grads, {"entropy": float(ent.mean())}


def soft_q_target(target_q_nets, policy_net: Network, rewards, x_next, done, alpha: float, gamma: float):
    rewards = np.asarray(rewards, float)
    done = np.asarray(done, float)
    x_next = np.atleast_2d(x_next)
    logp = log_softmax(policy_net.forward(x_next)[0]["logits"])
    p = np.exp(logp)
    q_next = min_q(target_q_nets, x_next)
    v_next = (p * (q_next - alpha * logp)).sum(axis=1)
    return rewards + gamma * (1.0 - done) * v_next


def loss_sac_q(q_nets, target_q_nets, policy_net: Network, x, actions, rewards, x_next, done, alpha, gamma):
    """Sum over twin critics of the batch MSE to the soft Bellman target."""
    x = np.atleast_2d(x)
    actions = np.asarray(actions, dtype=int)
    n = len(actions)
    y = soft_q_target(target_q_nets, policy_net, rewards, x_next, done, alpha, gamma)
    loss = 0.0
    grads = []
    for q in q_nets:
        out, cache = q.forward(x)
        pred = out["q"][np.arange(n), actions]
        err = pred - y
        loss += float(np.mean(err**2))
        d = np.zeros_like(out["q"])
        d[np.arange(n), actions] = 2.0 * err / n
        grads.append(q.backward(cache, {"q": d}))
    return loss, grads, {"target": y}


__all__ = [
    "loss_ssl_policy",
    "loss_ssl_value",
    "loss_sac_policy",
    "loss_sac_q",
    "soft_q_target",
    "policy_entropy",
    "softmax",
]
