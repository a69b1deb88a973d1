from .entropy import EntropyController, annealed_target, update_alpha
from .losses import loss_sac_policy, loss_sac_q, loss_ssl_policy, loss_ssl_value, soft_q_target
from .network import (
    Dense,
    Network,
    forward_policy,
    forward_q,
    forward_value,
    policy_network,
    q_network,
    value_network,
)
from .optim import Adam, optimizer_step, polyak_update
