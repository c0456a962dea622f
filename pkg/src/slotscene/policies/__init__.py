from .common import EncodedTrajectories, PolicyArtifact, encode_trajectories
from .bc import bc_predict, bc_train
from .iql import IQLNets, expectile_loss, iql_train, iql_update, transitions_from_set

__all__ = [
    "EncodedTrajectories",
    "PolicyArtifact",
    "encode_trajectories",
    "bc_predict",
    "bc_train",
    "expectile_loss",
    "IQLNets",
    "iql_train",
    "iql_update",
    "transitions_from_set",
]
