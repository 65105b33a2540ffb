from .activations import dsilu, get_activation, identity, shifted_sigmoid, softmax
from .energy import cross_entropy, hopfield_energy, hopfield_weight_grad, total_energy
from .network import ConvConnection, DenseConnection, Network, NetworkSpec, NetworkState
from .pooling import PoolCache, softmax_pool, softmax_unpool
from .toy import ScalarToy


def build_model(spec):
    """Model for a :class:`NetworkSpec`, or the scalar toy for ``spec is None``."""
    return ScalarToy() if spec is None else Network(spec)


__all__ = [
    "ConvConnection", "DenseConnection", "Network", "NetworkSpec", "NetworkState", "PoolCache",
    "ScalarToy", "build_model", "cross_entropy", "dsilu", "get_activation", "hopfield_energy",
    "hopfield_weight_grad", "identity", "shifted_sigmoid", "softmax", "softmax_pool",
    "softmax_unpool", "total_energy",
]
