"""Tokenized graph transformer for node classification on large graphs."""
from .errors import (CacheError, ConfigError, GraphFormatError, HopformerError, NumericalError,
                     ShapeError, ValidationError)
from .graph import CsrGraph, NormalizedAdjacency, load_graph, normalize, save_graph, spmm
from .hop2token import TokenStore, TokenTensor, hop2token, load_tokens, open_tokens, save_tokens
from .model import (ModelConfig, NAGphormer, fixed_attention_forward, load_checkpoint, node_loss,
                    readout, save_checkpoint)
from .nraug import AugConfig, Batch, gna, lna
from .spectral import StructuralEncoding, concat_features, laplacian_eigvecs
from .training import (Metrics, TrainConfig, decoupled_gcn_oracle, evaluate, split_nodes,
                       train)

__version__ = "0.1.0"

__all__ = [
    "AugConfig", "Batch", "CacheError", "ConfigError", "CsrGraph", "GraphFormatError",
    "HopformerError", "Metrics", "ModelConfig", "NAGphormer", "NormalizedAdjacency",
    "NumericalError", "ShapeError", "StructuralEncoding", "TokenStore", "TokenTensor",
    "TrainConfig", "ValidationError", "concat_features", "decoupled_gcn_oracle", "evaluate",
    "fixed_attention_forward", "gna", "hop2token", "laplacian_eigvecs", "lna", "load_checkpoint",
    "load_graph", "load_tokens", "normalize", "node_loss", "open_tokens", "readout",
    "save_checkpoint", "save_graph", "save_tokens", "spmm", "split_nodes", "train",
]
