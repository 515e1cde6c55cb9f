"""Polynomial networks (CCP, NCP, NCP-Skip) with exact verification oracles."""
from pinet.polynet import (BlockSpec, CCPParams, ModelSpec, NCPParams, NCPSkipParams,
                           NormalizationSpec, PolyBlock, PolyChain, SimpleSingleOpParams,
                           ccp_forward, chain_forward, count_params, init_params,
                           ncp_forward, ncp_skip_forward, polynomialize_residual,
                           random_model, simple_single_op_forward)
from pinet.oracle import (MultiPoly, WeightTensorSet, build_ccp_tensors, build_ncp_tensors,
                          degree_check, equivalence_check, explicit_eval, symbolic_expand)

__version__ = "0.1.0"
