"""Coded model distribution and aggregation for cross-silo federated learning."""
from .coding import Decoder, EncodedBlock, Offer, OriginKind, aggregate_blocks, \
    agreed_coefficients, cauchy_coefficients, encode, random_coefficients, split
from .redundancy import RedundancyState, controller_init, controller_update

__version__ = "0.1.0"

__all__ = ["Decoder", "EncodedBlock", "Offer", "OriginKind", "RedundancyState",
           "aggregate_blocks", "agreed_coefficients", "cauchy_coefficients", "controller_init",
           "controller_update", "encode", "random_coefficients", "split"]
