"""Secure aggregation for cross-silo federated learning.

Two cooperating protocols over a star topology of N clients and one server:

* per-epoch model aggregation, where clients upload quantized updates hidden
  under masks expanded from a seed-homomorphic PRG, and
* a seed-agreement protocol that uses compact multi-key BFV to hand every
  client the sum of all masking seeds for a batch of future epochs, without
  revealing any individual seed.

Plus a deterministic in-process simulation harness that runs whole sessions,
accounts every byte and round, audits colluder views, and drives a toy
federated-averaging trainer.
"""

from . import bfv, codec, harness, mkbfv, protocol, ring, shprg

__all__ = ["bfv", "codec", "harness", "mkbfv", "protocol", "ring", "shprg"]

__version__ = "0.1.0"
