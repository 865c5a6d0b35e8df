"""End-to-end simulator: HSM actors, the untrusted provider and clients."""

from .client import Client, ClientCrash
from .datacenter import Datacenter
from .hsm import Hsm, HsmSecrets
from .messages import Opening, RecoveryReply, RecoveryRequest, log_id
from .provider import ADVERSARY_MODES, Provider
from .router import Router

__all__ = ["Client", "ClientCrash", "Datacenter", "Hsm", "HsmSecrets", "Opening",
           "RecoveryReply", "RecoveryRequest", "log_id", "ADVERSARY_MODES", "Provider", "Router"]
