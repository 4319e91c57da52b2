"""Self-contained leveled CKKS over an RNS modulus chain."""

from .params import PRESET_NAMES, CkksParams, ParamError, preset
from .scheme import (Ciphertext, CkksContext, CkksError, EvaluationKeys, KeySwitchKey,
                     MissingKeyError, OpStats, Plaintext, PublicKey, SecretKey, count_ops)
from .serialize import (SerializationError, ciphertext_from_bytes, ciphertext_to_bytes,
                        eval_keys_from_bytes, eval_keys_to_bytes, params_from_bytes,
                        params_to_bytes, plaintext_from_bytes, plaintext_to_bytes,
                        public_key_from_bytes, public_key_to_bytes, secret_key_from_bytes,
                        secret_key_to_bytes)

__all__ = [
    "PRESET_NAMES", "CkksParams", "ParamError", "preset",
    "Ciphertext", "CkksContext", "CkksError", "EvaluationKeys", "KeySwitchKey",
    "MissingKeyError", "OpStats", "Plaintext", "PublicKey", "SecretKey", "count_ops",
    "SerializationError", "ciphertext_from_bytes", "ciphertext_to_bytes",
    "eval_keys_from_bytes", "eval_keys_to_bytes", "params_from_bytes", "params_to_bytes",
    "plaintext_from_bytes", "plaintext_to_bytes", "public_key_from_bytes",
    "public_key_to_bytes", "secret_key_from_bytes", "secret_key_to_bytes",
]
