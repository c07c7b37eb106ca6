import hmac
import json
import hashlib
from typing import Any, Mapping

import torch


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(',', ':'), ensure_ascii=True)


def digest(data: Any) -> str:
    return hashlib.sha256(canonical_json(data).encode()).hexdigest()


def tensors_digest(metadata: Mapping[str, Any], tensors: Mapping[str, torch.Tensor]) -> str:
    """SHA-256 over the metadata JSON followed by every tensor's raw bytes in sorted key order."""
    hasher = hashlib.sha256(canonical_json(metadata).encode())

    for key in sorted(tensors):
        tensor = tensors[key].detach().cpu().contiguous()
        hasher.update(key.encode())
        hasher.update(str(tuple(tensor.shape)).encode())
        hasher.update(str(tensor.dtype).encode())
        hasher.update(tensor.numpy().tobytes())

    return hasher.hexdigest()


def verify_digest(expected: str, actual: str) -> bool:
    return hmac.compare_digest(expected, actual)
