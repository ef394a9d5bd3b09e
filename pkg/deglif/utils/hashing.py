"""
Config hashing for run manifests.
"""

import hashlib
import json
from typing import Any, Dict


def config_hash(payload: Dict[str, Any]) -> str:
    """
    Hash the result-determining part of an experiment config.

    Two configs that would produce the same runs hash the same: keys are
    sorted, floats serialize with repr precision and an infinite threshold
    serializes as ``Infinity``. Callers pass ``semantic_payload()``, which
    already leaves out ``output_dir``.

    Returns:
        str: SHA-256 hex digest recorded as ``config_hash`` in manifest.json.
    """
    serialized = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(serialized.encode("utf-8")).hexdigest()
