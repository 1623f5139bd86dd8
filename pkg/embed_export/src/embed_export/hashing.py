"""Deterministic pseudo-embeddings from token-set hashing.

Every token maps to a fixed pseudo-random direction derived from a SHA-256
stream keyed by (seed, token); a sentence embeds as the normalized sum of
its token directions. No RNG state is involved, so the same sentence gives
bit-identical vectors on any machine.
"""

from __future__ import annotations

import hashlib
import re
import struct

import numpy as np

_TOKEN_RE = re.compile(r"[a-z]+")


def tokens_of(sentence: str) -> frozenset:
    return frozenset(_TOKEN_RE.findall(sentence.lower()))


def _hash_floats(key: str, dim: int) -> np.ndarray:
    """dim floats in [-1, 1) from SHA-256 in counter mode."""
    out = np.empty(dim)
    produced = 0
    block = 0
    while produced < dim:
        digest = hashlib.sha256(f"{key}:{block}".encode()).digest()
        for chunk_start in range(0, 32, 8):
            if produced >= dim:
                break
            (value,) = struct.unpack_from("<Q", digest, chunk_start)
            out[produced] = value / 2.0**63 - 1.0
            produced += 1
        block += 1
    return out


def hash_embed(sentence: str, dim: int, seed: int = 0) -> np.ndarray:
    """Unit-norm embedding of a sentence's token set."""
    toks = tokens_of(sentence)
    if not toks:
        vec = _hash_floats(f"{seed}|raw|{sentence}", dim)
    else:
        vec = np.zeros(dim)
        for tok in sorted(toks):
            vec += _hash_floats(f"{seed}|tok|{tok}", dim)
    norm = np.linalg.norm(vec)
    if norm == 0.0:  # cancellation is astronomically unlikely; stay safe
        vec = np.zeros(dim)
        vec[0] = 1.0
        return vec
    return vec / norm
