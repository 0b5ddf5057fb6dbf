"""
Seed derivation. Records of a simulation (and batches of a training run) get their own random generator that
only depends on the master seed and the index, so that parallel and serial runs produce identical results.
"""
import hashlib

import numpy as np


def derive_seed(master_seed: int, *indices: int) -> int:
    """
    Derives a 63 bit seed from the master seed and any number of indices (sha256 based, platform independent)

    :param master_seed: seed of the whole run
    :param indices: i.e. the record index
    :return: derived seed
    """
    text = ':'.join(str(int(x)) for x in (master_seed,) + indices)
    digest = hashlib.sha256(text.encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'little') >> 1


def derive_rng(master_seed: int, *indices: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *indices))
