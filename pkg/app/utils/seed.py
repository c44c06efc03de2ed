import hashlib
import json

import numpy as np

SeedLike = int | np.random.Generator

# Philox keys are taken modulo 2**64
_MASK = (1 << 64) - 1


class SeedUtils:
    @staticmethod
    def derive(base_seed: int, *tags) -> int:
        """64-bit key from a base seed and a tuple of tags.

        Tags are hashed by value, so adding a new method or grid point never
        shifts the streams of the existing ones.
        """
        payload = json.dumps([int(base_seed) & _MASK, *[str(t) for t in tags]])
        digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")

    @staticmethod
    def generator(seed: SeedLike, *tags) -> np.random.Generator:
        """Counter-based generator for ``derive(seed, *tags)``.

        A Generator passed without tags is returned as is.
        """
        if isinstance(seed, np.random.Generator):
            if not tags:
                return seed
            seed = int(seed.integers(0, 1 << 63))
        key = SeedUtils.derive(seed, *tags) if tags else int(seed) & _MASK
        return np.random.Generator(np.random.Philox(key=key))
