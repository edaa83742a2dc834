from .io import arrays_checksum, atomic_write_text
from .seeding import derive_seed, make_rng

__all__ = ["arrays_checksum", "atomic_write_text", "derive_seed", "make_rng"]
