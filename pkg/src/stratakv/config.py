"""Store configuration and the text config file format.

All tunables live in one place. The on-disk representation is a small
TOML file with a single ``[store]`` table; every field is optional and
falls back to the documented default.
"""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

DEFAULT_BLOCK_SIZE = 32768
DEFAULT_CHUNK_BYTES = 10 * 1024 * 1024
DEFAULT_CAPACITY_BLOCKS = 262144  # 8 GiB of 32 KiB blocks
DEFAULT_BLOOM_BITS_PER_KEY = 10
DEFAULT_BLOOM_HASHES = 7
DEFAULT_FLUSH_ENTRIES = 4096
DEFAULT_MIN_DENSITY = Fraction(1, 3)


def _parse_fraction(raw) -> Fraction:
    """Accept '1/3', '0.25', ints and floats; floats go through str() so
    that '0.1' means one tenth, not the nearest binary double."""
    if isinstance(raw, Fraction):
        return raw
    if isinstance(raw, int):
        return Fraction(raw)
    if isinstance(raw, float):
        return Fraction(str(raw))
    return Fraction(str(raw).strip())


@dataclass(frozen=True)
class StoreConfig:
    block_size: int = DEFAULT_BLOCK_SIZE
    capacity_blocks: int = DEFAULT_CAPACITY_BLOCKS
    chunk_bytes: int = DEFAULT_CHUNK_BYTES
    bloom_bits_per_key: int = DEFAULT_BLOOM_BITS_PER_KEY
    bloom_hashes: int = DEFAULT_BLOOM_HASHES
    flush_entries: int = DEFAULT_FLUSH_ENTRIES
    min_density: Fraction = field(default=DEFAULT_MIN_DENSITY)
    # recheck the density floor of every array as it is written (slow;
    # used by invariant-hunting test runs)
    paranoid_density_checks: bool = False

    def __post_init__(self):
        if self.block_size < 512:
            raise ValueError("block_size must be at least 512 bytes")
        if not 0 < self.min_density <= Fraction(1, 2):
            raise ValueError("min_density must lie in (0, 1/2]")
        if self.flush_entries < 1:
            raise ValueError("flush_entries must be positive")

    @property
    def chunk_blocks(self) -> int:
        return max(1, self.chunk_bytes // self.block_size)

    def with_overrides(self, **kwargs) -> "StoreConfig":
        if "min_density" in kwargs:
            kwargs["min_density"] = _parse_fraction(kwargs["min_density"])
        return replace(self, **kwargs)


_FIELDS = (
    "block_size",
    "capacity_blocks",
    "chunk_bytes",
    "bloom_bits_per_key",
    "bloom_hashes",
    "flush_entries",
    "min_density",
    "paranoid_density_checks",
)


def load_config(path: str | Path) -> StoreConfig:
    """Load a StoreConfig from a TOML file; absent keys keep defaults."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    table = data.get("store", data)
    overrides = {k: table[k] for k in _FIELDS if k in table}
    return StoreConfig().with_overrides(**overrides)


def dump_config(config: StoreConfig) -> str:
    """Render a config as the TOML accepted by load_config."""
    lines = ["[store]"]
    for name in _FIELDS:
        value = getattr(config, name)
        if isinstance(value, Fraction):
            lines.append(f'{name} = "{value}"')
        elif isinstance(value, bool):
            lines.append(f"{name} = {'true' if value else 'false'}")
        else:
            lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"
