"""Deployment configuration shared by dealer, parties, clients, and bench.

A deployment is described by a line-based ``key=value`` file; all principals
must load byte-identical protocol parameters or the HELLO handshake refuses
the connection.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ConfigError
from .field import Field, PRODUCTION_MODULUS

MODE_SEMI_HONEST = "semi-honest"
MODE_AUTHENTICATED = "authenticated"
MODES = (MODE_SEMI_HONEST, MODE_AUTHENTICATED)

# Ceiling on time-to-treatment-failure in days. With at most 10^5 per record
# and desk-scale databases, sums stay far below either supported modulus, so
# aggregation is integer-exact (no field wrap).
TTF_MAX = 100_000


@dataclass(frozen=True)
class ProtocolConfig:
    """Cryptographic parameters every principal must agree on."""

    field: Field
    mode: str = MODE_SEMI_HONEST
    kappa: int = 40
    n_parties: int = 2
    corruption_tolerance: int = 1

    def __post_init__(self):
        if self.n_parties != 2:
            raise ConfigError(f"only n_parties=2 is supported, got {self.n_parties}")
        if not 0 < self.corruption_tolerance < self.n_parties:
            raise ConfigError("corruption tolerance must satisfy 0 < t < n")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.kappa < 1:
            raise ConfigError("kappa must be at least 1")

    @property
    def authenticated(self) -> bool:
        return self.mode == MODE_AUTHENTICATED


@dataclass(frozen=True)
class SystemConfig:
    """One CDSS deployment: protocol parameters plus the medical data model."""

    protocol: ProtocolConfig
    n_bits: int            # genotype length N
    n_treatments: int      # treatment count T
    threshold_b: int       # public similarity threshold B
    max_queries_per_client: int = 100
    timeout_secs: float = 30.0
    party0_addr: str = "127.0.0.1:9100"
    party1_addr: str = "127.0.0.1:9101"

    def __post_init__(self):
        if self.n_bits < 1 or self.n_bits > 0xFFFF:
            raise ConfigError(f"n_bits out of range: {self.n_bits}")
        if self.n_treatments < 1 or self.n_treatments > 0xFFFF:
            raise ConfigError(f"n_treatments out of range: {self.n_treatments}")
        if not 0 <= self.threshold_b <= self.n_bits:
            raise ConfigError(
                f"threshold_b must lie in [0, n_bits]: got {self.threshold_b}"
            )
        if self.max_queries_per_client < 1:
            raise ConfigError("max_queries_per_client must be at least 1")
        if self.timeout_secs <= 0:
            raise ConfigError("timeout_secs must be positive")

    @property
    def comparison_bit_length(self) -> int:
        # ceil(log2(N+1)); equals N.bit_length() for every N >= 1
        return self.n_bits.bit_length()

    def validate_for_queries(self) -> None:
        """The comparison gadget needs p > 2^(l+kappa+2) so its masked
        opening embeds in Z_p without wrap."""
        ell = self.comparison_bit_length
        bound = 1 << (ell + self.protocol.kappa + 2)
        if self.protocol.field.p <= bound:
            raise ConfigError(
                f"modulus {self.protocol.field.p} too small for "
                f"bit-length {ell} and kappa {self.protocol.kappa}"
            )


_REQUIRED_KEYS = (
    "modulus",
    "n_bits",
    "n_treatments",
    "threshold_b",
    "kappa",
    "mode",
    "max_queries_per_client",
    "timeout_secs",
)
_OPTIONAL_KEYS = ("party0_addr", "party1_addr")


def parse_config(text: str) -> SystemConfig:
    """Parse the line-based ``key=value`` deployment file."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = key.strip(), value.strip()
        if key not in _REQUIRED_KEYS and key not in _OPTIONAL_KEYS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        raw[key] = value
    missing = [k for k in _REQUIRED_KEYS if k not in raw]
    if missing:
        raise ConfigError(f"config missing keys: {', '.join(missing)}")

    def as_int(key: str) -> int:
        try:
            return int(raw[key])
        except ValueError:
            raise ConfigError(f"config key {key!r} must be an integer") from None

    try:
        timeout = float(raw["timeout_secs"])
    except ValueError:
        raise ConfigError("config key 'timeout_secs' must be numeric") from None

    protocol = ProtocolConfig(
        field=Field(as_int("modulus")),
        mode=raw["mode"],
        kappa=as_int("kappa"),
    )
    kwargs = {}
    for key in _OPTIONAL_KEYS:
        if key in raw:
            kwargs[key] = raw[key]
    return SystemConfig(
        protocol=protocol,
        n_bits=as_int("n_bits"),
        n_treatments=as_int("n_treatments"),
        threshold_b=as_int("threshold_b"),
        max_queries_per_client=as_int("max_queries_per_client"),
        timeout_secs=timeout,
        **kwargs,
    )


def render_config(cfg: SystemConfig) -> str:
    lines = [
        f"modulus={cfg.protocol.field.p}",
        f"n_bits={cfg.n_bits}",
        f"n_treatments={cfg.n_treatments}",
        f"threshold_b={cfg.threshold_b}",
        f"kappa={cfg.protocol.kappa}",
        f"mode={cfg.protocol.mode}",
        f"max_queries_per_client={cfg.max_queries_per_client}",
        f"timeout_secs={cfg.timeout_secs:g}",
        f"party0_addr={cfg.party0_addr}",
        f"party1_addr={cfg.party1_addr}",
    ]
    return "\n".join(lines) + "\n"


def load_config(path: str | Path) -> SystemConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def save_config(cfg: SystemConfig, path: str | Path) -> None:
    Path(path).write_text(render_config(cfg))


def with_mode(cfg: SystemConfig, mode: str) -> SystemConfig:
    """Same deployment with the protocol mode swapped (test convenience)."""
    return replace(cfg, protocol=replace(cfg.protocol, mode=mode))


def default_config() -> SystemConfig:
    """Production-shaped defaults: 128-bit field, N=128, T=16."""
    return SystemConfig(
        protocol=ProtocolConfig(field=Field(PRODUCTION_MODULUS, check_primality=False)),
        n_bits=128,
        n_treatments=16,
        threshold_b=12,
    )
