"""Privacy-preserving clinical decision support over secret-shared records.

Two non-colluding computing parties hold additive shares of HIV patient
records and jointly compute, per treatment, the count and summed
time-to-treatment-failure over records whose genotype is Hamming-close to a
secret query genotype; only the querying clinician learns the aggregates.
"""

from .config import (
    MODE_AUTHENTICATED,
    MODE_SEMI_HONEST,
    ProtocolConfig,
    SystemConfig,
    TTF_MAX,
    load_config,
    save_config,
)
from .dealer import Budget, Counts, TripleStore, budget_for_query, deal_preprocessing
from .engine import ProtocolSession
from .field import (
    EXHAUSTIVE_TEST_MODULUS,
    Field,
    PRODUCTION_MODULUS,
    TEST_MODULUS,
)
from .query import (
    PatientRecordPlain,
    QueryResultPlain,
    encode_genotype,
    evaluate_query,
    finalize_result,
    plaintext_oracle,
    rank_treatments,
)
from .sharing import (
    AuthenticatedShare,
    GlobalMacKey,
    ShareVector,
    reconstruct,
    share_secret,
)

__version__ = "0.1.0"

__all__ = [
    "AuthenticatedShare",
    "Budget",
    "Counts",
    "EXHAUSTIVE_TEST_MODULUS",
    "Field",
    "GlobalMacKey",
    "MODE_AUTHENTICATED",
    "MODE_SEMI_HONEST",
    "PRODUCTION_MODULUS",
    "PatientRecordPlain",
    "ProtocolConfig",
    "ProtocolSession",
    "QueryResultPlain",
    "ShareVector",
    "SystemConfig",
    "TEST_MODULUS",
    "TTF_MAX",
    "TripleStore",
    "budget_for_query",
    "deal_preprocessing",
    "encode_genotype",
    "evaluate_query",
    "finalize_result",
    "load_config",
    "plaintext_oracle",
    "rank_treatments",
    "reconstruct",
    "save_config",
    "share_secret",
]
