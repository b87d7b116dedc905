"""Label generation and detection features for security data sets.

Operator-domain pivoting labels malware and host pairs. The traffic tools
score stealth port scans, lateral-movement paths and bind/reverse shell
candidates. Further modules cover byte n-gram histograms, evaluation under
heavy class imbalance, and seeded synthetic corpora with ground truth.
"""
from .datamodel import (
    CommunicationRecord,
    FileRecord,
    FormatError,
    HostSignature,
    NgramHistogram,
    PairLabel,
    TrafficSession,
    Verdict,
    VerdictRecord,
    to_absolute_time,
)
from .pivoting import PivotConfig, label_host_pairs, label_malware_pairs, OperatorPairLabeler
from .traffic import AccessPathScorer, PortScanScorer, SessionBucketizer, bucketize
from .bindshell import BindShellFeaturizer, pair_connections, compute_candidate_features
from .ngrams import NgramExtractor, extract_ngrams, marginalize_prefix
from .evaluation import precision_at_k, precision_lift

__version__ = "0.1.0"
