"""Layered sparse ternary codes with ambiguization for privacy-preserving identification."""
from .errors import (
    AuthorizationError,
    FormatError,
    InvalidArgument,
    NumericError,
    ProtocolError,
)
from .kernels import BACKEND
from .stc import (
    LearningConfig,
    Transform,
    code_rate,
    decode,
    encode,
    fit_gain,
    hard_threshold,
    learn_transform,
    ternarize,
)
from .layered import LayerSpec, LayeredCodebooks, build_layers, layer_rates, reconstruct_item
from .privacy import (
    AmbiguizationConfig,
    PublicBundle,
    ambiguize_code,
    ambiguize_codebook,
    ambiguize_query,
    select_subspace,
)
from .search import CandidateList, ScorePair, build_index, query_index, score, threshold_list, top_gamma
from .pipeline import (
    OwnerAssets,
    PrivateQuery,
    RefinementThresholds,
    SearchRule,
    client_query,
    owner_prepare,
    private_refine,
    public_search,
)

__version__ = "0.1.0"
