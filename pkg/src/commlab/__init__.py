"""Number-in-hand communication protocols, streaming simulations and L0 sketches."""

__version__ = "0.1.0"

from .core import (CRS, DETERMINISTIC, PRIVATE, Coins, CostReport, FunctionTable,  # noqa: E402
                   InputPartition, Message, OneWayProtocol, ProductDistribution,
                   builtin_function, measure_error, oneway_dcc2_oracle, run_protocol)
from .errors import (CommLabError, ConfigurationError, EngineViolation,  # noqa: E402
                     EnumerationCapError, OutsideRegimeWarning, PreconditionError,
                     StrictTurnstileViolation)
from .l0stream import (EmbeddingPlan, L0Sketch, TurnstileStream, decode_top_layer,  # noqa: E402
                       embed_ghse_layers, exact_l0, l0_estimate)
from .numeric import ExactDist, statistical_distance, two_point_decompose  # noqa: E402
from .reductions import GhseInstance, augindex_to_ghse, hse_evaluate  # noqa: E402
from .simulate import (AmplifierPlan, amplify_majority, det_stream_from_two_party,  # noqa: E402
                       k_from_two_simulation)
from .sumequal import (equality_fingerprint_protocol, sumequal_exact_protocol,  # noqa: E402
                       sumequal_fingerprint_protocol)
