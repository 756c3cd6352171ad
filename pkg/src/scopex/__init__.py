"""Staged question answering over text-generation backends: direct query, stored-method reuse, question extension and method borrowing."""

from .entropy import (
    Distribution,
    EntropyReport,
    JointTable,
    coverage_entropy,
    entropy,
    entropy_gain,
    entropy_report,
    extension_weights,
    information_gain,
    is_independent,
    joint_entropy,
    kl_divergence,
    mutual_information,
    network_entropy,
)
from .errors import ScopexError
from .extensions import (
    ExtendedQuestion,
    Extension,
    ExtensionRegistry,
    compose,
    extend_horizontal,
    extend_spatial,
    extend_temporal,
    extend_vertical,
    generalize,
    scatter,
)
from .gateway import GenerationRequest, HttpBackend, ScriptedBackend, ScriptedBackendConfig
from .network import (
    KnowledgeEdge,
    KnowledgeNetwork,
    KnowledgeNode,
    KnowledgeTree,
    extension_sets,
    merge,
    reachable,
    tree_from_extension,
)
from .orchestrator import Orchestrator, OrchestratorConfig, ReasoningTrace
from .store import Method, MethodStore, RetrievalHit, distance, similarity

__version__ = "0.1.0"
