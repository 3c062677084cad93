"""Herald: NL-FL parallel dataset tooling for Lean 4 corpora."""

from .records import (
    CorpusIndex,
    DeclarationRecord,
    DeclKind,
    NeighborSet,
    ProofState,
    ProofStep,
)

__version__ = "0.1.0"

__all__ = [
    "CorpusIndex",
    "DeclarationRecord",
    "DeclKind",
    "NeighborSet",
    "ProofState",
    "ProofStep",
    "__version__",
]
