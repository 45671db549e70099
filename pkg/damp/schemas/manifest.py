"""
Manifest Schemas: everything besides tensors needed to rebuild a checkpoint.
"""
from pydantic import BaseModel, Field

from damp.schemas.model import Hyperparams
from damp.schemas.train import Phase, Strategy

MANIFEST_VERSION = 1


class ModelManifest(BaseModel):
    version: int = MANIFEST_VERSION
    strategy: Strategy
    hyperparams: Hyperparams
    seed: int = 0

    # Vocabularies, reserved tokens included, in index order
    utterance_vocab: list[str]
    sketch_vocab: list[str]
    lf_vocab: list[str]

    # Domains by id
    domains: list[str]
    target_domain: int = Field(ge=0)
    source_domains: list[str] = []
    share_table: dict[str, list[int]] = {}

    # Relevance; vectors live in the archive under frozen.relevance.*
    relevance_words: list[str] = []
    relevance_queries: dict[str, list[str]] = {}

    max_sketch_len: int = Field(default=1, gt=0)
    max_lf_len: int = Field(default=1, gt=0)

    # Training progress
    epoch: int = 0
    phase: Phase = "joint"
    phase_start_epoch: int = 1
    best_epoch: int = 0
    best_dev_lf_em: float = 0.0
    bad_epochs: int = 0

    @property
    def target_name(self) -> str:
        return self.domains[self.target_domain]
