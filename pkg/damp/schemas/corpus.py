"""
Corpus Schemas: domains, parallel instances and adaptation splits.
"""
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Domain(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1)
    id: int = Field(ge=0)


class Instance(BaseModel):
    """One (domain, utterance, logical form) triple."""

    model_config = ConfigDict(frozen=True)

    domain: int = Field(ge=0)
    utterance: tuple[str, ...] = Field(min_length=1)
    logical_form: tuple[str, ...] = Field(min_length=1)

    @field_validator("utterance", "logical_form")
    @classmethod
    def _check_tokens(cls, tokens: tuple[str, ...]) -> tuple[str, ...]:
        for token in tokens:
            if not token or any(ch.isspace() for ch in token):
                raise ValueError(f"invalid token {token!r}")
        return tokens


class AdaptationDataset(BaseModel):
    model_config = ConfigDict(frozen=True)

    domains: tuple[Domain, ...]
    target_domain: int
    source_train: tuple[Instance, ...] = ()
    source_dev: tuple[Instance, ...] = ()
    target_train: tuple[Instance, ...] = ()
    target_dev: tuple[Instance, ...] = ()
    target_test: tuple[Instance, ...] = ()
    target_fraction: float = 0.10
    seed: int = 0

    @model_validator(mode="after")
    def _check_membership(self) -> "AdaptationDataset":
        for name in ("source_train", "source_dev"):
            if any(i.domain == self.target_domain for i in getattr(self, name)):
                raise ValueError(f"{name} holds target-domain instances")
        for name in ("target_train", "target_dev", "target_test"):
            if any(i.domain != self.target_domain for i in getattr(self, name)):
                raise ValueError(f"{name} holds source-domain instances")
        return self

    @property
    def target(self) -> Domain:
        return self.domains[self.target_domain]

    @property
    def source_domains(self) -> tuple[Domain, ...]:
        return tuple(d for d in self.domains if d.id != self.target_domain)

    @property
    def evaluation_split(self) -> tuple[Instance, ...]:
        return self.target_test or self.target_dev

    def all_instances(self) -> tuple[Instance, ...]:
        return (
            self.source_train + self.source_dev + self.target_train
            + self.target_dev + self.target_test
        )
