"""
Evaluation Schemas: parse results, predictions, reports and sweep rows.
"""
from typing import ClassVar

from pydantic import BaseModel, Field, computed_field


class ParseResult(BaseModel):
    sketch: tuple[str, ...] = ()
    logical_form: tuple[str, ...] = ()
    fallback: bool = False  # predicted sketch unusable, fine stage decoded unconstrained
    score: float = 0.0


class Prediction(BaseModel):
    domain: str
    utterance: tuple[str, ...]
    predicted_sketch: tuple[str, ...]
    predicted_lf: tuple[str, ...]
    oracle_lf: tuple[str, ...] = ()
    gold_sketch: tuple[str, ...] = ()
    gold_lf: tuple[str, ...]
    fallback: bool = False

    COLUMNS: ClassVar[tuple[str, ...]] = (
        "domain", "utterance", "predicted_sketch", "predicted_lf", "gold_lf", "match", "fallback",
    )

    @property
    def match(self) -> bool:
        return self.predicted_lf == self.gold_lf

    def to_row(self) -> list[str]:
        return [
            self.domain,
            " ".join(self.utterance),
            " ".join(self.predicted_sketch),
            " ".join(self.predicted_lf),
            " ".join(self.gold_lf),
            str(int(self.match)),
            str(int(self.fallback)),
        ]


class DomainScore(BaseModel):
    domain: str
    count: int = 0
    sketch_em: float = Field(default=0.0, ge=0.0, le=1.0)
    lf_oracle_em: float = Field(default=0.0, ge=0.0, le=1.0)
    lf_em: float = Field(default=0.0, ge=0.0, le=1.0)


class EvalReport(BaseModel):
    sketch_em: float = Field(default=0.0, ge=0.0, le=1.0)
    lf_oracle_em: float = Field(default=0.0, ge=0.0, le=1.0)
    lf_em: float = Field(default=0.0, ge=0.0, le=1.0)
    count: int = 0
    fallbacks: int = 0
    per_domain: list[DomainScore] = []

    def render(self) -> str:
        lines = [f"{'domain':<16} {'n':>6} {'Sketch':>8} {'LF_oracle':>10} {'LF':>8}"]
        rows = [(d.domain, d.count, d.sketch_em, d.lf_oracle_em, d.lf_em) for d in self.per_domain]
        rows.append(("all", self.count, self.sketch_em, self.lf_oracle_em, self.lf_em))
        for name, n, s, o, lf in rows:
            lines.append(f"{name:<16} {n:>6} {100 * s:>8.2f} {100 * o:>10.2f} {100 * lf:>8.2f}")
        return "\n".join(lines)


class StageSeparation(BaseModel):
    """Calinski-Harabasz over domains for pooled coarse and fine representations."""

    count: int
    domains: int
    coarse_ch: float | None = None
    fine_ch: float | None = None

    @computed_field
    @property
    def flagged(self) -> bool:
        # coarse representations should be the less domain-separable ones
        return self.coarse_ch is not None and self.fine_ch is not None and self.coarse_ch >= self.fine_ch

    def render(self) -> str:
        def fmt(value: float | None) -> str:
            return "undefined" if value is None else f"{value:.4f}"

        verdict = "FLAG coarse >= fine" if self.flagged else "ok"
        return (
            f"Calinski-Harabasz over {self.count} instances / {self.domains} domains: "
            f"coarse {fmt(self.coarse_ch)}, fine {fmt(self.fine_ch)} ({verdict})"
        )


class SweepRow(BaseModel):
    fraction: float
    n_target: int
    sketch_em: float
    lf_em: float

    COLUMNS: ClassVar[tuple[str, ...]] = ("fraction", "n_target", "sketch_em", "lf_em")

    def to_row(self) -> list[str]:
        return [repr(self.fraction), str(self.n_target), repr(self.sketch_em), repr(self.lf_em)]
