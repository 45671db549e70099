from pathlib import Path
from typing import ClassVar, Literal, get_args

from pydantic import BaseModel, ConfigDict, Field

from damp.schemas.model import Hyperparams, LossBreakdown

Strategy = Literal[
    "damp",
    "damp_no_dis",
    "damp_no_att",
    "seq2seq",
    "coarse2fine_mix",
    "pretrain_finetune",
    "param_share",
    "grad_reversal",
]
STRATEGIES: tuple[str, ...] = get_args(Strategy)

Phase = Literal["joint", "pretrain", "finetune"]


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    strategy: Strategy = "damp"
    hyperparams: Hyperparams = Field(default_factory=Hyperparams)
    epochs: int = Field(default=100, gt=0)
    patience: int = Field(default=10, ge=1)
    seed: int = 0
    out_dir: Path = Path("runs/damp")
    stop_on_perfect_dev: bool = True
    domain_queries: dict[str, tuple[str, ...]] = Field(default_factory=dict)
    workers: int = Field(default=1, gt=0)


class EpochLog(BaseModel):
    """One row of the training log TSV."""

    epoch: int
    phase: Phase = "joint"
    n_source: int = 0
    n_target: int = 0
    losses: LossBreakdown = Field(default_factory=LossBreakdown)
    dev_sketch_em: float = 0.0
    dev_lf_em: float = 0.0

    COLUMNS: ClassVar[tuple[str, ...]] = (
        "epoch", "phase", "n_source", "n_target",
        "coarse_ce", "coarse_domain", "loss_c",
        "fine_ce", "fine_domain", "loss_f",
        "dev_sketch_em", "dev_lf_em",
    )

    def to_row(self) -> list[str]:
        l = self.losses
        return [
            str(self.epoch), self.phase, str(self.n_source), str(self.n_target),
            repr(l.coarse_ce), repr(l.coarse_domain), repr(l.loss_c),
            repr(l.fine_ce), repr(l.fine_domain), repr(l.loss_f),
            repr(self.dev_sketch_em), repr(self.dev_lf_em),
        ]

    @classmethod
    def from_row(cls, row: list[str]) -> "EpochLog":
        values = dict(zip(cls.COLUMNS, row))
        return cls(
            epoch=int(values["epoch"]),
            phase=values["phase"],
            n_source=int(values["n_source"]),
            n_target=int(values["n_target"]),
            losses=LossBreakdown(**{k: float(values[k]) for k in LossBreakdown.model_fields}),
            dev_sketch_em=float(values["dev_sketch_em"]),
            dev_lf_em=float(values["dev_lf_em"]),
        )


class TrainResult(BaseModel):
    best_checkpoint: Path
    last_checkpoint: Path
    log_path: Path
    history: list[EpochLog] = []
    best_epoch: int = 0
    best_dev_lf_em: float = 0.0
