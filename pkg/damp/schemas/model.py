"""
Model Schemas: hyperparameters and per-batch loss bookkeeping.
"""
from pydantic import BaseModel, ConfigDict, Field, model_validator


class Hyperparams(BaseModel):
    """Every scalar knob of the network, its optimizer and its decoders."""

    model_config = ConfigDict(frozen=True)

    # ── Sizes ──────────────────────────────────────────
    embedding_dim: int = Field(default=300, gt=0)
    encoder_hidden: int = Field(default=300, gt=0)
    hidden_per_direction: bool = False
    decoder_hidden: int | None = Field(default=None, gt=0)

    # ── Domain relevance attention ─────────────────────
    r_c: float = Field(default=60.0, gt=1.0)
    r_f: float = Field(default=2.0, ge=1.0)
    relevance_k: int = Field(default=2, ge=0)

    # ── Domain discrimination ──────────────────────────
    lambda_c: float = Field(default=0.4, ge=0.0)
    lambda_f: float = Field(default=0.2, ge=0.0)
    reverse_grad_discriminator: bool = False

    # ── Regularisation / optimizer ─────────────────────
    dropout: float = Field(default=0.6, ge=0.0, lt=1.0)
    l2: float = Field(default=1e-5, ge=0.0)
    batch_size: int = Field(default=64, gt=0)
    lr: float = Field(default=1e-3, gt=0.0)
    rmsprop_decay: float = Field(default=0.9, gt=0.0, lt=1.0)
    rmsprop_eps: float = Field(default=1e-8, gt=0.0)
    clip_norm: float | None = Field(default=None, gt=0.0)
    init_range: float = Field(default=0.08, gt=0.0)

    # ── Decoding ───────────────────────────────────────
    beam_size: int = Field(default=3, gt=0)
    constrained_fine: bool = True
    max_sketch_decode_len: int | None = Field(default=None, gt=0)
    max_lf_decode_len: int | None = Field(default=None, gt=0)

    # ── Ingestion limits ───────────────────────────────
    max_utterance_len: int = Field(default=100, gt=0)
    max_lf_len: int = Field(default=200, gt=0)

    @property
    def per_direction_hidden(self) -> int:
        if self.hidden_per_direction:
            return self.encoder_hidden
        return self.encoder_hidden // 2

    @property
    def encoder_output_width(self) -> int:
        return 2 * self.per_direction_hidden

    @property
    def decoder_width(self) -> int:
        return self.decoder_hidden or self.encoder_output_width

    @model_validator(mode="after")
    def _check_widths(self) -> "Hyperparams":
        if not self.hidden_per_direction and self.encoder_hidden % 2:
            raise ValueError("encoder_hidden must be even when it is the total of both directions")
        if self.decoder_hidden is not None and self.decoder_hidden != self.encoder_output_width:
            # dot-product attention scores U·d_t need equal widths
            raise ValueError(
                f"decoder_hidden={self.decoder_hidden} must equal the encoder output width "
                f"{self.encoder_output_width}"
            )
        return self


class LossBreakdown(BaseModel):
    """Mean-per-instance loss terms of one batch (or an epoch average)."""

    coarse_ce: float = 0.0
    coarse_domain: float = 0.0
    loss_c: float = 0.0
    fine_ce: float = 0.0
    fine_domain: float = 0.0
    loss_f: float = 0.0

    @property
    def total(self) -> float:
        return self.loss_c + self.loss_f

    def weighted(self, weight: float) -> "LossBreakdown":
        return LossBreakdown(**{k: v * weight for k, v in self.model_dump().items()})

    def __add__(self, other: "LossBreakdown") -> "LossBreakdown":
        return LossBreakdown(**{k: v + getattr(other, k) for k, v in self.model_dump().items()})
