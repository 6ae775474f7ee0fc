"""Decoder-only autoregressive transformer with split text/math heads.

Trained from scratch at small scale. The output layer is two linear heads,
one over text ids and one over math ids, concatenated into a single logits
vector aligned with the unified id layout. The loss is cross-entropy over
the legal-next-token set only; illegal ids are excluded from the softmax.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import torch
from torch import nn
from torch.nn import functional as F

from .embedding import TokenEmbedder
from .errors import MaskedTarget, NonFiniteLoss, ShapeMismatch
from .vocab import IdLayout

IGNORE_INDEX = -100


@dataclass
class ModelConfig:
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 0               # 0 means 4 * d_model
    max_seq: int = 1024
    dropout: float = 0.0
    seed: int = 0
    phi_hidden: int = 0         # 0 means d_model
    # ablation switches
    use_tree_pos: bool = True
    use_type_emb: bool = True
    shared_math_emb: bool = True
    number_subtrees: bool = True

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if not self.d_ff:
            self.d_ff = 4 * self.d_model

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in known})


class SelfAttention(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.n_heads = config.n_heads
        self.head_dim = config.d_model // config.n_heads
        self.qkv = nn.Linear(config.d_model, 3 * config.d_model)
        self.proj = nn.Linear(config.d_model, config.d_model)
        self.drop = nn.Dropout(config.dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, L, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        shape = (B, L, self.n_heads, self.head_dim)
        q = q.view(shape).transpose(1, 2)
        k = k.view(shape).transpose(1, 2)
        v = v.view(shape).transpose(1, 2)
        out = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        out = out.transpose(1, 2).reshape(B, L, d)
        return self.drop(self.proj(out))


class Block(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(config.d_model)
        self.attn = SelfAttention(config)
        self.ln2 = nn.LayerNorm(config.d_model)
        self.mlp = nn.Sequential(
            nn.Linear(config.d_model, config.d_ff),
            nn.GELU(),
            nn.Linear(config.d_ff, config.d_model),
            nn.Dropout(config.dropout),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class MathLM(nn.Module):
    """Embedder, transformer trunk, and the two prediction heads."""

    def __init__(self, config: ModelConfig, layout: IdLayout):
        super().__init__()
        torch.manual_seed(config.seed)
        self.config = config
        self.layout = layout
        self.embedder = TokenEmbedder(config, layout)
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.n_layers))
        self.ln_f = nn.LayerNorm(config.d_model)
        self.text_head = nn.Linear(config.d_model, layout.text_size, bias=False)
        self.math_head = nn.Linear(config.d_model, layout.math_size, bias=False)
        for head in (self.text_head, self.math_head):
            nn.init.normal_(head.weight, std=0.02)

    @property
    def vocab_size(self) -> int:
        return self.layout.total

    def trunk(self, embeddings: torch.Tensor) -> torch.Tensor:
        if embeddings.dim() != 3 or embeddings.shape[-1] != self.config.d_model:
            raise ShapeMismatch(
                f"expected [batch, length, {self.config.d_model}] embeddings"
            )
        x = embeddings
        for block in self.blocks:
            x = block(x)
        return self.ln_f(x)

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        """Logits over the unified id space from precomputed embeddings."""
        h = self.trunk(embeddings)
        return torch.cat([self.text_head(h), self.math_head(h)], dim=-1)

    def forward_ids(
        self, ids: torch.Tensor, type_tags: torch.Tensor, bins: torch.Tensor
    ) -> torch.Tensor:
        return self.forward(self.embedder(ids, type_tags, bins))

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def masked_loss(
    logits: torch.Tensor,
    targets: torch.Tensor,
    allowed: torch.Tensor,
) -> torch.Tensor:
    """Mean cross-entropy with the softmax restricted to allowed ids.

    ``allowed[..., v]`` marks ids legal as the next token at each position;
    positions with target IGNORE_INDEX are skipped. A target outside its
    allowed set indicates a pipeline bug and raises MaskedTarget.
    """
    if logits.shape != allowed.shape or logits.shape[:-1] != targets.shape:
        raise ShapeMismatch("logits, targets, and allowed shapes disagree")
    active = targets != IGNORE_INDEX
    if active.any():
        ok = allowed.gather(-1, targets.clamp(min=0).unsqueeze(-1)).squeeze(-1)
        if not bool(ok[active].all()):
            bad = (~ok & active).nonzero()[0].tolist()
            raise MaskedTarget(f"target outside allowed set at {bad}")
    masked = logits.masked_fill(~allowed, float("-inf"))
    return F.cross_entropy(
        masked.reshape(-1, masked.shape[-1]),
        targets.reshape(-1),
        ignore_index=IGNORE_INDEX,
    )


@dataclass
class OptimConfig:
    lr: float = 3e-4
    weight_decay: float = 1e-2
    batch_size: int = 4
    grad_accum: int = 4
    max_epochs: int = 20
    patience: int = 3
    eval_every: int = 0         # steps; 0 means once per epoch

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj) -> "OptimConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in known})


def make_optimizer(model: MathLM, optim: OptimConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(), lr=optim.lr, weight_decay=optim.weight_decay
    )


def train_step(
    model: MathLM,
    optimizer: torch.optim.Optimizer,
    batch: dict[str, torch.Tensor],
    accumulate: bool = False,
) -> float:
    """One forward/backward pass; steps the optimizer unless accumulating."""
    logits = model.forward_ids(batch["ids"], batch["type_tags"], batch["bins"])
    loss = masked_loss(logits, batch["targets"], batch["allowed"])
    if not math.isfinite(loss.item()):
        raise NonFiniteLoss(f"loss is {loss.item()}")
    loss.backward()
    if not accumulate:
        optimizer.step()
        optimizer.zero_grad(set_to_none=True)
    return loss.item()


def save_checkpoint(
    path: str | Path,
    model: MathLM,
    optimizer: torch.optim.Optimizer | None = None,
    extra: dict | None = None,
):
    payload = {
        "version": 1,
        "config": model.config.to_json(),
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "torch_rng": torch.get_rng_state(),
    }
    payload.update(extra or {})
    torch.save(payload, str(path))


def load_checkpoint(path: str | Path, layout: IdLayout):
    payload = torch.load(str(path), map_location="cpu", weights_only=False)
    config = ModelConfig.from_json(payload["config"])
    model = MathLM(config, layout)
    model.load_state_dict(payload["model"])
    return model, payload
