"""Input embeddings: token, sequence-position, tree-position, and type.

Every sequence item embeds as the sum of four terms. The tree-position term
projects a fixed-length binary encoding of the node's root path through a
learned linear map; items outside trees (text, control tokens) contribute an
all-zero encoding and therefore a zero tree-position term. Math token
embeddings are linked to the text embedding table: a math symbol embeds as
the average of its text-token pieces plus a small learned correction, so at
initialization it sits next to its textual spelling.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import SequenceTooLong, ShapeMismatch
from .tokens import (
    MAX_CHILD_COUNT,
    MAX_TREE_DEPTH,
    TokenKind,
    TreePos,
    TypeTag,
)
from .vocab import IdLayout

# Each path entry expands to one one-hot 2-vector per binary digit.
BITS_PER_ENTRY = (MAX_CHILD_COUNT - 1).bit_length()          # 6
BIN_LENGTH = 2 * BITS_PER_ENTRY * MAX_TREE_DEPTH             # 384

_SPECIAL_KIND_ORDER = (
    TokenKind.START_FORMULA,
    TokenKind.END_FORMULA,
    TokenKind.END,
    TokenKind.NUM_HEAD,
    TokenKind.OOV_HEAD,
)


def bin_encode(path: TreePos, out: torch.Tensor | None = None) -> torch.Tensor:
    """Fixed-length binary position encoding of a root path.

    Entry j contributes one one-hot pair per binary digit (most significant
    first) in depth block j; unused depth blocks stay all-zero, so the root's
    empty path encodes to the zero vector.
    """
    if len(path) > MAX_TREE_DEPTH:
        raise SequenceTooLong(f"path depth {len(path)} exceeds {MAX_TREE_DEPTH}")
    vec = out if out is not None else torch.zeros(BIN_LENGTH)
    for j, entry in enumerate(path):
        if not 0 <= entry < MAX_CHILD_COUNT:
            raise ValueError(f"sibling index {entry} outside [0, {MAX_CHILD_COUNT})")
        base = j * 2 * BITS_PER_ENTRY
        for k in range(BITS_PER_ENTRY):
            bit = (entry >> (BITS_PER_ENTRY - 1 - k)) & 1
            vec[base + 2 * k + bit] = 1.0
    return vec


def bin_encode_batch(
    positions, dtype=torch.float32, device=None
) -> torch.Tensor:
    """Stack bin encodings for a list of positions; None encodes to zeros."""
    out = torch.zeros(len(positions), BIN_LENGTH, dtype=dtype, device=device)
    for i, pos in enumerate(positions):
        if pos:
            bin_encode(pos, out=out[i])
    return out


class TokenEmbedder(nn.Module):
    """Maps (token id, type, tree position) triples to model vectors."""

    def __init__(self, config, layout: IdLayout):
        super().__init__()
        self.config = config
        self.text_size = layout.text_size
        self.math_size = layout.math_size
        d = config.d_model
        self.text_table = nn.Embedding(self.text_size, d)
        self.seq_pos_table = nn.Embedding(config.max_seq, d)
        if config.use_type_emb:
            self.type_table = nn.Embedding(len(TypeTag), d)
        if config.use_tree_pos:
            self.tree_pos_proj = nn.Linear(BIN_LENGTH, d, bias=False)

        if config.shared_math_emb:
            hidden = config.phi_hidden or d
            self.link_hidden = nn.Linear(d, hidden)
            self.link_out = nn.Linear(hidden, d)
            self.special_table = nn.Embedding(len(_SPECIAL_KIND_ORDER), d)
            self._build_piece_index(layout)
        else:
            self.math_table = nn.Embedding(self.math_size, d)

        self.drop = nn.Dropout(config.dropout)
        self._init_weights()

    def _build_piece_index(self, layout: IdLayout):
        """Text-piece decomposition of every math token, padded square."""
        piece_lists: list[list[int]] = []
        special_slot: list[int] = []
        for local in range(self.math_size):
            token = layout.math.token_at(local)
            if token.kind in _SPECIAL_KIND_ORDER:
                special_slot.append(_SPECIAL_KIND_ORDER.index(token.kind))
                piece_lists.append([0])
            else:
                special_slot.append(-1)
                piece_lists.append(layout.text.encode(token.symbol))
        width = max(len(p) for p in piece_lists)
        ids = torch.zeros(self.math_size, width, dtype=torch.long)
        counts = torch.zeros(self.math_size, dtype=torch.long)
        for i, pieces in enumerate(piece_lists):
            ids[i, : len(pieces)] = torch.tensor(pieces, dtype=torch.long)
            counts[i] = len(pieces)
        self.register_buffer("piece_ids", ids)
        self.register_buffer("piece_counts", counts)
        self.register_buffer("special_slot", torch.tensor(special_slot))

    def _init_weights(self):
        std = 0.02
        nn.init.normal_(self.text_table.weight, std=std)
        nn.init.normal_(self.seq_pos_table.weight, std=std)
        if self.config.use_type_emb:
            nn.init.normal_(self.type_table.weight, std=std)
        if self.config.use_tree_pos:
            nn.init.normal_(self.tree_pos_proj.weight, std=std)
        if self.config.shared_math_emb:
            # small correction so linked embeddings start near the text average
            nn.init.normal_(self.link_hidden.weight, std=1e-3)
            nn.init.zeros_(self.link_hidden.bias)
            nn.init.normal_(self.link_out.weight, std=1e-3)
            nn.init.zeros_(self.link_out.bias)
            nn.init.normal_(self.special_table.weight, std=std)
        else:
            nn.init.normal_(self.math_table.weight, std=std)

    def text_average_matrix(self) -> torch.Tensor:
        """Per math token, the mean embedding of its text pieces (rows for
        special tokens are placeholders; see ``special_slot``)."""
        piece_emb = self.text_table(self.piece_ids)
        mask = (
            torch.arange(self.piece_ids.shape[1], device=piece_emb.device)
            < self.piece_counts[:, None]
        )
        summed = (piece_emb * mask[..., None].to(piece_emb.dtype)).sum(dim=1)
        return summed / self.piece_counts[:, None].to(piece_emb.dtype)

    def math_token_matrix(self) -> torch.Tensor:
        """Embedding rows for all math-vocabulary tokens."""
        if not self.config.shared_math_emb:
            return self.math_table.weight
        tbar = self.text_average_matrix()
        linked = tbar + self.link_out(torch.tanh(self.link_hidden(tbar)))
        special = self.special_table(self.special_slot.clamp(min=0))
        return torch.where((self.special_slot >= 0)[:, None], special, linked)

    def token_matrix(self) -> torch.Tensor:
        """Full (text + math) token embedding table."""
        return torch.cat([self.text_table.weight, self.math_token_matrix()], dim=0)

    def forward(
        self,
        ids: torch.Tensor,
        type_tags: torch.Tensor,
        bins: torch.Tensor,
    ) -> torch.Tensor:
        """Sum the four embedding terms for a [B, L] batch of sequences."""
        if ids.dim() != 2 or ids.shape != type_tags.shape:
            raise ShapeMismatch("ids and type_tags must both be [batch, length]")
        if bins.shape != (*ids.shape, BIN_LENGTH):
            raise ShapeMismatch(f"bins must be [batch, length, {BIN_LENGTH}]")
        L = ids.shape[1]
        if L > self.config.max_seq:
            raise SequenceTooLong(f"length {L} exceeds {self.config.max_seq}")
        x = self.token_matrix()[ids]
        x = x + self.seq_pos_table(torch.arange(L, device=ids.device))
        if self.config.use_type_emb:
            x = x + self.type_table(type_tags)
        if self.config.use_tree_pos:
            x = x + self.tree_pos_proj(bins.to(x.dtype))
        return self.drop(x)
