"""
Shifted-window attention masks
==============================

Alternate Swin blocks roll the token grid by half a window before splitting
it into windows. Windows on the wrapped border then contain tokens that were
never neighbours, and an additive mask of -inf keeps them from attending to
one another. This script prints the region labels behind that mask and checks
that a block pair keeps its input when all weights are zero.
"""

import torch

from witt.backbone import SwinBlock, effective_window, shift_attention_mask, swin_block_pair, window_partition

h = w = 8
window, shift = 4, 2

# Which original region each token falls in after the cyclic shift.
labels = torch.zeros(h, w, dtype=torch.long)
bands = (slice(0, h - window), slice(h - window, h - shift), slice(h - shift, h))
for i, rows in enumerate(bands):
    for j, cols in enumerate(bands):
        labels[rows, cols] = 3 * i + j
print("region labels of the shifted grid:\n", labels)

mask = shift_attention_mask(h, w, window, shift)
print("mask shape (windows, tokens, tokens):", tuple(mask.shape))
for k, win in enumerate(window_partition(labels.view(1, h, w, 1).float(), window)):
    allowed = int((mask[k] == 0).sum())
    print(f"window {k}: regions {sorted(set(win.view(-1).long().tolist()))}, {allowed} of 256 pairs allowed")

# On grids no larger than the window the shift would be meaningless; the
# block falls back to a single unshifted window.
for grid in ((16, 16), (8, 8), (4, 8)):
    print("grid", grid, "-> (window, shift) =", effective_window(*grid, window, True))

a, b = SwinBlock(16, 2, window), SwinBlock(16, 2, window, shifted=True)
for blk in (a, b):
    for p in blk.parameters():
        torch.nn.init.zeros_(p)
    for m in blk.modules():
        if isinstance(m, torch.nn.LayerNorm):
            torch.nn.init.ones_(m.weight)
x = torch.randn(1, h, w, 16)
print("zero-weight block pair is the identity:", torch.equal(swin_block_pair(x, a, b), x))
