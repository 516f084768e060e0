"""Regenerate tests/golden/toy_model.json.

Run from the repository root after any deliberate change to weight
initialization or the forward pass, then review the diff:

    python3 tools/make_golden.py

The file freezes the weight checksum and a handful of logits fingerprints for
the default model configuration so refactors cannot silently change the
numerics."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from streamkit.masks import causal_mask  # noqa: E402
from streamkit.model import (  # noqa: E402
    ModelConfig,
    SamplerConfig,
    SamplerMode,
    forward,
    init_weights,
    next_token,
    weights_checksum,
)
from streamkit.rope import Grouping, PositionMap  # noqa: E402

TOKEN_IDS = [7, 11, 1, 23, 42, 3, 9, 60, 2, 17, 33, 4]


def main() -> int:
    cfg = ModelConfig()
    weights = init_weights(cfg)
    ids = np.array(TOKEN_IDS, dtype=np.int64)
    mask = causal_mask(len(ids))
    positions = PositionMap(np.arange(len(ids), dtype=np.int64), Grouping.VANILLA)
    logits = forward(ids, mask, positions, weights)

    greedy = next_token(logits[-1], SamplerConfig(mode=SamplerMode.GREEDY))
    sampled = next_token(
        logits[-1],
        SamplerConfig(mode=SamplerMode.SAMPLE, seed=0),
        rng=np.random.default_rng(0),
    )

    golden = {
        "config": {
            "n_layers": cfg.n_layers, "n_heads": cfg.n_heads, "head_dim": cfg.head_dim,
            "vocab_size": cfg.vocab_size, "ffn_mult": cfg.ffn_mult, "seed": cfg.seed,
        },
        "weights_checksum": weights_checksum(weights),
        "token_ids": TOKEN_IDS,
        "logits_shape": list(logits.shape),
        "logits_last_row_head": [float(x) for x in logits[-1, :8]],
        "logits_first_row_head": [float(x) for x in logits[0, :8]],
        "logits_max_abs": float(np.max(np.abs(logits))),
        "logits_mean": float(np.mean(logits)),
        "greedy_next": int(greedy),
        "sampled_next_seed0": int(sampled),
    }
    out = ROOT / "tests" / "golden" / "toy_model.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(golden, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out.relative_to(ROOT)}")
    print(f"checksum {golden['weights_checksum'][:16]}... greedy {greedy} sampled {sampled}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
