"""Writes fixed-seed MLM mask plans for a 20-token sequence.

Re-derives each plan from the selection rule: select with probability 0.15,
then <mask> (0.8), a uniform regular token (0.1) or keep (0.1).
"""
import json
import pathlib
import sys

from mt64 import MT19937_64

RESERVED = 18
MASK_ID = 4
REGULAR = 30  # vocabulary of 48 tokens


def plan(positions, ids, seed):
    rng = MT19937_64(seed)
    out = []
    for pos, orig in zip(positions, ids):
        if not rng.uniform() < 0.15:
            continue
        u = rng.uniform()
        if u < 0.8:
            out.append([pos, "mask_token", MASK_ID])
        elif u < 0.8 + 0.1:
            out.append([pos, "random_token", RESERVED + rng.below(REGULAR)])
        else:
            out.append([pos, "keep", orig])
    return out


def main(out_dir):
    positions = list(range(6, 26))
    ids = [RESERVED + (7 * i + 3) % REGULAR for i in range(20)]
    traces = []
    seeds = [0, 1, 7, 42, 1234, 987654321, 2**63 + 5, 2**64 - 1]
    seeds += [s for s in range(100, 400)]
    actions = set()
    for seed in seeds:
        p = plan(positions, ids, seed)
        actions.update(a for _, a, _ in p)
        traces.append({"seed": str(seed), "plan": p})
    assert actions == {"mask_token", "random_token", "keep"}
    doc = {"regular_count": REGULAR, "positions": positions, "ids": ids, "traces": traces}
    path = pathlib.Path(out_dir) / "mlm_trace.json"
    path.write_text(json.dumps(doc, indent=1) + "\n")
    print(f"wrote {path}: {len(traces)} traces")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else pathlib.Path(__file__).parents[1] / "fixtures")
