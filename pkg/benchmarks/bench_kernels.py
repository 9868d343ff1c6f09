"""Compare the compiled kernels with the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--n 200000] [--json]

Both implementations run on the same inputs; results are checked for
agreement before timings are reported.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
import timeit

from dnshygiene import _kernels_py
from dnshygiene.intel import Status, ThreatEntry, merge_feeds
from dnshygiene.wire import DomainName, QueryView, encode_query

try:
    from dnshygiene import _kernels
except ImportError:
    _kernels = None

WORDS = ["www", "mail", "cdn", "api", "example", "evil", "ads", "com", "net", "org", "ru", "co", "uk"]


def packets(rng: random.Random, n: int) -> list[bytes]:
    out = []
    for _ in range(n):
        labels = tuple(rng.choice(WORDS) for _ in range(rng.randint(2, 6)))
        out.append(encode_query(QueryView(rng.randrange(65536), DomainName(labels))))
    return out


def trie_and_names(rng: random.Random, n_entries: int, n_names: int):
    entries = {}
    while len(entries) < n_entries:
        labels = tuple(rng.choice(WORDS) for _ in range(rng.randint(1, 4)))
        entries[labels] = ThreatEntry(DomainName(labels), Status.CONVICTED, frozenset({"malware"}), "bench")
    store = merge_feeds([list(entries.values())])
    names = [tuple(rng.choice(WORDS) for _ in range(rng.randint(1, 7))) for _ in range(n_names)]
    return store._trie, names


def bench(fn, repeat: int = 3) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000, help="inputs per kernel")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", action="store_true", help="print one JSON object")
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled kernels not built; nothing to compare", file=sys.stderr)
        return 1
    rng = random.Random(args.seed)
    pkts = packets(rng, args.n)
    trie, names = trie_and_names(rng, 10_000, args.n)

    assert [_kernels_py.decode_name(p, 12) for p in pkts[:2000]] == [_kernels.decode_name(p, 12) for p in pkts[:2000]]
    assert [_kernels_py.longest_match(trie, n)[0] for n in names[:2000]] == \
        [_kernels.longest_match(trie, n)[0] for n in names[:2000]]

    results = {}
    for name, mod in (("python", _kernels_py), ("compiled", _kernels)):
        dn = mod.decode_name
        lm = mod.longest_match
        results[f"decode_name/{name}"] = bench(lambda: [dn(p, 12) for p in pkts])
        results[f"longest_match/{name}"] = bench(lambda: [lm(trie, n) for n in names])
    summary = {
        "n": args.n,
        "seconds": results,
        "speedup": {
            k: results[f"{k}/python"] / results[f"{k}/compiled"] for k in ("decode_name", "longest_match")
        },
    }
    if args.json:
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        for k in ("decode_name", "longest_match"):
            py, c = results[f"{k}/python"], results[f"{k}/compiled"]
            print(f"{k:14s} python {py * 1e9 / args.n:8.0f} ns/call  compiled {c * 1e9 / args.n:8.0f} ns/call  "
                  f"speedup {py / c:5.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
