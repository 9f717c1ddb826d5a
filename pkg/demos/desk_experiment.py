"""Train the multi-mapping model and a single-mapping baseline on the synthetic corpus.

Each post in the corpus has four valid responses (echo, reverse, question,
opinion).  The script prints selection statistics, mode coverage and Dist-n
for both models, and shows every module's response to a few held-out posts.

    python demos/desk_experiment.py [--seed 7] [--epochs 30]
"""

import argparse
import json

from mmpms.decoder import generate_all_batch
from mmpms.desk import coverage_at_least, desk_data, run_desk
from mmpms.vocab_data import MODE_NAMES


def show(run, data, posts=4):
    print(json.dumps(run.summary(), indent=1))
    heads = list(dict.fromkeys(p.post for p in data.test))[:posts]
    for post, outs in zip(heads, generate_all_batch(run.result.params, heads, 30)):
        print("post:", " ".join(data.vocab.id_to_token[i] for i in post))
        for k, out in enumerate(outs):
            print(f"  module {k}:", " ".join(data.vocab.id_to_token[i] for i in out))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--epochs", type=int, default=30)
    args = ap.parse_args()
    data = desk_data()
    multi = run_desk(data=data, seed=args.seed, epochs=args.epochs)
    single = run_desk(data=data, seed=args.seed, epochs=args.epochs, K=1)
    print("modes:", ", ".join(MODE_NAMES[:4]))
    print("== K=6 ==")
    show(multi, data)
    print("mode x module confusion:", multi.report["confusion"])
    print("== K=1 ==")
    show(single, data)
    print(f"posts covering >= 3 modes: K=6 {coverage_at_least(multi.report, 3):.2f}, "
          f"K=1 {coverage_at_least(single.report, 3):.2f}")
    print(f"Dist-2: K=6 {multi.report['dist2']:.3f}, K=1 {single.report['dist2']:.3f}")


if __name__ == "__main__":
    main()
