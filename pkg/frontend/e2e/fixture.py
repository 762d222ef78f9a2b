"""Build tiny service artifacts for the UI end-to-end test.

Usage: python3 fixture.py <outdir>; prints the service config path.
"""

import json
import subprocess
import sys
from pathlib import Path

out = Path(sys.argv[1])
out.mkdir(parents=True, exist_ok=True)

spec = out / "spec.toml"
spec.write_text(
    "[synthetic]\n"
    "n_diseases = 6\n"
    "n_symptoms = 60\n"
    "n_users = 400\n"
    "signature_size = 5\n"
    "noise_pool_size = 10\n"
    "seed = 11\n",
    encoding="utf-8",
)
train_cfg = out / "train.toml"
train_cfg.write_text(
    "[train]\n"
    "lr = 0.02\nbatch_size = 64\nmax_epochs = 10\npatience = 5\ndim = 16\nseed = 2\n",
    encoding="utf-8",
)

run = lambda *args: subprocess.run(
    [sys.executable, "-m", "graphdx.cli", *args], check=True, capture_output=True
)
run("gen-data", "--spec", str(spec), "--out", str(out / "corpus.tsv"))
run(
    "train",
    "--data", str(out / "corpus.tsv"),
    "--config", str(train_cfg),
    "--out", str(out / "model.ckpt"),
    "--split-seed", "1",
    "--train-records", str(out / "train.tsv"),
)
run(
    "retrieve-train",
    "--checkpoint", str(out / "model.ckpt"),
    "--data", str(out / "train.tsv"),
    "--out", str(out / "ret.idx"),
)

# aliases: identity over the training vocabulary plus a colloquial phrase
seen: set[str] = set()
for line in (out / "train.tsv").read_text(encoding="utf-8").splitlines():
    seen.update(line.split("\t")[2].split(","))
aliases = {s: s for s in sorted(seen)}
aliases["feeling awful"] = sorted(seen)[0]
(out / "aliases.json").write_text(json.dumps(aliases), encoding="utf-8")
print(sorted(seen)[0], file=sys.stderr)

config = out / "service.toml"
config.write_text(
    "[paths]\n"
    'records = "train.tsv"\n'
    'checkpoint = "model.ckpt"\n'
    'index = "ret.idx"\n'
    'aliases = "aliases.json"\n'
    "[session]\n"
    "confidence_threshold = 0.95\n"
    "max_rounds = 2\n"
    "suggestions_per_round = 4\n"
    "top_n = 5\n"
    "seed = 3\n"
    "[store]\n"
    f'path = "{(out / "sessions.sqlite").as_posix()}"\n',
    encoding="utf-8",
)
print(config)
