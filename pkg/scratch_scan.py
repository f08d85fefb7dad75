"""Scratch: grid-scan datagen knobs against the three ordering criteria."""

import itertools
import sys
import time

import numpy as np

from stpr.datagen import StreamConfig, generate_stream
from stpr.harness import compute_acc, compute_bwf, evaluate_all, make_train_config, train_sequence

KEYS = {
    "amp": "temporal_amplitude",
    "sg": "text_gain",
    "tg": "temporal_text_gain",
    "ss": "static_scale",
    "sp": "scene_spread",
    "cs": "class_static_scale",
    "jit": "scene_jitter",
    "tx": "max_text_cos",
    "ns": "noise_std",
}


def battery(seed, temp, scfg):
    stream = generate_stream(seed, scfg)
    runs = {}
    for name, overrides in (
        ("idx1", {}),
        ("idx4", {}),
        ("idx5", {}),
        ("unif", {"distill": "uniform"}),
    ):
        preset = "idx5" if name == "unif" else name
        tcfg = make_train_config(preset, seed=seed, temperature=temp, **overrides)
        state, matrix, _ = train_sequence(stream, tcfg)
        runs[name] = (state, matrix, stream)
    return runs


def report(seed, temp, fields):
    t0 = time.time()
    scfg = StreamConfig(**{KEYS[k]: v for k, v in fields.items()})
    runs = battery(seed, temp, scfg)
    acc = {k: compute_acc(m, st) for k, (s, m, st) in runs.items()}
    bwf = {k: compute_bwf(m) for k, (s, m, _) in runs.items()}
    c7 = acc["idx5"] > acc["idx4"] > acc["idx1"] and bwf["idx5"] < bwf["idx4"] and acc["idx5"] - acc["idx1"] >= 0.10
    state5, _, stream = runs["idx5"]
    rows = {r: evaluate_all(state5, stream, routing=r) for r in ("td", "avg", "spatial", "oracle")}
    racc = {r: float(np.mean(row.accuracies)) for r, row in rows.items()}
    hit = rows["td"].hit_rate()
    c8 = racc["td"] >= racc["avg"] and racc["td"] >= racc["spatial"] and hit >= 0.80
    c9 = bwf["idx5"] <= bwf["unif"] <= bwf["idx4"]
    knobs = " ".join(f"{k}={v}" for k, v in fields.items())
    print(
        f"seed={seed} tp={temp} {knobs} | "
        f"a1={acc['idx1']:.3f} a4={acc['idx4']:.3f} a5={acc['idx5']:.3f} "
        f"b4={bwf['idx4']:.3f} bU={bwf['unif']:.3f} b5={bwf['idx5']:.3f} | "
        f"td={racc['td']:.3f} av={racc['avg']:.3f} sp={racc['spatial']:.3f} or={racc['oracle']:.3f} hit={hit:.2f} | "
        f"c7={'Y' if c7 else '-'} c8={'Y' if c8 else '-'} c9={'Y' if c9 else '-'} ({time.time()-t0:.0f}s)",
        flush=True,
    )


def main():
    # usage: scratch_scan.py seeds=7,11 tp=0.3 tg=4.0,6.0 ss=0.1 ...
    grid = {}
    for arg in sys.argv[1:]:
        key, _, raw = arg.partition("=")
        vals = [float(x) for x in raw.split(",")]
        grid[key] = vals
    seeds = [int(x) for x in grid.pop("seeds", [7])]
    temps = grid.pop("tp", [0.3])
    names = sorted(grid)
    for seed in seeds:
        for temp in temps:
            for combo in itertools.product(*(grid[n] for n in names)):
                fields = dict(zip(names, combo))
                try:
                    report(seed, temp, fields)
                except Exception as exc:
                    print(f"seed={seed} tp={temp} {fields} FAILED: {type(exc).__name__}: {exc}", flush=True)


main()
