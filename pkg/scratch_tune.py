"""Scratch: grid-search unpinned knobs for the qualitative ordering criteria."""

import itertools
import sys
import time

import numpy as np

from stpr.datagen import StreamConfig, generate_stream
from stpr.harness import make_train_config, run_sequence

def trial(seed, temp, gain, amp, sscale):
    scfg = StreamConfig(text_gain=gain, temporal_amplitude=amp, static_scale=sscale)
    stream = generate_stream(seed, scfg)
    out = {}
    for name in ("idx1", "idx4", "idx5"):
        tcfg = make_train_config(name, seed=seed, temperature=temp)
        r = run_sequence(stream, tcfg)
        out[name] = r
    return out

def main():
    temps = [float(x) for x in sys.argv[1].split(",")]
    gains = [float(x) for x in sys.argv[2].split(",")]
    amps = [float(x) for x in sys.argv[3].split(",")]
    sscales = [float(x) for x in sys.argv[4].split(",")]
    seed = int(sys.argv[5]) if len(sys.argv) > 5 else 7
    for temp, gain, amp, ss in itertools.product(temps, gains, amps, sscales):
        t0 = time.time()
        r = trial(seed, temp, gain, amp, ss)
        a1, a4, a5 = (r[k].acc for k in ("idx1", "idx4", "idx5"))
        b4, b5 = r["idx4"].bwf, r["idx5"].bwf
        hit = r["idx5"].routing_hit_rate
        ok = a5 > a4 > a1 and b5 < b4 and (a5 - a1) >= 0.10
        print(
            f"temp={temp:<5} gain={gain:<4} amp={amp:<4} ss={ss:<4} | "
            f"acc1={a1:.3f} acc4={a4:.3f} acc5={a5:.3f} bwf4={b4:.3f} bwf5={b5:.3f} "
            f"hit={hit:.2f} {'OK' if ok else '--'} ({time.time()-t0:.0f}s)",
            flush=True,
        )

main()
