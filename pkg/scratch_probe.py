"""Scratch: full causal-chain probe for one configuration."""

import sys

import numpy as np

from stpr.autodiff import Tensor, no_grad
from stpr.backbone import encode_tokens
from stpr.datagen import StreamConfig, generate_stream
from stpr.expert import encode_spatiotemporal
from stpr.harness import evaluate_all, make_train_config, train_sequence
from stpr.nncore import cosine
from stpr.tdmoe import route_scores_from_outputs

temp = float(sys.argv[1])
gain = float(sys.argv[2])
amp = float(sys.argv[3])
tcos = float(sys.argv[4])
seed = int(sys.argv[5]) if len(sys.argv) > 5 else 7
preset = sys.argv[6] if len(sys.argv) > 6 else "idx5"

scfg = StreamConfig(text_gain=gain, temporal_amplitude=amp, max_text_cos=tcos)
stream = generate_stream(seed, scfg)
tcfg = make_train_config(preset, seed=seed, temperature=temp)
state, matrix, last = train_sequence(stream, tcfg)

print(f"preset={preset} temp={temp} gain={gain} amp={amp} tcos={tcos} seed={seed}")
for i in range(1, 6):
    print("  row", i, [round(a, 3) for a in matrix.row(i)])
print("  curves last:", {b: round(c[-1], 4) for b, c in state.curves.items() if c})

for strat in ("td", "avg", "spatial", "oracle"):
    row = evaluate_all(state, stream, routing=strat)
    acc = float(np.mean(row.accuracies))
    print(f"  routing={strat:<8} final-row={['%.2f' % a for a in row.accuracies]} acc={acc:.3f} hit={row.hit_rate()}")

# alignment of each component with the own text, per task
for task in stream.tasks:
    frames = np.stack([v.frames for v in task.eval])
    labels = [v.label for v in task.eval]
    with no_grad():
        feats = encode_tokens(frames, state.backbone, state.adapters).data
        vbars = feats.mean(axis=-2)
        vst = {e.task_id: encode_spatiotemporal(Tensor(feats), e)[0].data for e in state.bank}
    own = [cosine(vst[task.task_id][i], stream.texts[l]) for i, l in enumerate(labels)]
    vb = [cosine(vbars[i], stream.texts[l]) for i, l in enumerate(labels)]
    rws = []
    for i in range(len(labels)):
        scores = route_scores_from_outputs(vbars[i], {k: w[i] for k, w in vst.items()}, state.anchors)
        rws.extend(s for k, s in scores.items() if k != task.task_id)
    print(f"  task {task.task_id}: cos(vst_own,T): mean {np.mean(own):.3f}  "
          f"cos(vbar,T): mean {np.mean(vb):.3f}  wrong-r mean {np.mean(rws) if rws else float('nan'):.3f}  "
          f"vst_norm {np.linalg.norm(vst[task.task_id], axis=1).mean():.2f}  vbar_norm {np.linalg.norm(vbars, axis=1).mean():.2f}")
