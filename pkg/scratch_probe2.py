"""Scratch: decompose classification at one knob cell — where do errors come from?"""

import sys

import numpy as np

from stpr.autodiff import Tensor, no_grad
from stpr.backbone import encode_tokens
from stpr.datagen import StreamConfig, generate_stream
from stpr.expert import encode_spatiotemporal
from stpr.harness import _routing_scores, make_train_config, train_sequence
from stpr.tdmoe import classify, fuse, temporal_component

SEED = int(sys.argv[1]) if len(sys.argv) > 1 else 7
TP = float(sys.argv[2]) if len(sys.argv) > 2 else 0.3
TG = float(sys.argv[3]) if len(sys.argv) > 3 else 6.0
SS = float(sys.argv[4]) if len(sys.argv) > 4 else 0.25

scfg = StreamConfig(temporal_text_gain=TG, static_scale=SS, text_gain=0.02, scene_spread=0.02, class_static_scale=0.0)
stream = generate_stream(SEED, scfg)
tcfg = make_train_config("idx5", seed=SEED, temperature=TP)
state, matrix, _ = train_sequence(stream, tcfg)

texts = stream.texts
seen = {c: texts[c] for c in stream.classes_up_to(5)}
task_of = {c: t.task_id for t in stream.tasks for c in t.class_ids}


def cos(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return float(a @ b / (na * nb)) if na and nb else 0.0


print(f"cell: seed={SEED} tp={TP} tg={TG} ss={SS}")
print(f"matrix last row: {[f'{v:.2f}' for v in matrix.values[-1]]}")

for routing in ("oracle", "td"):
    within = cross = 0
    for task in stream.tasks:
        frames = np.stack([v.frames for v in task.eval])
        with no_grad():
            feats = encode_tokens(frames, state.backbone, state.adapters).data
            vbars = feats.mean(axis=-2)
            vst_by_task = {e.task_id: encode_spatiotemporal(Tensor(feats), e)[0].data for e in state.bank}
        for i, video in enumerate(task.eval):
            outputs = {k: v[i] for k, v in vst_by_task.items()}
            scores = _routing_scores(state, vbars[i], outputs, task.task_id, routing)
            pred = classify(fuse(vbars[i], outputs, scores), seen)
            if pred != video.label:
                if task_of[pred] == task.task_id:
                    within += 1
                else:
                    cross += 1
    print(f"{routing}: errors within-task={within} cross-task={cross} (of 80)")

print("\nper-task channels at eval (own expert):")
print("task | |vbar| cos(vbar,T) dT(vbar) | |vtem| cos(vtem,T) dT(vtem) | r_own r_max_other")
for task in stream.tasks:
    frames = np.stack([v.frames for v in task.eval])
    with no_grad():
        feats = encode_tokens(frames, state.backbone, state.adapters).data
        vbars = feats.mean(axis=-2)
        vst_by_task = {e.task_id: encode_spatiotemporal(Tensor(feats), e)[0].data for e in state.bank}
    nb = ct_b = db = nv = ct_v = dv = ro = rx = 0.0
    n = len(task.eval)
    for i, video in enumerate(task.eval):
        T = texts[video.label]
        others = [texts[c] for c in seen if c != video.label]
        vbar = vbars[i]
        vtem = temporal_component(vst_by_task[task.task_id][i], vbar)
        nb += np.linalg.norm(vbar) / n
        ct_b += cos(vbar, T) / n
        db += (cos(vbar, T) - max(cos(vbar, o) for o in others)) / n
        nv += np.linalg.norm(vtem) / n
        ct_v += cos(vtem, T) / n
        dv += (cos(vtem, T) - max(cos(vtem, o) for o in others)) / n
        outputs = {k: v[i] for k, v in vst_by_task.items()}
        scores = _routing_scores(state, vbar, outputs, task.task_id, "td")
        ro += scores[task.task_id] / n
        rx += max(s for k, s in scores.items() if k != task.task_id) / n
    print(
        f"  {task.task_id}  | {nb:.3f}  {ct_b:+.3f}  {db:+.3f}  | {nv:.3f}  {ct_v:+.3f}  {dv:+.3f}  | {ro:+.3f} {rx:+.3f}"
    )

print("\nfused V (oracle) text margins per task:")
print("task | cos(V,T_own) − max cos(V,T_other): mean (within-pair margin)")
for task in stream.tasks:
    frames = np.stack([v.frames for v in task.eval])
    with no_grad():
        feats = encode_tokens(frames, state.backbone, state.adapters).data
        vbars = feats.mean(axis=-2)
        vst_by_task = {e.task_id: encode_spatiotemporal(Tensor(feats), e)[0].data for e in state.bank}
    marg = pair = 0.0
    n = len(task.eval)
    for i, video in enumerate(task.eval):
        T = texts[video.label]
        partner = [c for c in task.class_ids if c != video.label][0]
        outputs = {k: v[i] for k, v in vst_by_task.items()}
        scores = {k: (1.0 if k == task.task_id else 0.0) for k in outputs}
        V = fuse(vbars[i], outputs, scores)
        marg += (cos(V, T) - max(cos(V, texts[c]) for c in seen if c != video.label)) / n
        pair += (cos(V, T) - cos(V, texts[partner])) / n
    print(f"  {task.task_id}  | {marg:+.3f} (pair {pair:+.3f})")
