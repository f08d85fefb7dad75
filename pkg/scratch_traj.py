"""Scratch: per-epoch trajectory of one task's expert training."""

import sys

import numpy as np

from stpr.autodiff import no_grad
from stpr.backbone import encode_tokens
from stpr.datagen import StreamConfig, generate_stream
from stpr.expert import ExpertParams, encode_spatiotemporal
from stpr.harness import init_state, make_train_config, train_task
from stpr.losses import label_mask, similarity_matrix, symmetric_contrastive
from stpr.nncore import cosine, sgd_step, zero_grads
from stpr.rng import RngStream

temp = float(sys.argv[1])
gain = float(sys.argv[2])
probe_task = int(sys.argv[3]) if len(sys.argv) > 3 else 4
epochs = int(sys.argv[4]) if len(sys.argv) > 4 else 20
init_gain = float(sys.argv[5]) if len(sys.argv) > 5 else 1.0

scfg = StreamConfig(text_gain=gain, temporal_amplitude=1.0)
stream = generate_stream(7, scfg)
tcfg = make_train_config("idx5", seed=7, temperature=temp)
state = init_state(stream.model_cfg, tcfg)
for task in stream.tasks[: probe_task - 1]:
    train_task(state, stream, task)

task = stream.tasks[probe_task - 1]
b = task.task_id
expert = ExpertParams.init(tcfg.seed, state.model_cfg, task_id=b)
if init_gain != 1.0:
    for layer in expert.layers:
        for f in ("wq", "wk", "wv", "wo", "w1", "w2"):
            getattr(layer, f).data *= init_gain

videos = task.train
labels = np.array([v.label for v in videos])
frames_all = np.stack([v.frames for v in videos])
text_rows = np.stack([stream.texts[int(c)] for c in labels])
params = state.adapters.parameters() + expert.parameters()
lcfg = tcfg.loss_config()
shuffle = RngStream(tcfg.seed).split("harness", "shuffle", b)

def probe():
    with no_grad():
        feats = encode_tokens(frames_all, state.backbone, state.adapters)
        vst, _ = encode_spatiotemporal(feats, expert)
    v = vst.data
    own = np.mean([cosine(v[i], stream.texts[int(labels[i])]) for i in range(len(labels))])
    sib = np.mean([
        cosine(v[i], stream.texts[[c for c in task.class_ids if c != labels[i]][0]])
        for i in range(len(labels))
    ])
    return own, sib, np.linalg.norm(v, axis=1).mean()

own, sib, nrm = probe()
print(f"epoch  0: cos_own {own:+.3f} cos_sib {sib:+.3f} norm {nrm:.2f}")
for epoch in range(1, epochs + 1):
    order = shuffle.split(epoch).gen().permutation(len(videos))
    losses = []
    for start in range(0, len(videos), tcfg.batch_size):
        idx = order[start : start + tcfg.batch_size]
        zero_grads(params)
        feats = encode_tokens(frames_all[idx], state.backbone, state.adapters)
        vst, _ = encode_spatiotemporal(feats, expert)
        mask = label_mask(labels[idx], labels[idx])
        l_st = symmetric_contrastive(similarity_matrix(vst, text_rows[idx]), mask, lcfg)
        l_st.backward()
        sgd_step(params, tcfg.learning_rate)
        losses.append(float(l_st.data))
    if epoch % 2 == 0 or epoch == 1:
        own, sib, nrm = probe()
        print(f"epoch {epoch:2d}: cos_own {own:+.3f} cos_sib {sib:+.3f} norm {nrm:.2f}  L_st {np.mean(losses):.4f}")
