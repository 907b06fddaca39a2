"""Instrumented replica of the criterion-7 protocol: identical rng streams and
full-batch averaged steps as production train(), plus probe losses every 10
epochs and full samples every 100 epochs."""
import json
import sys
import time

import numpy as np

sys.path.insert(0, "/root/pkg/src")
from pbcdiff.box import wrap_within
from pbcdiff.diffusion import (
    UNIT_BOX, AdamState, DiffusionSchedule, TrainConfig, forward_noise, sample,
)
from pbcdiff.io import augment, load_conformation, save_checkpoint
from pbcdiff.network import (
    DenoiserConfig, GlobalFeatures, init_params, loss_and_gradients, predict_noise,
)
from pbcdiff.rdf import compute_rdf, first_peak_bin, rdf_mse

t0 = time.time()
conf = load_conformation("/root/pkg/.pilot/c7_reference.npz")
ref_rdf = compute_rdf(conf)
ref_peak = first_peak_bin(ref_rdf)
dataset = augment(conf)
dconfig = DenoiserConfig()
tconfig = TrainConfig()
schedule = DiffusionSchedule()

# clone of train()'s internal state
rng = np.random.default_rng(np.random.SeedSequence((0, 1)))
params = init_params(dconfig, 0)
items = []
for c in dataset:
    coords = wrap_within(c.coordinates / c.box.lengths, UNIT_BOX)
    scale = 1.0 / np.asarray(c.box.lengths, dtype=np.float64)
    items.append((coords, scale))
adam = AdamState(params.n_params, dtype=params.dtype)
batch_size = len(items)

x0 = items[0][0]
C = items[0][1]
val_rng = np.random.default_rng(1000)
probes = {}
for pt in (10, 60, 150, 300, 500):
    eps_v = val_rng.standard_normal(x0.shape)
    x_v = wrap_within(x0 + np.sqrt(schedule.alpha(pt)) * C * eps_v, UNIT_BOX)
    probes[pt] = (x_v, eps_v, GlobalFeatures(t_frac=pt / 500))


def probe_line():
    parts = []
    for pt, (x_v, eps_v, gf) in probes.items():
        ehat = predict_noise(x_v, gf, params, UNIT_BOX).astype(np.float64)
        c = float(np.corrcoef(eps_v.ravel(), ehat.ravel())[0, 1]) if np.std(ehat) > 1e-9 else 0.0
        parts.append(f"L{pt}={np.sum((eps_v - ehat) ** 2) / x0.shape[0]:.3f}/r{c:+.2f}")
    return " ".join(parts)


history = []
for epoch in range(tconfig.epochs):
    lr = tconfig.lr_at(epoch)
    order = rng.permutation(len(items))
    epoch_loss = 0.0
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        batch = []
        for idx in chunk:
            coords, scale = items[idx]
            t = int(rng.integers(1, schedule.n_steps + 1))
            x_t, eps = forward_noise(coords, t, schedule, rng, noise_scale=scale)
            batch.append((x_t, GlobalFeatures(t_frac=t / schedule.n_steps), eps))
        loss, grads = loss_and_gradients(batch, params, UNIT_BOX)
        adam.update(params.flat, grads, lr,
                    tconfig.adam_beta1, tconfig.adam_beta2, tconfig.adam_eps)
        epoch_loss += loss * len(chunk)
    history.append(epoch_loss / len(items))
    if (epoch + 1) % 10 == 0:
        print(f"ep {epoch+1:4d}: loss={history[-1]:.4f} lr={lr:.5f} "
              f"{probe_line()} [{time.time()-t0:.0f}s]", flush=True)
    if (epoch + 1) % 100 == 0:
        s, _ = sample(256, params, schedule, conf.box, np.random.default_rng(12345))
        srdf = compute_rdf(s)
        print(f"  >> ep {epoch+1}: sample RDF-MSE={rdf_mse(srdf, ref_rdf):.4f} "
              f"peak_bin={first_peak_bin(srdf)} (ref {ref_peak})", flush=True)

save_checkpoint("/root/pkg/.pilot/c7b_checkpoint.npz", params, schedule.n_steps,
                schedule.s, {"pipeline": "c7b-pilot"}, history)
rng_s = np.random.default_rng(12345)
trace_steps = [490, 400, 300, 200, 100, 50, 0]
sampled, trace = sample(256, params, schedule, conf.box, rng_s, trace_steps=trace_steps)
s_rdf = compute_rdf(sampled)
mse = rdf_mse(s_rdf, ref_rdf)
trace_mse = {t: rdf_mse(compute_rdf(trace[t]), ref_rdf) for t in trace_steps}
banded = all(trace_mse[b] * 1.10 >= trace_mse[a]
             for b, a in zip(trace_steps, trace_steps[1:]))
metrics = {
    "rdf_mse": float(mse),
    "peak_bin": int(first_peak_bin(s_rdf)),
    "ref_peak_bin": int(ref_peak),
    "trace_mse": {str(k): float(v) for k, v in trace_mse.items()},
    "banded_ok": bool(banded),
    "strict_ok": bool(trace_mse[0] < trace_mse[490]),
    "loss_first": float(history[0]),
    "loss_last": float(history[-1]),
    "elapsed_s": time.time() - t0,
}
with open("/root/pkg/.pilot/c7b_metrics.json", "w") as fh:
    json.dump(metrics, fh, indent=2)
print(json.dumps(metrics, indent=2), flush=True)
print("PILOT C7B COMPLETE", flush=True)
