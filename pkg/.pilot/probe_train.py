"""Controlled probes of the training collapse: which knob restores learning?

Each variant trains on the same reference conformation with instrumented
per-step validation: fixed (x_t, eps) probes at t=10/30/60, output rms on a
structured and on a uniform input.  Reported losses are per-particle
|eps - ehat|^2 (zero-predictor baseline is about 3).
"""
import sys
import time

import numpy as np

sys.path.insert(0, "/root/pkg/src")
from pbcdiff.box import wrap_within
from pbcdiff.diffusion import (
    UNIT_BOX, AdamState, DiffusionSchedule, TrainConfig, forward_noise,
)
from pbcdiff.io import load_conformation
from pbcdiff.network import (
    DenoiserConfig, GlobalFeatures, init_params, loss_and_gradients, predict_noise,
)

conf = load_conformation("/root/pkg/.pilot/c7_reference.npz")
x0 = wrap_within(conf.coordinates / conf.box.lengths, UNIT_BOX)
schedule = DiffusionSchedule()
dconfig = DenoiserConfig()

val_rng = np.random.default_rng(1000)
probes = {}
for t in (10, 30, 60):
    x_t, eps = forward_noise(x0, t, schedule, val_rng)
    probes[t] = (x_t, eps, GlobalFeatures(t_frac=t / 500))
uniform_x = val_rng.random((256, 3))


def probe_report(params):
    out = {}
    for t, (x_t, eps, gf) in probes.items():
        ehat = predict_noise(x_t, gf, params, UNIT_BOX).astype(np.float64)
        out[f"L{t}"] = float(np.sum((eps - ehat) ** 2) / 256)
        if t == 10:
            out["rms_s"] = float(np.sqrt(np.mean(ehat ** 2)))
    eu = predict_noise(uniform_x, probes[10][2], params, UNIT_BOX)
    out["rms_u"] = float(np.sqrt(np.mean(eu.astype(np.float64) ** 2)))
    return out


def run_variant(name, lr, n_steps, batch, report_every):
    t0 = time.time()
    params = init_params(dconfig, seed=0)
    rng = np.random.default_rng(np.random.SeedSequence((0, 1)))
    adam = AdamState(params.n_params, dtype=params.dtype)
    tc = TrainConfig()
    r = probe_report(params)
    print(f"\n== {name} (lr={lr}, batch={batch}) ==", flush=True)
    print(f"  init: L10={r['L10']:.3f} L30={r['L30']:.3f} L60={r['L60']:.3f} "
          f"rms_s={r['rms_s']:.4f} rms_u={r['rms_u']:.4f}", flush=True)
    for step in range(1, n_steps + 1):
        items = []
        for _ in range(batch):
            t = int(rng.integers(1, 501))
            x_t, eps = forward_noise(x0, t, schedule, rng)
            items.append((x_t, GlobalFeatures(t_frac=t / 500), eps))
        loss, grads = loss_and_gradients(items, params, UNIT_BOX)
        adam.update(params.flat, grads, lr, tc.adam_beta1, tc.adam_beta2, tc.adam_eps)
        if step % report_every == 0:
            r = probe_report(params)
            print(f"  step {step:5d}: train={loss:7.3f} L10={r['L10']:.3f} "
                  f"L30={r['L30']:.3f} L60={r['L60']:.3f} "
                  f"rms_s={r['rms_s']:.4f} rms_u={r['rms_u']:.4f}", flush=True)
    print(f"  [{time.time()-t0:.0f}s]", flush=True)


which = sys.argv[1] if len(sys.argv) > 1 else "A"
if which == "A":
    run_variant("A control: spec defaults, batch-1", 0.005, 2000, 1, 200)
elif which == "C":
    run_variant("C low lr, batch-1", 2e-4, 3000, 1, 300)
elif which == "E":
    run_variant("E mid lr, batch-1", 5e-4, 3000, 1, 300)
elif which == "D":
    run_variant("D full-dataset step: lr 5e-3, batch 48", 0.005, 300, 48, 20)
elif which == "D8":
    run_variant("D8 minibatch 8, lr 5e-3", 0.005, 800, 8, 50)


def run_fixed_t(name, lr, n_steps, t_fix, fixed_pair, report_every):
    t0 = time.time()
    params = init_params(dconfig, seed=0)
    rng = np.random.default_rng(np.random.SeedSequence((0, 1)))
    adam = AdamState(params.n_params, dtype=params.dtype)
    tc = TrainConfig()
    gf = GlobalFeatures(t_frac=t_fix / 500)
    pair = None
    if fixed_pair:
        pair = forward_noise(x0, t_fix, schedule, rng)
    r = probe_report(params)
    print(f"\n== {name} ==", flush=True)
    print(f"  init: L{t_fix}-val={r.get('L' + str(t_fix), float('nan')):.3f} "
          f"rms_s={r['rms_s']:.4f}", flush=True)
    for step in range(1, n_steps + 1):
        x_t, eps = pair if pair else forward_noise(x0, t_fix, schedule, rng)
        loss, grads = loss_and_gradients([(x_t, gf, eps)], params, UNIT_BOX)
        adam.update(params.flat, grads, lr, tc.adam_beta1, tc.adam_beta2, tc.adam_eps)
        if step % report_every == 0:
            r = probe_report(params)
            print(f"  step {step:5d}: train={loss:7.3f} L10={r['L10']:.3f} "
                  f"L30={r['L30']:.3f} L60={r['L60']:.3f} rms_s={r['rms_s']:.4f} "
                  f"rms_u={r['rms_u']:.4f}", flush=True)
    print(f"  [{time.time()-t0:.0f}s]", flush=True)


if which == "T10":
    run_fixed_t("T10 all draws at t=10, lr 5e-3", 0.005, 1500, 10, False, 150)
elif which == "F10":
    run_fixed_t("F10 one fixed pair at t=10, lr 5e-3", 0.005, 800, 10, True, 100)
