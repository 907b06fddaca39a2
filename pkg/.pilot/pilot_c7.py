"""Dry run of the unconditional-generation pipeline at the acceptance state point.

Validates data quality, training stability, and the sampled-RDF thresholds
before the same protocol is frozen into the acceptance tests.
"""
import json
import sys
import time

import numpy as np

sys.path.insert(0, "/root/pkg/src")

from pbcdiff.box import PeriodicBox
from pbcdiff.diffusion import DiffusionSchedule, TrainConfig, sample, train
from pbcdiff.io import apply_augmentation, save_checkpoint, save_conformation
from pbcdiff.md import MDConfig, run_anneal
from pbcdiff.network import DenoiserConfig
from pbcdiff.potential import OPPParams
from pbcdiff.rdf import compute_rdf, first_peak_bin, rdf_mse

t_start = time.time()

cfg = MDConfig(temperature=0.03, n_particles=256, number_density=1.0)
pot = OPPParams(k=7.0, phi=2.0)
import os
if os.path.exists("/root/pkg/.pilot/c7_reference.npz"):
    from pbcdiff.io import load_conformation
    conf = load_conformation("/root/pkg/.pilot/c7_reference.npz")
    thermo = [(0, cfg.temperature, 0.0)]
    print(f"[{time.time()-t_start:7.1f}s] reusing cached reference", flush=True)
else:
    print(f"[{time.time()-t_start:7.1f}s] MD anneal start, box L={cfg.box.lengths[0]:.4f}", flush=True)
    conf, thermo = run_anneal(cfg, pot, seed=2025)
    save_conformation("/root/pkg/.pilot/c7_reference.npz", conf)
ref_rdf = compute_rdf(conf)
pk = first_peak_bin(ref_rdf)
print(f"[{time.time()-t_start:7.1f}s] MD done. final T={thermo[-1][1]:.4f} PE={thermo[-1][2]:.3f}", flush=True)
print(f"  reference RDF: first peak bin {pk} r={ref_rdf.bin_centers[pk]:.3f} g={ref_rdf.values[pk]:.3f}", flush=True)
print(f"  g values around peak: {np.array2string(ref_rdf.values[max(0,pk-3):pk+4], precision=3)}", flush=True)

dataset = [apply_augmentation(conf, i) for i in range(48)]
dconfig = DenoiserConfig()
tconfig = TrainConfig()
schedule = DiffusionSchedule()
print(f"[{time.time()-t_start:7.1f}s] training: {len(dataset)} items x {tconfig.epochs} epochs", flush=True)
params, history = train(dataset, dconfig, tconfig, schedule, seed=0, log_every=10)
save_checkpoint("/root/pkg/.pilot/c7_checkpoint.npz", params, schedule.n_steps, schedule.s,
                {"pipeline": "c7-pilot"}, history)
print(f"[{time.time()-t_start:7.1f}s] training done. loss[0]={history[0]:.4f} loss[-1]={history[-1]:.4f}", flush=True)

rng = np.random.default_rng(12345)
trace_steps = [490, 400, 300, 200, 100, 50, 0]
sampled, trace = sample(256, params, schedule, conf.box, rng, trace_steps=trace_steps)
save_conformation("/root/pkg/.pilot/c7_sampled.npz", sampled)
s_rdf = compute_rdf(sampled)
mse = rdf_mse(s_rdf, ref_rdf)
spk = first_peak_bin(s_rdf)
trace_mse = {t: rdf_mse(compute_rdf(trace[t]), ref_rdf) for t in trace_steps}
print(f"[{time.time()-t_start:7.1f}s] sampled: RDF-MSE={mse:.5f} peak bin {spk} (ref {pk})", flush=True)
print(f"  trace MSE: {json.dumps({str(k): round(v, 5) for k, v in trace_mse.items()})}", flush=True)

metrics = {
    "reference_peak_bin": int(pk),
    "sampled_peak_bin": int(spk),
    "rdf_mse": float(mse),
    "trace_mse": {str(k): float(v) for k, v in trace_mse.items()},
    "loss_first": float(history[0]),
    "loss_last": float(history[-1]),
    "final_md_temperature": float(thermo[-1][1]),
    "elapsed_s": time.time() - t_start,
}
with open("/root/pkg/.pilot/c7_metrics.json", "w") as fh:
    json.dump(metrics, fh, indent=2)
print(f"[{time.time()-t_start:7.1f}s] PILOT C7 COMPLETE", flush=True)
