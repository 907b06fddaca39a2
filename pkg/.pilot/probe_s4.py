"""Scaled noise + variance-preserving (He-uniform) init + literal batch-1 lr 5e-3."""
import sys
import time

import numpy as np

sys.path.insert(0, "/root/pkg/src")
from pbcdiff.box import wrap_within
from pbcdiff.diffusion import (
    UNIT_BOX, AdamState, DiffusionSchedule, posterior_var,
)
from pbcdiff.io import Conformation, load_conformation
from pbcdiff.network import (
    DenoiserConfig, DenoiserParams, GlobalFeatures, _mlp_dims,
    loss_and_gradients, n_parameters, predict_noise,
)
from pbcdiff.rdf import compute_rdf, first_peak_bin, rdf_mse

GAIN = float(sys.argv[2]) if len(sys.argv) > 2 else 2.449


def init_gained(config, seed, gain):
    rng = np.random.default_rng(seed)
    flat = np.zeros(n_parameters(config), dtype=np.float64)
    offset = 0
    for dims in _mlp_dims(config):
        for a, b in zip(dims[:-1], dims[1:]):
            s = gain * np.sqrt(1.0 / a)
            flat[offset:offset + a * b] = rng.uniform(-s, s, size=a * b)
            offset += a * b + b
    return DenoiserParams(config, flat.astype(np.float32))


conf = load_conformation("/root/pkg/.pilot/c7_reference.npz")
x0 = wrap_within(conf.coordinates / conf.box.lengths, UNIT_BOX)
L = float(conf.box.lengths[0])
C = 1.0 / L
schedule = DiffusionSchedule()
dconfig = DenoiserConfig()
ref_rdf = compute_rdf(conf)
ref_peak = first_peak_bin(ref_rdf)


def fwd(x, t, rng):
    eps = rng.standard_normal(x.shape)
    x_t = wrap_within(x + np.sqrt(schedule.alpha(t)) * C * eps, UNIT_BOX)
    return x_t, eps


def sample_scaled(params, rng, n=256):
    x = rng.random((n, 3))
    for t in range(schedule.n_steps, 0, -1):
        gf = GlobalFeatures(t_frac=t / 500)
        ehat = predict_noise(x, gf, params, UNIT_BOX).astype(np.float64)
        a_t, a_prev = schedule.alpha(t), schedule.alpha(t - 1)
        mu = x + (a_prev / a_t - 1.0) * np.sqrt(a_t) * C * ehat
        if t > 1:
            mu = mu + C * np.sqrt(posterior_var(t, schedule)) * rng.standard_normal(x.shape)
        x = wrap_within(mu, UNIT_BOX)
    return Conformation(coordinates=wrap_within(x * conf.box.lengths, conf.box),
                        box=conf.box, source="sampled", timestep=0)


val_rng = np.random.default_rng(1000)
probes = {}
for t in (10, 100, 250, 500):
    x_t, eps = fwd(x0, t, val_rng)
    probes[t] = (x_t, eps, GlobalFeatures(t_frac=t / 500))


def report(params):
    parts = []
    for t, (x_t, eps, gf) in probes.items():
        ehat = predict_noise(x_t, gf, params, UNIT_BOX).astype(np.float64)
        c = float(np.corrcoef(eps.ravel(), ehat.ravel())[0, 1]) if np.std(ehat) > 1e-9 else 0.0
        parts.append(f"L{t}={np.sum((eps - ehat) ** 2) / 256:.3f}/r{c:+.2f}")
    return " ".join(parts)


t0 = time.time()
params = init_gained(dconfig, 0, GAIN)
rng = np.random.default_rng(np.random.SeedSequence((0, 1)))
adam = AdamState(params.n_params, dtype=params.dtype)
print(f"L={L:.4f} C={C:.4f} gain={GAIN}; init: {report(params)}", flush=True)
n_steps = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
for step in range(1, n_steps + 1):
    t = int(rng.integers(1, 501))
    x_t, eps = fwd(x0, t, rng)
    loss, grads = loss_and_gradients([(x_t, GlobalFeatures(t_frac=t / 500), eps)], params, UNIT_BOX)
    if not np.isfinite(loss) or loss > 1e4:
        print(f"DIVERGED at step {step}: loss={loss}", flush=True)
        break
    adam.update(params.flat, grads, 0.005)
    if step % 250 == 0 or step in (50, 100, 150):
        print(f"step {step:5d}: train={loss:7.3f} {report(params)} [{time.time()-t0:.0f}s]", flush=True)
    if step % 1000 == 0:
        s = sample_scaled(params, np.random.default_rng(777 + step))
        srdf = compute_rdf(s)
        print(f"  >> sample after {step}: RDF-MSE={rdf_mse(srdf, ref_rdf):.4f} "
              f"peak_bin={first_peak_bin(srdf)} (ref {ref_peak})", flush=True)
