"""Post-mortem of the failed c7 pilot: what did 800 epochs actually learn?"""
import sys

import numpy as np

sys.path.insert(0, "/root/pkg/src")
from pbcdiff.box import PeriodicBox, wrap_within
from pbcdiff.diffusion import UNIT_BOX, DiffusionSchedule, forward_noise
from pbcdiff.io import load_checkpoint, load_conformation
from pbcdiff.network import GlobalFeatures, predict_noise

params, _, _, meta, history = load_checkpoint("/root/pkg/.pilot/c7_checkpoint.npz")
history = np.asarray(history)
print(f"history: n={len(history)} first={history[0]:.4f} last={history[-1]:.4f}")
print(f"  min={history.min():.4f} (epoch {history.argmin()})  max={history.max():.1f} (epoch {history.argmax()})")
spikes = np.flatnonzero(history > 4.0)
print(f"  epochs with mean loss > 4: {len(spikes)} -> {spikes[:30]}")
q = np.quantile(history[history < 4.0], [0.1, 0.5, 0.9])
print(f"  non-spike quantiles 10/50/90%: {q.round(4)}")
# trailing trend: mean of each quarter
quarters = [history[i:i + 200][history[i:i + 200] < 4.0].mean() for i in range(0, 800, 200)]
print(f"  quarter means (spikes excluded): {np.round(quarters, 4)}")

conf = load_conformation("/root/pkg/.pilot/c7_reference.npz")
x0 = wrap_within(conf.coordinates / conf.box.lengths, UNIT_BOX)
schedule = DiffusionSchedule()
rng = np.random.default_rng(99)
print("\nper-t quality of the trained denoiser (fresh forward draws, 8 reps):")
print("  t    sqrt(a)   loss=|e-ehat|^2/N   |ehat|rms   corr(e,ehat)")
for t in (2, 5, 10, 20, 35, 50, 80, 120, 250, 500):
    losses, mags, corrs = [], [], []
    for _ in range(8):
        x_t, eps = forward_noise(x0, t, schedule, rng)
        ehat = predict_noise(x_t, GlobalFeatures(t_frac=t / 500), params, UNIT_BOX).astype(np.float64)
        losses.append(np.sum((eps - ehat) ** 2) / eps.shape[0])
        mags.append(np.sqrt(np.mean(ehat ** 2)))
        corrs.append(np.corrcoef(eps.ravel(), ehat.ravel())[0, 1])
    a = schedule.alpha(t)
    print(f"  {t:3d}  {np.sqrt(a):7.4f}   {np.mean(losses):10.4f}      {np.mean(mags):8.4f}   {np.mean(corrs):+.4f}")

# Scalar Bayes floor for the wrapped channel, known x0 (optimistic bound:
# ignores particle-assignment ambiguity).  y = (x0 + sqrt(a) e) mod 1.
# MMSE per component = E Var(e | y), branch posterior over integer shifts.
print("\nscalar Bayes floor per component (known x0):")
ms = np.arange(-8, 9)[:, None]
floor = {}
for t in (2, 5, 10, 20, 35, 50, 80, 120, 250, 500):
    a = schedule.alpha(t)
    sa = np.sqrt(a)
    eps_g = np.random.default_rng(1).standard_normal(20000)
    # branch values of eps consistent with the observation: eps + m/sa
    cand = eps_g[None, :] + ms / sa
    logw = -0.5 * cand ** 2
    logw -= logw.max(axis=0)
    w = np.exp(logw)
    w /= w.sum(axis=0)
    mean = (w * cand).sum(axis=0)
    var = (w * cand ** 2).sum(axis=0) - mean ** 2
    floor[t] = var.mean()
    print(f"  t={t:3d} sqrt(a)={sa:.4f}  MMSE={var.mean():.4f}  (loss floor {3*var.mean():.3f} of 3.0)")

alphas = DiffusionSchedule().alphas
all_f = []
for t in range(1, 501):
    sa = np.sqrt(alphas[t])
    eps_g = np.random.default_rng(2).standard_normal(4000)
    cand = eps_g[None, :] + ms / sa
    logw = -0.5 * cand ** 2
    logw -= logw.max(axis=0)
    w = np.exp(logw)
    w /= w.sum(axis=0)
    mean = (w * cand).sum(axis=0)
    var = (w * cand ** 2).sum(axis=0) - mean ** 2
    all_f.append(var.mean())
all_f = np.asarray(all_f)
print(f"\nmean Bayes-floor loss over t=1..500: {3 * all_f.mean():.4f} of 3.0 "
      f"(so best possible epoch-mean decrease ~{100 * (1 - all_f.mean()):.1f}%)")
print(f"t where MMSE < 0.5: t <= {np.flatnonzero(all_f < 0.5).max() + 1}")
print(f"t where MMSE < 0.1: t <= {np.flatnonzero(all_f < 0.1).max() + 1}")
