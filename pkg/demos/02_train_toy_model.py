"""
Train a toy model on procedural clips
=====================================

Every step samples one of six rate constraints, codes a 3-frame clip
(I, then P against the coded I, then B between the two coded frames),
and takes a single Adam step on the summed rate-distortion loss. The
whole system trains end to end from scratch; there is no pre-training
of any component.

200 steps at f=4 take about a minute and already show the loss moving;
the full toy configuration used by the acceptance suite is 2000 steps
at f=8.
"""

from ccvc import TrainConfig, train_loop

cfg = TrainConfig(steps=200, crop_size=32, f=4, seed=7,
                  checkpoint_every=100, out_dir="runs/demo_toy")
result = train_loop(cfg, progress=True)

first = [s.loss for s in result.history[:20]]
last = [s.loss for s in result.history[-20:]]
print(f"mean loss, first 20 steps: {sum(first) / len(first):.3f}")
print(f"mean loss, last 20 steps:  {sum(last) / len(last):.3f}")
print(f"checkpoint written to {result.checkpoint_path}")
print(f"step log written to {result.log_path}")
