"""Train a small multi-encoder autoencoder on synthetic mixtures and pull
the pulse source back out.

This is a scaled-down version of the full benchmark (fewer scenes and a
narrower model) so it finishes in a couple of minutes on a laptop. Expect
the best encoder to track the pulse beats far better than the raw mixture;
full-scale numbers live in the acceptance suite.
"""

import time
from pathlib import Path

import numpy as np

from pulsesep.autodiff import Tensor
from pulsesep.losses import LossConfig
from pulsesep.model import (
    MEAEConfig,
    decode,
    infer_source,
    init_params,
    zero_encodings,
)
from pulsesep.preprocessing import scale_and_pad
from pulsesep.synthetic import (
    generate_scene,
    make_validation_fn,
    random_scene_configs,
    score_separation,
)
from pulsesep.training import TrainConfig, save_checkpoint, select_best_epoch, train

out_dir = Path("demo_output/04_train_separator")
out_dir.mkdir(parents=True, exist_ok=True)

t0 = time.time()
train_scenes = [generate_scene(c) for c in random_scene_configs(48, meta_seed=11)]
val_scenes = [generate_scene(c) for c in random_scene_configs(12, meta_seed=12)]
segments = [scale_and_pad(s.mixture) for s in train_scenes]
print(f"{len(train_scenes)} training scenes, {len(val_scenes)} validation scenes")

config = MEAEConfig(num_encoders=3, encoder_channels=(8, 16),
                    encoding_channels=2, decoder_group_width=4, seed=0)
params = init_params(config)
print(f"model: {config.num_encoders} encoders, "
      f"{sum(p.data.size for p in params.parameters())} parameters")

validate = make_validation_fn(val_scenes, config)
train_cfg = TrainConfig(epochs=12, batch_size=8, learning_rate=2e-3, seed=0,
                        eval_every=3, checkpoint_dir=str(out_dir / "ckpt"))
reports = train(params, config, segments, train_cfg, LossConfig(),
                log_path=str(out_dir / "epoch_log.csv"),
                validate_fn=validate)

for r in reports:
    line = (f"epoch {r.epoch:2d}  recon {r.losses.recon:.4f}  "
            f"mixing {r.losses.mixing:.5f}  zero {r.losses.zero_recon:.5f}")
    if r.encoder_rmse is not None:
        line += "  val RMSE " + " ".join(f"{v:7.2f}" for v in r.encoder_rmse)
    print(line)

epoch, encoder = select_best_epoch(reports)
print(f"\nbest epoch {epoch}, encoder {encoder}")

# score that encoder on one held-out scene
scene = val_scenes[0]
x = Tensor(scale_and_pad(scene.mixture).data[None, None, :])
estimate = infer_source(params, config, x, encoder).data[0, 0, 72:-72]
score = score_separation(estimate, scene)
raw = score_separation(scene.mixture, scene)
print(f"held-out scene: encoder HR RMSE {score.hr.rmse:.2f} BPM "
      f"vs mixture {raw.hr.rmse:.2f} BPM")
print(f"|corr| with sources: " + ", ".join(
    f"{k} {v:.3f}" for k, v in score.correlations.items()))

z_max = decode(params, config, zero_encodings(config)).data.max()
print(f"decode(all-zero encodings) max amplitude: {z_max:.4f}")
save_checkpoint(params, config, out_dir / "final.meae")
print(f"saved checkpoint to {out_dir}/final.meae "
      f"({time.time() - t0:.0f} s total)")
