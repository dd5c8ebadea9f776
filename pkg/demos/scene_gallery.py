"""
Scene synthesis gallery
=======================

Renders a handful of base scenes, multi-instance scenes, and query-prior
images to PPM files under demos/output/, and prints the query that goes
with each base scene. Open the PPMs with any image viewer.
"""

from pathlib import Path

from vglab.prior import render_prior
from vglab.scene import (
    DetectorNoise,
    detect,
    rasterize,
    sample_base_scene,
    sample_multi_instance_scene,
    write_ppm,
)

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

print("base scenes (long-tail distractor counts):")
for seed in range(4):
    spec, sample = sample_base_scene(seed)
    write_ppm(rasterize(spec), out / f"base_{seed}.ppm")
    print(
        f"  base_{seed}.ppm: {len(spec.objects)} objects, "
        f"query={' '.join(sample.tokens)!r}, distractors={sample.distractor_count}"
    )

print("\nmulti-instance scenes (augmentation source):")
for seed, count in ((0, 3), (1, 6), (2, 9)):
    spec = sample_multi_instance_scene("circle", count, seed=seed)
    write_ppm(rasterize(spec), out / f"multi_{count}_{seed}.ppm")
    dets = detect(spec, DetectorNoise(sigma=0.02), seed=seed)
    print(f"  multi_{count}_{seed}.ppm: asked for {count}, got {len(spec.objects)}, "
          f"detector found {len(dets)}")

print("\nquery-conditioned priors:")
_, sample = sample_base_scene(1)
write_ppm(render_prior(sample), out / "prior_example.ppm")
print(f"  prior_example.ppm renders {' '.join(sample.tokens)!r} centered")
