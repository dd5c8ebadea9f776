"""
Relation pseudo-queries from detections
=======================================

Generates a multi-instance scene, runs the noisy detector stub, assigns
spatial relation labels to the detected boxes, and emits the pseudo-query
pairs that survive the uniqueness oracle. Labels are computed on the same
detected boxes used as regression targets, so supervision stays consistent
even when the detector drifts, drops, or hallucinates.
"""

from vglab.queries import generate_pseudo_pairs
from vglab.relations import assign_relations, resolve_query
from vglab.scene import DetectorNoise, detect, sample_multi_instance_scene

spec = sample_multi_instance_scene("square", count=5, seed=42)
print(f"scene {spec.scene_id}: {len(spec.objects)} squares")

dets = detect(spec, DetectorNoise(sigma=0.02, drop_p=0.1, spurious_p=0.1), seed=42)
print(f"detector returned {len(dets)} boxes ({dets.provenance})")

labels = assign_relations(list(dets.boxes))
for i, labs in labels.items():
    b = dets.boxes[i]
    names = ", ".join(sorted(l.value for l in labs)) or "-"
    print(f"  box {i} (cx={b.cx:.2f}, cy={b.cy:.2f}, area={b.area():.3f}): {names}")

pairs = generate_pseudo_pairs(dets, "square", spec.scene_id)
print(f"\n{len(pairs)} pseudo-query pairs survive the cap and uniqueness check:")
for p in pairs:
    idx = resolve_query(p.relation, list(dets.boxes))
    print(f"  {' '.join(p.tokens)!r:28s} -> box {idx} (resolver agrees)")
