"""
A look at one Sort-of-CLEVR scene
=================================

Six coloured shapes, ten non-relational and ten relational questions, and
the answers the oracle assigns.  The rendered image is written as a PPM.
"""

import numpy as np

from entitystream import sortofclevr as soc
from entitystream.cli import write_ppm

scene = soc.make_scene(7)
for obj in scene.objects:
    print(f"{obj.color:>6s} {obj.shape:<9s} at ({obj.x:5.1f}, {obj.y:5.1f})")

subtypes = {"nonrel": ["shape?", "left of center?", "below center?"],
            "birel": ["shape of closest?", "shape of furthest?", "how many share its shape?"]}
for sample in soc.generate_questions(scene, np.random.default_rng(7)):
    color, family, subtype = soc.decode_question(sample.question)
    print(f"{family:6s} {soc.COLORS[color]:>6s}: {subtypes[family][subtype]:<26s} -> {soc.ANSWERS[sample.answer]}")

write_ppm("scene_7.ppm", soc.render(scene))
print("image written to scene_7.ppm")

# round trip through the binary file format
data = soc.generate_dataset(3, seed=0)
soc.write_dataset(data, "three_scenes.soc")
back = soc.read_dataset("three_scenes.soc")
print(len(back), "samples read back; answers identical:", np.array_equal(back.answers, data.answers))
