"""Sort-of-CLEVR scenes, questions and the binary dataset format.

Each scene holds six objects, one per color, each a square or a disc.  Questions
are 11-dim binary vectors laid out as ``[color one-hot (6) | family one-hot (2)
| subtype one-hot (3)]``.  Answers index a fixed ten-token vocabulary.

Pixel ``(row, col)`` covers the unit square ``[col, col+1) x [row, row+1)``, so
the image center sits at 37.5 and "below" means a larger row coordinate.
"""

from dataclasses import dataclass
import os
import struct

import numpy as np

from .errors import FormatError, GenerationError, VocabularyError

IMAGE_SIZE = 75
N_OBJECTS = 6
HALF_SIZE = 5
QUESTIONS_PER_FAMILY = 10
MAX_PLACEMENT_TRIES = 1000
BACKGROUND = (0.1, 0.1, 0.1)
CENTER = IMAGE_SIZE / 2

COLORS = ("red", "green", "blue", "orange", "gray", "yellow")
COLOR_RGB = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "orange": (1.0, 0.5, 0.0),
    "gray": (0.5, 0.5, 0.5),
    "yellow": (1.0, 1.0, 0.0),
}
SHAPES = ("rectangle", "circle")
FAMILIES = ("nonrel", "birel")
SUBTYPES = {
    "nonrel": ("shape", "left_of_center", "below_center"),
    "birel": ("closest_shape", "furthest_shape", "count_same_shape"),
}
ANSWERS = ("yes", "no", "rectangle", "circle", "1", "2", "3", "4", "5", "6")
QUESTION_DIM = len(COLORS) + len(FAMILIES) + 3
N_ANSWERS = len(ANSWERS)


@dataclass(frozen=True)
class SceneObject:
    color: str
    shape: str
    center: tuple

    @property
    def x(self):
        return self.center[0]

    @property
    def y(self):
        return self.center[1]


@dataclass(frozen=True)
class Scene:
    objects: tuple
    seed: object = None


@dataclass
class QASample:
    image: np.ndarray
    question: np.ndarray
    answer: int
    category: str


def generate_scene(rng, seed=None, image_size=IMAGE_SIZE, half_size=HALF_SIZE):
    """Place one object per color by rejection sampling; bounding boxes never overlap."""
    objects = []
    for color in COLORS:
        for _ in range(MAX_PLACEMENT_TRIES):
            center = rng.uniform(half_size, image_size - half_size, size=2)
            if all(max(abs(center[0] - o.x), abs(center[1] - o.y)) > 2 * half_size for o in objects):
                break
        else:
            raise GenerationError(f"could not place the {color} object after {MAX_PLACEMENT_TRIES} tries")
        shape = SHAPES[int(rng.integers(2))]
        objects.append(SceneObject(color, shape, (float(center[0]), float(center[1]))))
    return Scene(tuple(objects), seed)


def make_scene(seed):
    return generate_scene(np.random.default_rng(seed), seed=seed)


def render(scene, image_size=IMAGE_SIZE, half_size=HALF_SIZE):
    image = np.empty((3, image_size, image_size), dtype=np.float32)
    image[:] = np.asarray(BACKGROUND, dtype=np.float32)[:, None, None]
    centers = np.arange(image_size) + 0.5
    for obj in scene.objects:
        dx = centers[None, :] - obj.x
        dy = centers[:, None] - obj.y
        if obj.shape == "rectangle":
            mask = (dx >= -half_size) & (dx < half_size) & (dy >= -half_size) & (dy < half_size)
        else:
            mask = dx * dx + dy * dy < half_size * half_size
        for channel, value in enumerate(COLOR_RGB[obj.color]):
            image[channel][mask] = value
    return image


# ---------------------------------------------------------------------------
# question / answer vocabulary

def _family_index(family):
    if isinstance(family, str):
        if family not in FAMILIES:
            raise IndexError(f"unknown question family {family!r}")
        return FAMILIES.index(family)
    family = int(family)
    if not 0 <= family < len(FAMILIES):
        raise IndexError(f"family index {family} out of range")
    return family


def encode_question(color, family, subtype):
    color, subtype = int(color), int(subtype)
    if not 0 <= color < len(COLORS):
        raise IndexError(f"color index {color} out of range")
    if not 0 <= subtype < 3:
        raise IndexError(f"subtype index {subtype} out of range")
    vec = np.zeros(QUESTION_DIM, dtype=np.float32)
    vec[color] = 1.0
    vec[len(COLORS) + _family_index(family)] = 1.0
    vec[len(COLORS) + len(FAMILIES) + subtype] = 1.0
    return vec


def decode_question(vec):
    """Inverse of ``encode_question``: returns (color, family name, subtype)."""
    vec = np.asarray(vec)
    if vec.shape != (QUESTION_DIM,) or np.count_nonzero(vec) != 3:
        raise ValueError(f"not a valid question vector: {vec}")
    color = int(np.argmax(vec[:6]))
    family = FAMILIES[int(np.argmax(vec[6:8]))]
    subtype = int(np.argmax(vec[8:]))
    return color, family, subtype


def answer_index(answer):
    token = str(answer)
    if token not in ANSWERS:
        raise VocabularyError(f"unknown answer token {answer!r}")
    return ANSWERS.index(token)


def answer_scene(scene, color, family, subtype):
    """Ground-truth answer token for one question about ``scene``."""
    objects = scene.objects
    target_index = next(i for i, o in enumerate(objects) if o.color == COLORS[color])
    target = objects[target_index]
    if _family_index(family) == 0:
        if subtype == 0:
            return target.shape
        if subtype == 1:
            return "yes" if target.x < CENTER else "no"
        return "yes" if target.y > CENTER else "no"

    if subtype == 2:
        return str(sum(o.shape == target.shape for o in objects))
    distances = [np.hypot(o.x - target.x, o.y - target.y) for o in objects]
    others = [i for i in range(len(objects)) if i != target_index]
    # scanning in index order with strict comparisons keeps the lowest index on ties
    best = others[0]
    for i in others[1:]:
        if (distances[i] < distances[best]) if subtype == 0 else (distances[i] > distances[best]):
            best = i
    return objects[best].shape


def generate_questions(scene, rng, n_per_family=QUESTIONS_PER_FAMILY, image=None):
    """``n_per_family`` non-relational then ``n_per_family`` relational samples.

    All samples share one rendered image array.
    """
    if image is None:
        image = render(scene)
    samples = []
    for family in FAMILIES:
        for _ in range(n_per_family):
            color = int(rng.integers(len(COLORS)))
            subtype = int(rng.integers(3))
            answer = answer_scene(scene, color, family, subtype)
            samples.append(QASample(image, encode_question(color, family, subtype),
                                    answer_index(answer), family))
    return samples


# ---------------------------------------------------------------------------
# in-memory dataset

class Dataset:
    """QA samples with deduplicated images.

    ``images`` is (M, 3, H, W); sample k uses ``images[image_index[k]]``.
    Categories are stored as 0 (nonrel) / 1 (birel).
    """

    def __init__(self, images, image_index, questions, answers, categories):
        self.images = np.asarray(images, dtype=np.float32)
        self.image_index = np.asarray(image_index, dtype=np.int64)
        self.questions = np.asarray(questions, dtype=np.float32)
        self.answers = np.asarray(answers, dtype=np.int64)
        self.categories = np.asarray(categories, dtype=np.uint8)

    def __len__(self):
        return len(self.answers)

    def __getitem__(self, k):
        return QASample(self.images[self.image_index[k]], self.questions[k],
                        int(self.answers[k]), FAMILIES[self.categories[k]])

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    def batch(self, indices):
        indices = np.asarray(indices)
        return (self.images[self.image_index[indices]], self.questions[indices],
                self.answers[indices])

    def subset(self, indices):
        indices = np.asarray(indices)
        used, remap = np.unique(self.image_index[indices], return_inverse=True)
        return Dataset(self.images[used], remap, self.questions[indices],
                       self.answers[indices], self.categories[indices])

    @classmethod
    def from_samples(cls, samples):
        images, index, seen = [], [], {}
        for s in samples:
            key = id(s.image)
            if key not in seen:
                seen[key] = len(images)
                images.append(s.image)
            index.append(seen[key])
        shape = (0, 3, IMAGE_SIZE, IMAGE_SIZE)
        return cls(np.stack(images) if images else np.zeros(shape, np.float32), index,
                   np.array([s.question for s in samples], dtype=np.float32).reshape(-1, QUESTION_DIM),
                   [s.answer for s in samples],
                   [FAMILIES.index(s.category) for s in samples])


def generate_dataset(n_scenes, seed=0, n_per_family=QUESTIONS_PER_FAMILY, return_scenes=False):
    """Scene ``k`` is generated from its own generator seeded with ``seed + k``."""
    images, index, questions, answers, categories, scenes = [], [], [], [], [], []
    for k in range(n_scenes):
        rng = np.random.default_rng(seed + k)
        scene = generate_scene(rng, seed=seed + k)
        image = render(scene)
        for s in generate_questions(scene, rng, n_per_family, image=image):
            index.append(k)
            questions.append(s.question)
            answers.append(s.answer)
            categories.append(FAMILIES.index(s.category))
        images.append(image)
        scenes.append(scene)
    if not images:
        data = Dataset.from_samples([])
    else:
        data = Dataset(np.stack(images), index, np.array(questions), answers, categories)
    return (data, scenes) if return_scenes else data


# ---------------------------------------------------------------------------
# binary file format

MAGIC = b"SOC1"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")
SAMPLE_DTYPE = np.dtype([
    ("image", "<f4", (3, IMAGE_SIZE, IMAGE_SIZE)),
    ("question", "<f4", (QUESTION_DIM,)),
    ("answer", "u1"),
    ("category", "u1"),
])


def write_dataset(samples, path, chunk=512):
    data = samples if isinstance(samples, Dataset) else Dataset.from_samples(list(samples))
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, len(data)))
        for start in range(0, len(data), chunk):
            stop = min(start + chunk, len(data))
            block = np.empty(stop - start, dtype=SAMPLE_DTYPE)
            block["image"] = data.images[data.image_index[start:stop]]
            block["question"] = data.questions[start:stop]
            block["answer"] = data.answers[start:stop]
            block["category"] = data.categories[start:stop]
            f.write(block.tobytes())


def read_dataset(path):
    size = os.path.getsize(path)
    if size < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the {_HEADER.size}-byte header", offset=size)
    with open(path, "rb") as f:
        magic, version, count = _HEADER.unpack(f.read(_HEADER.size))
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version}", offset=4)
    expected = _HEADER.size + count * SAMPLE_DTYPE.itemsize
    if size < expected:
        whole = (size - _HEADER.size) // SAMPLE_DTYPE.itemsize
        raise FormatError(f"{path}: truncated after {whole} of {count} samples",
                          offset=_HEADER.size + whole * SAMPLE_DTYPE.itemsize)
    if size > expected:
        raise FormatError(f"{path}: {size - expected} trailing bytes after {count} samples", offset=expected)
    if count == 0:
        return Dataset.from_samples([])

    records = np.memmap(path, dtype=SAMPLE_DTYPE, mode="r", offset=_HEADER.size, shape=(count,))
    bad = np.flatnonzero((records["answer"] >= N_ANSWERS) | (records["category"] > 1))
    if bad.size:
        k = int(bad[0])
        raise FormatError(f"{path}: sample {k} has an invalid answer or category",
                          offset=_HEADER.size + k * SAMPLE_DTYPE.itemsize + SAMPLE_DTYPE.fields["answer"][1])
    # consecutive samples usually share an image; keep one copy per run
    images, index = [], np.empty(count, dtype=np.int64)
    previous = None
    for k in range(count):
        img = records["image"][k]
        if previous is None or not np.array_equal(img, previous):
            previous = np.array(img)
            images.append(previous)
        index[k] = len(images) - 1
    data = Dataset(np.stack(images), index, np.array(records["question"]),
                   np.array(records["answer"]), np.array(records["category"]))
    del records
    return data
