"""Dataset ingestion, crop augmentation, and synthetic data generation.

Two annotation formats are supported:

* the landmark training format: lines ``# <relative-image-path>`` start a
  block; each following line is ``x y w h`` optionally followed by five
  ``px py vis`` triples where ``vis < 0`` or ``px == -1`` marks a missing
  point;
* the official attribute-bearing ground-truth format (image path, face
  count, then ``x y w h blur expression illumination invalid occlusion
  pose`` rows), plus the distributed ``.mat`` evaluation lists with their
  easy/medium/hard memberships.

Pixel values are normalized as ``(v - 127.5) / 127.5`` before entering the
network.
"""

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import geometry
from .rng import substream

PIXEL_MEAN = 127.5
PIXEL_SCALE = 127.5

# landmark template as (x, y) fractions of the face box, entries ordered
# left eye, right eye, nose, left mouth, right mouth (viewer's left = smaller x)
LANDMARK_TEMPLATE = np.array(
    [(0.30, 0.35), (0.70, 0.35), (0.50, 0.55), (0.33, 0.75), (0.67, 0.75)]
)


class AnnotationError(ValueError):
    """Malformed annotation text; carries the offending line number."""

    def __init__(self, line_number, message):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass
class Face:
    """One ground-truth face: box, optional landmarks, attribute flags."""

    box: np.ndarray                      # (4,) x1 y1 x2 y2
    landmarks: np.ndarray | None = None  # (5, 2) with -1 sentinel
    landmark_valid: np.ndarray | None = None  # (5,) bool
    blur: int = 0
    occlusion: int = 0
    pose: int = 0
    invalid: bool = False

    def __post_init__(self):
        self.box = np.asarray(self.box, dtype=np.float64)
        if self.landmarks is not None:
            self.landmarks = np.asarray(self.landmarks, dtype=np.float64).reshape(5, 2)
            if self.landmark_valid is None:
                self.landmark_valid = geometry.landmark_valid_mask(self.landmarks)
            self.landmark_valid = np.asarray(self.landmark_valid, dtype=bool)


@dataclass
class Annotation:
    image_path: str
    faces: list = field(default_factory=list)

    def trainable_faces(self):
        return [f for f in self.faces if not f.invalid]


@dataclass
class Sample:
    """One training sample: fixed-size image plus surviving annotations."""

    image: np.ndarray  # (H, W, 3) uint8
    faces: list


def normalize_image(image):
    """uint8 HWC image to float32 in [-1, 1]."""
    return (np.asarray(image, dtype=np.float32) - PIXEL_MEAN) / PIXEL_SCALE


def parse_annotations(label_text):
    """Parse the landmark training format into Annotations.

    Raises:
        AnnotationError: on a malformed line, with its 1-based line number.
    """
    annotations = []
    current = None
    for lineno, raw in enumerate(label_text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            current = Annotation(image_path=line[1:].strip())
            annotations.append(current)
            continue
        if current is None:
            raise AnnotationError(lineno, "face line before any '# <image>' header")
        tokens = line.split()
        if len(tokens) not in (4, 19):
            raise AnnotationError(
                lineno, f"expected 4 or 19 numbers per face line, got {len(tokens)}"
            )
        try:
            values = [float(t) for t in tokens]
        except ValueError:
            raise AnnotationError(lineno, f"non-numeric token in {line!r}") from None
        x, y, w, h = values[:4]
        if w < 0 or h < 0:
            raise AnnotationError(lineno, "negative box size")
        face = Face(box=np.array([x, y, x + w, y + h]))
        if len(values) == 19:
            pts = np.full((5, 2), geometry.LANDMARK_SENTINEL)
            valid = np.zeros(5, dtype=bool)
            for i in range(5):
                px, py, vis = values[4 + 3 * i : 7 + 3 * i]
                if vis < 0 or px == -1:
                    continue
                pts[i] = (px, py)
                valid[i] = True
            face.landmarks = pts
            face.landmark_valid = valid
        current.faces.append(face)
    return annotations


def _format_number(v):
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def serialize_annotations(annotations):
    """Inverse of :func:`parse_annotations` (canonical number formatting)."""
    lines = []
    for ann in annotations:
        lines.append(f"# {ann.image_path}")
        for face in ann.faces:
            x1, y1, x2, y2 = face.box
            parts = [x1, y1, x2 - x1, y2 - y1]
            if face.landmarks is not None:
                for i in range(5):
                    if face.landmark_valid[i]:
                        parts.extend([face.landmarks[i, 0], face.landmarks[i, 1], 1.0])
                    else:
                        parts.extend([-1.0, -1.0, -1.0])
            lines.append(" ".join(_format_number(p) for p in parts))
    return "\n".join(lines) + "\n"


def parse_wider_bbx_gt(text):
    """Parse the official attribute-bearing ground-truth text format."""
    lines = [ln.rstrip("\n") for ln in text.splitlines()]
    annotations = []
    i = 0
    lineno = 0
    while i < len(lines):
        path = lines[i].strip()
        lineno = i + 1
        i += 1
        if not path:
            continue
        if i >= len(lines):
            raise AnnotationError(lineno + 1, "missing face count")
        try:
            count = int(lines[i].strip())
        except ValueError:
            raise AnnotationError(i + 1, f"expected face count, got {lines[i]!r}") from None
        i += 1
        ann = Annotation(image_path=path)
        if count == 0:
            # official files carry one all-zero placeholder row here
            probe = lines[i].split() if i < len(lines) else []
            if len(probe) == 10 and set(probe) == {"0"}:
                i += 1
            annotations.append(ann)
            continue
        for _ in range(count):
            if i >= len(lines):
                raise AnnotationError(i, "truncated face block")
            tokens = lines[i].split()
            if len(tokens) != 10:
                raise AnnotationError(i + 1, f"expected 10 fields, got {len(tokens)}")
            x, y, w, h, blur, _expr, _illum, invalid, occl, pose = (float(t) for t in tokens)
            i += 1
            ann.faces.append(
                Face(
                    box=np.array([x, y, x + w, y + h]),
                    blur=int(blur),
                    occlusion=int(occl),
                    pose=int(pose),
                    invalid=bool(int(invalid)),
                )
            )
        annotations.append(ann)
    return annotations


def _mat_str(value):
    return str(np.asarray(value).reshape(-1)[0])


def load_wider_eval_mat(gt_dir):
    """Load the distributed WIDER evaluation .mat files.

    The files hold parallel (events, 1) cell arrays, each cell an
    (images, 1) cell array of per-image face matrices or 1-based keep
    index lists.

    Args:
        gt_dir: directory holding ``wider_face_val.mat`` and the
            ``wider_{easy,medium,hard}_val.mat`` difficulty lists.

    Returns:
        dict: ``{"<event>/<image>": {"boxes": (N, 4), "sets": {name: keep mask}}}``
        with boxes converted from x y w h to corner form.
    """
    from scipy.io import loadmat

    main = loadmat(os.path.join(gt_dir, "wider_face_val.mat"))
    sets = {
        name: loadmat(os.path.join(gt_dir, f"wider_{name}_val.mat"))
        for name in ("easy", "medium", "hard")
    }

    records = {}
    num_events = main["event_list"].shape[0]
    for e in range(num_events):
        event_name = _mat_str(main["event_list"][e, 0])
        files = main["file_list"][e, 0]
        boxes_per_file = main["face_bbx_list"][e, 0]
        for f in range(files.shape[0]):
            image_name = _mat_str(files[f, 0])
            raw = np.asarray(boxes_per_file[f, 0], dtype=np.float64).reshape(-1, 4)
            boxes = raw.copy()
            boxes[:, 2:] = raw[:, :2] + raw[:, 2:]
            key = f"{event_name}/{image_name}"
            records[key] = {"boxes": boxes, "sets": {}}
            for set_name, mat in sets.items():
                keep = np.asarray(mat["gt_list"][e, 0][f, 0], dtype=np.int64).reshape(-1)
                mask = np.zeros(len(boxes), dtype=bool)
                if keep.size:
                    mask[keep - 1] = True  # MATLAB indices are 1-based
                records[key]["sets"][set_name] = mask
    return records


def random_crop(image, faces, rng, crop_size=640):
    """Random fixed-size crop with center-inside face retention.

    Images smaller than ``crop_size`` on a side are first upscaled so the
    short side reaches ``crop_size``. A face survives iff its box center
    lies inside the window; surviving boxes are clipped to the window and
    landmark points falling outside it are invalidated to the sentinel.

    Args:
        image: (H, W, 3) uint8 array.
        faces: list of Face.
        rng: numpy Generator (use ``substream(seed, "crop", epoch, index)``).
        crop_size: output side length.

    Returns:
        Sample with an exactly crop_size x crop_size image.
    """
    image = np.asarray(image)
    h, w = image.shape[:2]
    scale = 1.0
    if min(h, w) < crop_size:
        scale = crop_size / min(h, w)
        new_w, new_h = int(np.ceil(w * scale)), int(np.ceil(h * scale))
        image = np.asarray(
            Image.fromarray(image).resize((new_w, new_h), Image.BILINEAR)
        )
        h, w = image.shape[:2]

    x0 = int(rng.integers(0, w - crop_size + 1))
    y0 = int(rng.integers(0, h - crop_size + 1))
    window = image[y0 : y0 + crop_size, x0 : x0 + crop_size]

    kept = []
    for face in faces:
        box = face.box * scale
        cx = (box[0] + box[2]) / 2 - x0
        cy = (box[1] + box[3]) / 2 - y0
        if not (0 <= cx < crop_size and 0 <= cy < crop_size):
            continue
        shifted = box - (x0, y0, x0, y0)
        clipped = geometry.clip_boxes(shifted, crop_size, crop_size)
        new_face = Face(
            box=clipped,
            blur=face.blur,
            occlusion=face.occlusion,
            pose=face.pose,
            invalid=face.invalid,
        )
        if face.landmarks is not None:
            pts = face.landmarks * scale - (x0, y0)
            valid = face.landmark_valid.copy()
            inside = (
                (pts[:, 0] >= 0)
                & (pts[:, 0] <= crop_size)
                & (pts[:, 1] >= 0)
                & (pts[:, 1] <= crop_size)
            )
            valid &= inside
            pts[~valid] = geometry.LANDMARK_SENTINEL
            new_face.landmarks = pts
            new_face.landmark_valid = valid
        kept.append(new_face)
    return Sample(image=np.ascontiguousarray(window), faces=kept)


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the synthetic desk-scale dataset."""

    num_images: int = 50
    image_size: int = 256
    min_faces: int = 1
    max_faces: int = 4
    min_face: int = 24
    max_face: int = 96
    background_noise: int = 40
    max_placement_tries: int = 50

    def __post_init__(self):
        if self.min_face < 10:
            raise ValueError("face size below the 10 px floor")
        if self.max_face > self.image_size:
            raise ValueError("max_face exceeds image_size")


def _render_face(image, x, y, side, brightness, rng):
    """Draw one high-contrast face patch and return its landmark points."""
    s = int(side)
    patch = np.full((s, s, 3), brightness, dtype=np.int16)
    texture = rng.integers(-12, 13, size=(s, s, 1))
    patch = np.clip(patch + texture, 0, 255).astype(np.uint8)
    image[y : y + s, x : x + s] = patch

    pts = LANDMARK_TEMPLATE * side + (x, y)
    mark = max(1, s // 16)
    for px, py in pts:
        x0, y0 = int(round(px)) - mark, int(round(py)) - mark
        image[max(0, y0) : y0 + 2 * mark + 1, max(0, x0) : x0 + 2 * mark + 1] = 20
    return pts


def synth_dataset(config: SynthConfig, seed: int):
    """Generate a deterministic synthetic dataset.

    Faces are textured bright squares with five dark template keypoints on
    a dim noise background; annotations are exact by construction. Face
    placements within one image are rejection-sampled to avoid overlap.

    Returns:
        list of (image, Annotation) pairs; Annotation.image_path is the
        canonical relative name ``synth/img_<k>.png``.
    """
    dataset = []
    for index in range(config.num_images):
        rng = substream(seed, "synth", index)
        size = config.image_size
        image = rng.integers(0, config.background_noise, size=(size, size, 3)).astype(
            np.uint8
        )
        num_faces = int(rng.integers(config.min_faces, config.max_faces + 1))
        placed = []
        ann = Annotation(image_path=f"synth/img_{index:04d}.png")
        for _ in range(num_faces):
            for _ in range(config.max_placement_tries):
                side = int(rng.integers(config.min_face, config.max_face + 1))
                x = int(rng.integers(0, size - side + 1))
                y = int(rng.integers(0, size - side + 1))
                box = np.array([x, y, x + side, y + side], dtype=np.float64)
                if all(geometry.iou(box, other) < 0.05 for other in placed):
                    break
            else:
                continue
            placed.append(box)
            brightness = int(rng.integers(170, 240))
            pts = _render_face(image, x, y, side, brightness, rng)
            ann.faces.append(Face(box=box, landmarks=pts))
        dataset.append((image, ann))
    return dataset


def write_synth_dataset(out_dir, config: SynthConfig, seed: int):
    """Render a synthetic dataset to PNGs plus a label file.

    Layout: ``<out_dir>/synth/img_XXXX.png`` and ``<out_dir>/labels.txt``
    in the landmark training format.
    """
    dataset = synth_dataset(config, seed)
    os.makedirs(os.path.join(out_dir, "synth"), exist_ok=True)
    annotations = []
    for image, ann in dataset:
        Image.fromarray(image).save(os.path.join(out_dir, ann.image_path))
        annotations.append(ann)
    label_path = os.path.join(out_dir, "labels.txt")
    with open(label_path, "w") as fh:
        fh.write(serialize_annotations(annotations))
    return label_path


def load_image(path):
    """Decode an image file to (H, W, 3) uint8 RGB."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def load_dataset(label_path, image_root=None):
    """Read a label file and return [(image, Annotation)] with decoded images."""
    root = image_root if image_root is not None else os.path.dirname(label_path)
    with open(label_path) as fh:
        annotations = parse_annotations(fh.read())
    return [(load_image(os.path.join(root, ann.image_path)), ann) for ann in annotations]
