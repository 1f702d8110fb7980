"""Task generators: GP-sampled 1D regression tasks and seven-segment digits.

Also holds the small file formats used for dumps: CSV task files and binary
PGM images.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import NumericError

KERNEL_KINDS = ("rbf", "matern52", "periodic")


@dataclass(frozen=True)
class KernelSpec:
    """Unit-variance stationary kernel plus a diagonal jitter.

    The default jitter of 1e-5 doubles as the observation-noise floor that the
    oracle GP conditions on; 1e-8 would make the oracle log-likelihood far
    larger than the published scale.
    """

    kind: str = "rbf"
    jitter: float = 1e-5

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"kernel kind must be one of {KERNEL_KINDS}, got {self.kind!r}")
        if not self.jitter > 0:
            raise ValueError("jitter must be positive")


def _lag(x1, x2):
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.ndim <= 1 and x2.ndim <= 1:
        return np.abs(x1 - x2)
    return np.linalg.norm(x1 - x2, axis=-1)


def kernel_from_lag(kind, d):
    if kind == "rbf":
        return np.exp(-0.5 * d * d)
    if kind == "matern52":
        s5 = np.sqrt(5.0) * d
        return (1.0 + s5 + 5.0 / 3.0 * d * d) * np.exp(-s5)
    if kind == "periodic":
        return np.exp(-2.0 * np.sin(np.pi * d) ** 2)
    raise ValueError(kind)


def kernel_eval(spec: KernelSpec, x1, x2):
    """k(x1, x2) for scalars or broadcastable arrays (no jitter)."""
    return kernel_from_lag(spec.kind, _lag(x1, x2))


def kernel_matrix(spec: KernelSpec, xa, xb=None):
    xa = np.asarray(xa, dtype=np.float64).reshape(len(xa), -1)
    xb = xa if xb is None else np.asarray(xb, dtype=np.float64).reshape(len(xb), -1)
    d = np.linalg.norm(xa[:, None, :] - xb[None, :, :], axis=-1)
    return kernel_from_lag(spec.kind, d)


def stable_cholesky(k, jitter, max_jitter=1e-4):
    """Lower Cholesky factor of ``k + jitter I``; jitter grows x10 on failure."""
    eye = np.eye(len(k))
    j = jitter
    while True:
        try:
            return np.linalg.cholesky(k + j * eye), j
        except np.linalg.LinAlgError:
            if j >= max_jitter:
                raise NumericError(f"Cholesky failed with jitter up to {j:g}") from None
            j = min(j * 10.0, max_jitter)


def gp_sample(spec: KernelSpec, xs, rng) -> np.ndarray:
    """One zero-mean GP draw at ``xs``.

    Repeated locations share one function value, and the draw is made over
    the sorted unique locations, so permuting ``xs`` permutes the output.
    """
    xs = np.asarray(xs, dtype=np.float64)
    flat = xs.reshape(len(xs), -1)
    uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    chol, _ = stable_cholesky(kernel_matrix(spec, uniq), spec.jitter)
    f = chol @ rng.standard_normal(len(uniq))
    return f[inverse]


@dataclass
class TaskSet:
    """One meta-learning task. Locations are (N, d_x); outputs are (N, d_y)."""

    x_context: np.ndarray
    y_context: np.ndarray
    x_target: np.ndarray
    y_target: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x_context = _as2d(self.x_context)
        self.y_context = _as2d(self.y_context)
        self.x_target = _as2d(self.x_target)
        if self.y_target is not None:
            self.y_target = _as2d(self.y_target)
        if len(self.x_context) != len(self.y_context):
            raise ValueError("context x and y lengths differ")

    @property
    def n_context(self):
        return len(self.x_context)

    @property
    def n_target(self):
        return len(self.x_target)

    def permuted_context(self, perm) -> "TaskSet":
        perm = np.asarray(perm)
        return TaskSet(self.x_context[perm], self.y_context[perm], self.x_target,
                       self.y_target, dict(self.meta))


def _as2d(a):
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(-1, 1) if a.ndim <= 1 else a


@dataclass
class TaskConfig1D:
    kernel: KernelSpec = field(default_factory=KernelSpec)
    x_range: tuple = (-2.0, 2.0)
    n_context_range: tuple = (3, 50)
    n_target_range: tuple = (3, 50)

    def __post_init__(self):
        lo, hi = self.x_range
        if not lo < hi:
            raise ValueError("x_range must be a nonempty interval")
        for name in ("n_context_range", "n_target_range"):
            a, b = getattr(self, name)
            if not 1 <= a <= b:
                raise ValueError(f"{name} must satisfy 1 <= low <= high")

    def extrapolation(self, x_range=(-4.0, 4.0)) -> "TaskConfig1D":
        return TaskConfig1D(self.kernel, tuple(x_range), self.n_context_range,
                            self.n_target_range)


def sample_task_1d(cfg: TaskConfig1D, rng, x_context=None, x_target=None) -> TaskSet:
    """Context and targets drawn from one joint GP function sample.

    Counts are uniform on the configured inclusive ranges and locations are
    uniform on ``cfg.x_range``; explicit locations override the draws.
    """
    lo, hi = cfg.x_range
    if x_context is None:
        n_c = int(rng.integers(cfg.n_context_range[0], cfg.n_context_range[1] + 1))
    if x_target is None:
        n_t = int(rng.integers(cfg.n_target_range[0], cfg.n_target_range[1] + 1))
    if x_context is None:
        x_context = rng.uniform(lo, hi, size=n_c)
    if x_target is None:
        x_target = rng.uniform(lo, hi, size=n_t)
    x_context = np.asarray(x_context, dtype=np.float64).reshape(-1)
    x_target = np.asarray(x_target, dtype=np.float64).reshape(-1)
    ys = gp_sample(cfg.kernel, np.concatenate([x_context, x_target]), rng)
    n_c = len(x_context)
    meta = {"kind": "regress1d", "kernel": cfg.kernel.kind, "x_range": list(cfg.x_range)}
    return TaskSet(x_context, ys[:n_c], x_target, ys[n_c:], meta)


# -- seven-segment digits ---------------------------------------------------------
IMAGE_SIZE = 64
GLYPH_HEIGHT = 56
GLYPH_WIDTH = 30
STROKE = 7

SEGMENTS = {
    0: "abcdef", 1: "bc", 2: "abged", 3: "abgcd", 4: "fgbc",
    5: "afgcd", 6: "afgedc", 7: "abc", 8: "abcdefg", 9: "abcdfg",
}


def _segment_boxes(width, height, stroke):
    """(x0, x1, y0, y1) boxes in glyph coordinates, y pointing down."""
    mid = height / 2.0
    half = stroke / 2.0
    return {
        "a": (0, width, 0, stroke),
        "g": (0, width, mid - half, mid + half),
        "d": (0, width, height - stroke, height),
        "f": (0, stroke, 0, mid + half),
        "e": (0, stroke, mid - half, height),
        "b": (width - stroke, width, 0, mid + half),
        "c": (width - stroke, width, mid - half, height),
    }


@dataclass
class DigitImage:
    pixels: np.ndarray
    label: int
    scale: float = 1.0
    angle: float = 0.0


def render_digit(label: int, size=IMAGE_SIZE, height=GLYPH_HEIGHT, width=GLYPH_WIDTH,
                 stroke=STROKE) -> DigitImage:
    """White-on-black seven-segment glyph, vertically ``height`` px tall and
    horizontally centered on its lit pixels."""
    if label not in SEGMENTS:
        raise ValueError("label must be a digit 0-9")
    img = np.zeros((size, size))
    boxes = _segment_boxes(width, height, stroke)
    lit = [boxes[s] for s in SEGMENTS[label]]
    x_lo = min(b[0] for b in lit)
    x_hi = max(b[1] for b in lit)
    left = int(round((size - (x_hi - x_lo)) / 2.0 - x_lo))
    top = (size - height) // 2
    for x0, x1, y0, y1 in lit:
        img[int(top + y0):int(top + np.ceil(y1)), int(left + x0):int(left + x1)] = 1.0
    return DigitImage(img, int(label))


def pixel_coordinates(h=IMAGE_SIZE, w=IMAGE_SIZE) -> np.ndarray:
    """(h*w, 2) row-major pixel centers in [-1, 1]^2 with y pointing up.

    Centers sit at odd multiples of 1/w, so none is the origin.
    """
    xs = (2.0 * np.arange(w) + 1.0) / w - 1.0
    ys = 1.0 - (2.0 * np.arange(h) + 1.0) / h
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def transform_image(img, scale: float, angle: float):
    """Scale and rotate (radians, counterclockwise) about the image center.

    Inverse-map bilinear resampling; samples falling outside are background.
    Accepts a DigitImage or a bare (H, W) array and returns the same kind.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    pixels = img.pixels if isinstance(img, DigitImage) else np.asarray(img, dtype=np.float64)
    h, w = pixels.shape
    pts = pixel_coordinates(h, w)
    c, s = np.cos(-angle), np.sin(-angle)
    src = np.stack([c * pts[:, 0] - s * pts[:, 1], s * pts[:, 0] + c * pts[:, 1]], 1) / scale
    cols = ((src[:, 0] + 1.0) * w - 1.0) / 2.0
    rows = ((1.0 - src[:, 1]) * h - 1.0) / 2.0
    out = ndimage.map_coordinates(pixels, [rows, cols], order=1, mode="constant", cval=0.0)
    out = np.clip(out.reshape(h, w), 0.0, 1.0)
    if isinstance(img, DigitImage):
        return DigitImage(out, img.label, img.scale * scale, img.angle + angle)
    return out


def digit_dataset(labels=range(10)) -> list[DigitImage]:
    return [render_digit(k) for k in labels]


def random_test_transform(rng, scale_range=(0.15, 0.5), angle_range_deg=(-90.0, 90.0)):
    scale = rng.uniform(*scale_range)
    angle = np.deg2rad(rng.uniform(*angle_range_deg))
    return scale, angle


def sample_image_task(img, rng, fraction=None, fraction_range=(0.01, 0.5)):
    """Bernoulli context mask over all pixels; every pixel is a target.

    Without ``fraction`` the keep-probability itself is drawn uniformly from
    ``fraction_range``.
    """
    pixels = img.pixels if isinstance(img, DigitImage) else np.asarray(img, dtype=np.float64)
    if pixels.ndim == 2:
        pixels = pixels[None]
    c, h, w = pixels.shape
    rho = rng.uniform(*fraction_range) if fraction is None else float(fraction)
    mask = (rng.random((h, w)) < rho).astype(np.float64)
    coords = pixel_coordinates(h, w)
    values = pixels.reshape(c, -1).T
    keep = mask.ravel() > 0
    task = TaskSet(coords[keep], values[keep], coords, values,
                   {"kind": "image", "fraction": rho})
    return mask, task


# -- file formats -------------------------------------------------------------
def write_pgm(path, img) -> None:
    """Binary PGM (P5, maxval 255); values are clipped to [0, 1] first."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    h, w = arr.shape
    data = np.round(arr * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode("ascii"))
    if tokens[0] != "P5":
        raise ValueError("only binary PGM (P5) is supported")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    body = np.frombuffer(raw[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    return body.reshape(h, w).astype(np.float64) / maxval


def write_task(path, task: TaskSet) -> None:
    """One task per file: a ``#`` header line, then ``role,x[,x2],y`` rows."""
    header = {"kind": task.meta.get("kind", "regress1d"), "n_context": task.n_context,
              "n_target": task.n_target}
    header.update({k: v for k, v in task.meta.items() if k != "kind"})
    dx = task.x_context.shape[1] if task.n_context else task.x_target.shape[1]
    cols = ["x"] if dx == 1 else [f"x{i + 1}" for i in range(dx)]
    with open(path, "w") as fh:
        fh.write("# " + " ".join(f"{k}={_fmt(v)}" for k, v in header.items()) + "\n")
        fh.write("role," + ",".join(cols) + ",y\n")
        for role, xs, ys in (("context", task.x_context, task.y_context),
                             ("target", task.x_target, task.y_target)):
            if ys is None:
                continue
            for x, y in zip(xs, ys):
                fh.write(role + "," + ",".join(repr(float(v)) for v in x) + ","
                         + ",".join(repr(float(v)) for v in y) + "\n")


def _fmt(v):
    if isinstance(v, (list, tuple)):
        return ":".join(str(x) for x in v)
    return str(v)


def read_task(path) -> TaskSet:
    with open(path) as fh:
        header_line = fh.readline()
        columns = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    meta = dict(item.split("=", 1) for item in header_line[1:].split())
    dx = len(columns) - 2
    ctx = np.array([[float(v) for v in r[1:]] for r in rows if r[0] == "context"]).reshape(-1, dx + 1)
    tgt = np.array([[float(v) for v in r[1:]] for r in rows if r[0] == "target"]).reshape(-1, dx + 1)
    return TaskSet(ctx[:, :dx], ctx[:, dx:], tgt[:, :dx], tgt[:, dx:], meta)
