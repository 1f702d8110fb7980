"""EquivCNP: set encoder into a functional embedding, LieConv decoder, Gaussian head.

Two pathways share the same structure ``decoder(encoder(context))``:

* :class:`EquivCNP` for scattered inputs. The encoder smooths
  ``phi(y) = [1, y, ..., y^K]`` with an RBF kernel onto the targets plus a
  uniform grid spanning the data, and a stack of LieConv layers reads the
  predictive mean and scale off at the targets.
* :class:`ImageEquivCNP` for images on a pixel lattice. The encoder is itself
  a LieConv applied to the mask and the masked image, followed by residual
  blocks of separable LieConvs.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Linear, Module, Tensor, parameter
from .data import TaskSet, pixel_coordinates
from .errors import DimensionError
from .groups import GROUPS, GroupTag, lift_points
from .lieconv import LieConv, SeparableLieConv, calibrate_radius

DENSITY_EPS = 1e-8


@dataclass
class PredictiveDistribution:
    mu: Tensor
    sigma: Tensor


def phi_embed(y, K: int = 1) -> np.ndarray:
    """Power features ``[1, y, ..., y^K]``.

    For an output vector (or rows of them) the result is K+1 blocks of d_y
    columns, so the leading block is the density channel.
    """
    if K < 1:
        raise ValueError("multiplicity K must be >= 1")
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    return np.concatenate([y ** k for k in range(K + 1)], axis=-1)


def rbf_psi(x, x_prime, bandwidth: float, scale: float = 1.0):
    """``scale * exp(-|x - x'|^2 / (2 bandwidth^2))``."""
    diff = np.asarray(x, dtype=np.float64) - np.asarray(x_prime, dtype=np.float64)
    d2 = np.sum(np.atleast_1d(diff) ** 2, axis=-1)
    return scale * np.exp(-0.5 * d2 / bandwidth ** 2)


def make_grid(lower, upper, gamma: float, margin: float = 0.0) -> np.ndarray:
    """Uniform lattice over ``[lower - margin, upper + margin]`` per dimension
    with ``ceil(gamma * extent) + 1`` points each; returns (n, d)."""
    lower = np.atleast_1d(np.asarray(lower, dtype=np.float64)) - margin
    upper = np.atleast_1d(np.asarray(upper, dtype=np.float64)) + margin
    if gamma <= 0:
        raise ValueError("grid density gamma must be positive")
    if np.any(upper < lower):
        raise ValueError("lower bound exceeds upper bound")
    axes = [np.linspace(lo, hi, int(np.ceil(gamma * (hi - lo) - 1e-9)) + 1)
            for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


class RBFEncoder(Module):
    """Set-to-function encoder ``h(e) = sum_i phi(y_i) psi(e, x_i)``.

    One bandwidth and one scale are shared across all phi channels; both are
    stored as logs.
    """

    def __init__(self, bandwidth=0.125, scale=1.0, K=1):
        self.K = K
        self.log_bandwidth = parameter(np.log(bandwidth))
        self.log_scale = parameter(np.log(scale))

    @property
    def bandwidth(self):
        return float(np.exp(self.log_bandwidth.data))

    def psi(self, eval_points, x_context) -> Tensor:
        d2 = np.sum((eval_points[:, None, :] - x_context[None, :, :]) ** 2, axis=-1)
        inv_bw2 = ad.exp(self.log_bandwidth * -2.0)
        return ad.exp(self.log_scale - (Tensor(0.5 * d2) * inv_bw2))

    def __call__(self, x_context, y_context, eval_points) -> Tensor:
        return encode(x_context, y_context, eval_points, self)


def encode(x_context, y_context, eval_points, psi: RBFEncoder) -> Tensor:
    eval_points = np.asarray(eval_points, dtype=np.float64)
    if len(eval_points) == 0:
        raise ValueError("no evaluation points")
    y_context = np.asarray(y_context, dtype=np.float64)
    d_y = y_context.shape[1] if y_context.ndim == 2 else 1
    y_context = y_context.reshape(len(x_context), d_y)
    width = (psi.K + 1) * y_context.shape[1]
    if len(x_context) == 0:
        return Tensor(np.zeros((len(eval_points), width)))
    x_context = np.asarray(x_context, dtype=np.float64).reshape(len(x_context), -1)
    feats = phi_embed(y_context, psi.K).reshape(len(x_context), width)
    return ad.matmul(psi.psi(eval_points, x_context), Tensor(feats))


def normalize_embedding(h: Tensor, d_y: int) -> Tensor:
    """Keep the density block, divide the remaining blocks by it."""
    density = h[:, :d_y]
    rest = h[:, d_y:]
    k = rest.shape[1] // d_y
    denom = density + DENSITY_EPS
    if k > 1:
        denom = ad.concat([denom] * k, axis=1)
    return ad.concat([density, rest / denom], axis=1)


@dataclass
class RegressionConfig:
    tag: str = "T1"
    d_y: int = 1
    K: int = 1
    channels: tuple = (16, 32, 16, 8)
    fraction: float = 5 / 32
    n_mc: int = 25
    alpha: float = 1.0
    gamma: float = 16.0
    grid_margin: float = 0.25
    init_bandwidth: float = 0.125
    sigma_floor: float = 1e-4
    smooth_output: bool = False
    k_lift: int = 1
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


class EquivCNP(Module):
    """RBF-encoder EquivCNP for scattered inputs (the 1D regression pathway)."""

    def __init__(self, config: RegressionConfig | None = None, **overrides):
        cfg = config or RegressionConfig()
        if overrides:
            cfg = RegressionConfig(**{**cfg.to_dict(), **overrides})
        cfg.channels = tuple(cfg.channels)
        self.config = cfg
        self.tag = GroupTag.parse(cfg.tag)
        rng = np.random.default_rng(cfg.seed)
        self.psi = RBFEncoder(cfg.init_bandwidth, 1.0, cfg.K)
        chans = [(cfg.K + 1) * cfg.d_y, *cfg.channels]
        self.decoder = [LieConv(self.tag, a, b, rng, fraction=cfg.fraction, n_mc=cfg.n_mc,
                                alpha=cfg.alpha, bias=True)
                        for a, b in zip(chans[:-1], chans[1:])]
        self.head = Linear(chans[-1], 2 * cfg.d_y, rng)
        if cfg.smooth_output:
            self.log_out_bandwidth = parameter(np.log(cfg.init_bandwidth))

    @property
    def group(self):
        return GROUPS[self.tag]

    @property
    def radius(self):
        return self.decoder[0].radius

    def set_radius(self, r):
        for layer in self.decoder:
            layer.radius = None if r is None else float(r)

    def evaluation_points(self, task: TaskSet):
        pts = np.concatenate([task.x_context, task.x_target], axis=0)
        grid = make_grid(pts.min(axis=0), pts.max(axis=0), self.config.gamma,
                         self.config.grid_margin)
        return np.concatenate([task.x_target, grid], axis=0), len(task.x_target)

    def lift(self, points, rng=None):
        return lift_points(points, self.tag, self.config.k_lift, rng)

    def calibrate(self, tasks, rng=None) -> float:
        """Set the shared decoder radius to the mean calibrated radius over ``tasks``."""
        radii = []
        for task in tasks:
            pts, _ = self.evaluation_points(task)
            lifted = self.lift(pts, np.random.default_rng(0))
            radii.append(calibrate_radius(lifted, self.config.fraction, self.config.alpha, rng))
        self.set_radius(float(np.mean(radii)))
        return self.radius

    def embed(self, task: TaskSet):
        pts, m = self.evaluation_points(task)
        return self.psi(task.x_context, task.y_context, pts), pts, m

    def __call__(self, task: TaskSet, rng=None, exact=False) -> PredictiveDistribution:
        return predict(self, task, rng=rng, exact=exact)

    def decode(self, h: Tensor, points, n_targets, rng=None, exact=False, x_target=None):
        return decode(h, points, n_targets, self, rng=rng, exact=exact, x_target=x_target)


def decode(h: Tensor, points, n_targets, model: EquivCNP, rng=None, exact=False,
           x_target=None) -> PredictiveDistribution:
    """Run the LieConv stack on the embedding and read (mu, sigma) at the targets.

    ``points`` are the evaluation locations of ``h`` with the targets first.
    """
    cfg = model.config
    rng = np.random.default_rng(0) if rng is None else rng
    lifted = model.lift(points, rng)
    if model.radius is None:
        model.set_radius(calibrate_radius(lifted, cfg.fraction, cfg.alpha))
    x = normalize_embedding(h, cfg.d_y)
    x = ad.take(x, lifted.src, axis=0)
    for layer in model.decoder:
        x = ad.relu(layer(lifted, lifted, x, rng=rng, exact=exact))
    x = _pool_lifts(x, lifted.src, len(points))
    if cfg.smooth_output:
        grid = points[n_targets:]
        targets = points[:n_targets] if x_target is None else x_target
        z = model.head(x[n_targets:])
        d2 = np.sum((targets[:, None, :] - grid[None, :, :]) ** 2, axis=-1)
        w = ad.exp(Tensor(-0.5 * d2) * ad.exp(model.log_out_bandwidth * -2.0))
        out = ad.matmul(w, z)
    else:
        out = model.head(x[:n_targets])
    d_y = cfg.d_y
    mu = out[:, :d_y]
    sigma = ad.clamp_min(ad.softplus(out[:, d_y:]), cfg.sigma_floor)
    return PredictiveDistribution(mu, sigma)


def _pool_lifts(x: Tensor, src, n_points) -> Tensor:
    """Average rows that are lifts of the same input point."""
    if len(src) == n_points:
        return x
    import scipy.sparse as sp

    counts = np.bincount(src, minlength=n_points)
    pool = sp.csr_matrix((1.0 / counts[src], (src, np.arange(len(src)))),
                         shape=(n_points, len(src)))
    flat = x.reshape(x.shape[0], -1)
    return ad.sparse_matmul(pool, flat).reshape((n_points,) + x.shape[1:])


def predict(model, task: TaskSet, rng=None, exact=False) -> PredictiveDistribution:
    """Grid over the data range, encode the context, decode at the targets."""
    if isinstance(model, ImageEquivCNP):
        image, mask = task_to_image(task, model.config)
        pred = model(image[None], mask[None], rng=rng, exact=exact)
        return PredictiveDistribution(pred.mu[0], pred.sigma[0])
    h, pts, m = model.embed(task)
    return decode(h, pts, m, model, rng=rng, exact=exact)


def nll_loss(pred: PredictiveDistribution, y_target) -> Tensor:
    """Negative Gaussian log-likelihood averaged over targets (summed over d_y)."""
    y = ad.as_tensor(np.asarray(y_target, dtype=np.float64).reshape(pred.mu.shape))
    n = pred.mu.shape[0] if pred.mu.ndim == 2 else int(np.prod(pred.mu.shape[:-1]))
    return ad.gaussian_log_likelihood(y, pred.mu, pred.sigma) * (-1.0 / n)


def log_likelihood(pred: PredictiveDistribution, y_target) -> float:
    """Mean per-target log-likelihood (the reported metric)."""
    return -float(nll_loss(pred, y_target).data)


# -- image pathway --------------------------------------------------------------
@dataclass
class ImageConfig:
    tag: str = "RxSO2"
    channels_in: int = 1
    image_size: int = 64
    enc_channels: int = 128
    enc_fraction: float = 1 / 10
    enc_n_mc: int = 121
    channels: int = 128
    n_blocks: int = 4
    block_fraction: float = 1 / 15
    block_n_mc: int = 81
    alpha: float = 1.0
    sigma_floor: float = 1e-4
    k_lift: int = 1
    seed: int = 0

    def to_dict(self):
        return asdict(self)


class ResidualBlock(Module):
    """``x + conv2(relu(conv1(relu(x))))`` with separable LieConvs."""

    def __init__(self, tag, channels, rng, fraction, n_mc, alpha):
        self.conv1 = SeparableLieConv(tag, channels, channels, rng, fraction, n_mc, alpha)
        self.conv2 = SeparableLieConv(tag, channels, channels, rng, fraction, n_mc, alpha)

    def __call__(self, lifted, x, rng=None, exact=False):
        y = self.conv1(lifted, lifted, ad.relu(x), rng=rng, exact=exact)
        y = self.conv2(lifted, lifted, ad.relu(y), rng=rng, exact=exact)
        return x + y


def encode_image(image, mask, conv_psi: LieConv, lifted, rng=None, exact=False) -> Tensor:
    """Apply ``conv_psi`` to the density ``M`` and the masked image ``I * M``.

    ``image`` is (B, C, H, W) (or (C, H, W)), ``mask`` is (B, H, W) of {0, 1}.
    Returns the embedding in points-first layout: (rows, B, 2 * c_out), density
    block first.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if image.ndim == 3:
        image, mask = image[None], mask[None]
    b, c, hgt, wid = image.shape
    if mask.shape != (b, hgt, wid):
        raise DimensionError(f"mask shape {mask.shape} does not match image {image.shape}")
    if c != conv_psi.c_in:
        raise DimensionError(f"conv_psi expects {conv_psi.c_in} channels, image has {c}")
    dens = np.broadcast_to(mask[:, None], image.shape)
    signal = image * dens
    # (H*W, 2B, C): density images then signal images share one kernel evaluation
    stacked = np.concatenate([dens, signal], axis=0).reshape(2 * b, c, -1).transpose(2, 0, 1)
    rows = stacked[lifted.src]
    out = conv_psi(lifted, lifted, Tensor(rows), rng=rng, exact=exact)
    return ad.concat([out[:, :b], out[:, b:]], axis=2)


class ImageEquivCNP(Module):
    def __init__(self, config: ImageConfig | None = None, **overrides):
        cfg = config or ImageConfig()
        if overrides:
            cfg = ImageConfig(**{**cfg.to_dict(), **overrides})
        self.config = cfg
        self.tag = GroupTag.parse(cfg.tag)
        rng = np.random.default_rng(cfg.seed)
        self.conv_psi = LieConv(self.tag, cfg.channels_in, cfg.enc_channels, rng,
                                fraction=cfg.enc_fraction, n_mc=cfg.enc_n_mc, alpha=cfg.alpha)
        self.fc_in = Linear(2 * cfg.enc_channels, cfg.channels, rng)
        self.blocks = [ResidualBlock(self.tag, cfg.channels, rng, cfg.block_fraction,
                                     cfg.block_n_mc, cfg.alpha) for _ in range(cfg.n_blocks)]
        self.fc_out = Linear(cfg.channels, 2 * cfg.channels_in, rng)
        coords = pixel_coordinates(cfg.image_size, cfg.image_size)
        # stabilizer draws are fixed per model so neighborhoods stay cached
        self.lifted = lift_points(coords, self.tag, cfg.k_lift,
                                  np.random.default_rng(cfg.seed + 1))
        self.calibrate()

    def calibrate(self):
        cfg = self.config
        self.conv_psi.calibrate(self.lifted)
        r = calibrate_radius(self.lifted, cfg.block_fraction, cfg.alpha)
        for blk in self.blocks:
            blk.conv1.radius = blk.conv2.radius = r

    def radii(self):
        return {"encoder": self.conv_psi.radius,
                "blocks": self.blocks[0].conv1.radius if self.blocks else None}

    def __call__(self, images, masks, rng=None, exact=False) -> PredictiveDistribution:
        """Predictions for every pixel: mu and sigma of shape (B, H*W, C)."""
        rng = np.random.default_rng(0) if rng is None else rng
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[:, None]
        n_pix = images.shape[2] * images.shape[3]
        h = encode_image(images, masks, self.conv_psi, self.lifted, rng=rng, exact=exact)
        x = self.fc_in(h)
        for blk in self.blocks:
            x = blk(self.lifted, x, rng=rng, exact=exact)
        out = self.fc_out(ad.relu(x))
        out = _pool_lifts(out, self.lifted.src, n_pix)
        c = self.config.channels_in
        out = out.transpose(1, 0, 2)
        mu = out[:, :, :c]
        sigma = ad.clamp_min(ad.softplus(out[:, :, c:]), self.config.sigma_floor)
        return PredictiveDistribution(mu, sigma)


def task_to_image(task: TaskSet, cfg: ImageConfig):
    """Rebuild (image, mask) on the pixel lattice from an image TaskSet."""
    size = cfg.image_size
    image = np.zeros((task.y_context.shape[1], size, size))
    mask = np.zeros((size, size))
    if task.n_context:
        cols = np.rint(((task.x_context[:, 0] + 1.0) * size - 1.0) / 2.0).astype(int)
        rows = np.rint(((1.0 - task.x_context[:, 1]) * size - 1.0) / 2.0).astype(int)
        image[:, rows, cols] = task.y_context.T
        mask[rows, cols] = 1.0
    return image, mask


def image_log_likelihood(pred: PredictiveDistribution, images) -> np.ndarray:
    """Per-image mean log-likelihood over pixels and channels."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[:, None]
    b, c = images.shape[:2]
    y = images.reshape(b, c, -1).transpose(0, 2, 1)
    mu, sigma = pred.mu.data, pred.sigma.data
    ll = -0.5 * np.log(2 * np.pi * sigma ** 2) - 0.5 * ((y - mu) / sigma) ** 2
    return ll.reshape(b, -1).mean(axis=1)


# -- checkpoints ------------------------------------------------------------------
def model_header(model) -> dict:
    """Config header stored next to the parameters.

    The calibrated radii are stored too, so a reloaded model keeps the
    receptive field it was trained with.
    """
    if isinstance(model, ImageEquivCNP):
        return {"architecture": "image2d", "model": model.config.to_dict(), "radii": model.radii()}
    return {"architecture": "regress1d", "model": model.config.to_dict(),
            "radii": {"decoder": model.radius}}


def build_model(header: dict):
    if header["architecture"] == "image2d":
        return ImageEquivCNP(ImageConfig(**header["model"]))
    cfg = dict(header["model"])
    cfg["channels"] = tuple(cfg["channels"])
    model = EquivCNP(RegressionConfig(**cfg))
    radius = header.get("radii", {}).get("decoder")
    if radius is not None:
        model.set_radius(radius)
    return model


def save_model(path, model, extra: dict | None = None) -> None:
    header = model_header(model)
    if extra:
        header.update(extra)
    ad.save_checkpoint(path, model.state_dict(), header)


def load_model(path):
    """Rebuild a model from a checkpoint; returns (model, header)."""
    params, header = ad.load_checkpoint(path)
    model = build_model(header)
    model.load_state_dict(params)
    return model, header
