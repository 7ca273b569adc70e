"""Joint optimization of layer opacity fields, density, and the palette.

The objective is the color reconstruction error plus two regularizers: the
hull feasibility penalty on palette colors and a soft-L0 sparsity penalty on
volume-rendered per-layer opacity. Loss sums are logged raw (summed over the
batch) but normalized by batch size before each update so learning rates do
not depend on batch size; the hull term does not depend on the batch and
enters the update unscaled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import torch

from . import colorhull, dataio, renderer
from .colorhull import ConvexHull3
from .errors import DegenerateInput, NonFiniteLoss, ShapeMismatch
from .field import GridField2D, GridField3D, allocate2d, allocate3d, upsample
from .palette import Palette, apply_order, determine_order, init_palette
from .renderer import Rays, composite_pixels, composite_rays, march

MODES = ("2d", "3d")
ABLATIONS = ("full", "direct_opaque", "fixed_palette")


@dataclass
class TrainConfig:
    mode: str = "2d"
    iterations: int = 2000
    batch_rays: int = 4096
    K: int = 5
    lambda_hull: float = 0.1
    lambda_sparsity: float = 0.01
    eta: float = 12.0
    learning_rate_fields: float = 0.02
    learning_rate_palette: float = 0.005
    seed: int = 0
    ablation: str = "full"
    palette_init: str = "kmeans"
    palette_colors: tuple | None = None   # required for palette_init="user"
    grid_resolution: int = 64
    samples_per_ray: int = 128
    stratified: bool = False
    delta_in: float = 0.1
    delta_out: float = 100.0
    init_density: float = -1.0
    init_logit: float = -2.0
    lr_schedule: str = "constant"         # "constant" | "cosine"
    upsample_steps: tuple = ()
    upsample_resolutions: tuple = ()
    hull_max_points: int = 100_000
    hull_jitter: float = 0.0              # rescue amplitude for flat inputs

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.lambda_hull < 0 or self.lambda_sparsity < 0:
            raise ValueError("loss weights must be >= 0")
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if len(self.upsample_steps) != len(self.upsample_resolutions):
            raise ValueError("upsample steps/resolutions must pair up")


@dataclass(frozen=True)
class LossBreakdown:
    color: float
    hull: float
    sparsity: float
    total: float

    def as_dict(self) -> dict:
        return {
            "color": self.color,
            "hull": self.hull,
            "sparsity": self.sparsity,
            "total": self.total,
        }


def loss_color(rendered: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Summed squared color error over the batch."""
    if rendered.shape != target.shape:
        raise ShapeMismatch(f"{tuple(rendered.shape)} vs {tuple(target.shape)}")
    return ((rendered - target) ** 2).sum()


def loss_sparsity(opaque: torch.Tensor, eta: float) -> torch.Tensor:
    """Soft-L0 of rendered per-layer opacity: sum of sigmoid(eta * E - 6)."""
    return torch.sigmoid(eta * opaque - 6.0).sum()


def loss_total(color: float, hull: float, sparsity: float,
               config: TrainConfig) -> LossBreakdown:
    total = color + config.lambda_hull * hull + config.lambda_sparsity * sparsity
    return LossBreakdown(color, hull, sparsity, total)


def soft_l0_mean(opaque: np.ndarray, eta: float) -> float:
    """Mean soft-L0 response, the layer-usage statistic reported by sweeps."""
    return float((1.0 / (1.0 + np.exp(-(eta * opaque - 6.0)))).mean())


def layer_overlap(layer_weights: np.ndarray) -> float:
    """Mean pairwise min of per-pixel layer weights (decomposition overlap)."""
    flat = layer_weights.reshape(-1, layer_weights.shape[-1])
    n = flat.shape[1]
    total = 0.0
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            total += np.minimum(flat[:, i], flat[:, j]).mean()
            pairs += 1
    return float(total / pairs)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2))
    if mse == 0:
        return math.inf
    return -10.0 * math.log10(mse)


class _HullPenalty(torch.autograd.Function):
    """Feasibility penalty with the fixed-nearest-element subgradient."""

    @staticmethod
    def forward(ctx, colors, hull, delta_in, delta_out):
        value, grad = colorhull.hull_loss(
            hull, colors.detach().numpy(), delta_in, delta_out
        )
        ctx.save_for_backward(torch.as_tensor(grad))
        return colors.new_tensor(value)

    @staticmethod
    def backward(ctx, grad_output):
        (grad,) = ctx.saved_tensors
        return grad_output * grad, None, None, None


def hull_penalty(colors: torch.Tensor, hull: ConvexHull3,
                 delta_in: float, delta_out: float) -> torch.Tensor:
    return _HullPenalty.apply(colors, hull, delta_in, delta_out)


# --------------------------------------------------------------------------
# training state and batches


@dataclass
class Batch2D:
    rows: np.ndarray
    cols: np.ndarray
    targets: torch.Tensor

    def __len__(self):
        return len(self.rows)


@dataclass
class Batch3D:
    rays: Rays              # clipped; hit mask tells which rows intersect
    hit: np.ndarray
    targets: torch.Tensor
    jitter: np.ndarray | None = None

    def __len__(self):
        return len(self.hit)


@dataclass
class TrainState:
    config: TrainConfig
    hull: ConvexHull3
    fields: GridField2D | GridField3D
    palette_colors: torch.Tensor
    palette_template: Palette
    optimizer: torch.optim.Adam
    step_count: int = 0

    @property
    def palette(self) -> Palette:
        return self.palette_template.with_colors(
            self.palette_colors.detach().numpy()
        )

    def parameters(self) -> list[torch.Tensor]:
        if isinstance(self.fields, GridField2D):
            params = [self.fields.opacity_logits]
        else:
            params = [self.fields.density_logits, self.fields.opacity_logits]
        if self.config.ablation != "fixed_palette":
            params = params + [self.palette_colors]
        return params


def _make_optimizer(state_fields, palette_colors, config: TrainConfig):
    if isinstance(state_fields, GridField2D):
        field_params = [state_fields.opacity_logits]
    else:
        field_params = [state_fields.density_logits, state_fields.opacity_logits]
    for p in field_params:
        p.requires_grad_(True)
    groups = [{"params": field_params, "lr": config.learning_rate_fields}]
    if config.ablation != "fixed_palette":
        palette_colors.requires_grad_(True)
        groups.append({"params": [palette_colors],
                       "lr": config.learning_rate_palette})
    return torch.optim.Adam(groups, betas=(0.9, 0.99), eps=1e-8)


def make_state(fields, palette: Palette, hull: ConvexHull3,
               config: TrainConfig) -> TrainState:
    colors = torch.as_tensor(palette.colors.copy())
    opt = _make_optimizer(fields, colors, config)
    return TrainState(config, hull, fields, colors, palette, opt)


def _forward(state: TrainState, batch, config: TrainConfig, step: int):
    """Returns (color_sum, sparsity_sum, batch_size) as tensors/ints."""
    if isinstance(batch, Batch2D):
        rows = torch.as_tensor(batch.rows, dtype=torch.long)
        cols = torch.as_tensor(batch.cols, dtype=torch.long)
        logits = state.fields.opacity_logits[rows, cols]
        out = composite_pixels(logits, state.palette_colors, config.ablation)
        color = loss_color(out.color, batch.targets)
        sparsity = loss_sparsity(out.opaque, config.eta)
        return color, sparsity, len(batch)

    hit_idx = np.flatnonzero(batch.hit)
    rendered = state.palette_colors[0].unsqueeze(0).expand(len(batch), 3)
    sparsity = torch.as_tensor(
        # miss rays render the background and contribute constant E = 0 terms
        (len(batch) - len(hit_idx)) * state.fields.K / (1.0 + math.exp(6.0)),
        dtype=torch.float64,
    )
    if len(hit_idx):
        samples = march(
            batch.rays.take(hit_idx), state.fields, config.samples_per_ray,
            jitter=None if batch.jitter is None else batch.jitter[hit_idx],
        )
        out = composite_rays(samples, state.palette_colors, config.ablation)
        rendered = rendered.index_copy(
            0, torch.as_tensor(hit_idx, dtype=torch.long), out.color
        )
        sparsity = sparsity + loss_sparsity(out.opaque, config.eta)
    color = loss_color(rendered, batch.targets)
    return color, sparsity, len(batch)


def _lr_factor(config: TrainConfig, step: int) -> float:
    if config.lr_schedule == "cosine":
        return 0.5 * (1.0 + math.cos(math.pi * step / max(1, config.iterations)))
    return 1.0


def train_step(state: TrainState, batch, config: TrainConfig,
               step: int) -> LossBreakdown:
    """One optimization step; returns the raw-sum loss breakdown.

    Deterministic given (seed, step). Aborts with NonFiniteLoss and
    diagnostics if any component diverges.
    """
    color_t, sparsity_t, batch_size = _forward(state, batch, config, step)
    hull_t = hull_penalty(
        state.palette_colors, state.hull, config.delta_in, config.delta_out
    )

    breakdown = loss_total(
        float(color_t.item()), float(hull_t.item()), float(sparsity_t.item()),
        config,
    )
    objective = (
        (color_t + config.lambda_sparsity * sparsity_t) / batch_size
        + config.lambda_hull * hull_t
    )

    state.optimizer.zero_grad(set_to_none=True)
    objective.backward()

    if not math.isfinite(breakdown.total):
        max_grad = max(
            (p.grad.abs().max().item() for p in state.parameters()
             if p.grad is not None),
            default=float("nan"),
        )
        raise NonFiniteLoss(step, breakdown.as_dict(), max_grad)

    factor = _lr_factor(config, step)
    base_lrs = [config.learning_rate_fields, config.learning_rate_palette]
    for group, base in zip(state.optimizer.param_groups, base_lrs):
        group["lr"] = base * factor

    if config.ablation != "fixed_palette":
        learnable = torch.as_tensor(state.palette_template.learnable.copy())
        if state.palette_colors.grad is not None:
            state.palette_colors.grad[~learnable] = 0.0

    state.optimizer.step()

    if config.ablation != "fixed_palette":
        with torch.no_grad():
            state.palette_colors.clamp_(-0.25, 1.25)

    state.step_count = step + 1
    return breakdown


class _BatchStream:
    """Epoch-shuffled minibatch index stream, deterministic by seed."""

    def __init__(self, count: int, batch_size: int, seed: int):
        self.count = count
        self.batch_size = min(batch_size, count)
        self.rng = np.random.default_rng(seed)
        self._order = self.rng.permutation(count)
        self._cursor = 0

    def next_indices(self) -> np.ndarray:
        if self._cursor + self.batch_size > self.count:
            self._order = self.rng.permutation(self.count)
            self._cursor = 0
        out = self._order[self._cursor : self._cursor + self.batch_size]
        self._cursor += self.batch_size
        return out


@dataclass
class FitResult:
    fields: GridField2D | GridField3D
    palette: Palette
    hull: ConvexHull3
    history: list
    meta: dict = dc_field(default_factory=dict)


def build_hull_for_pixels(pixels, config: TrainConfig) -> ConvexHull3:
    pts = colorhull.prepare_hull_points(
        pixels, max_points=config.hull_max_points, seed=config.seed
    )
    try:
        return colorhull.build_hull(pts)
    except DegenerateInput:
        if config.hull_jitter <= 0:
            raise
        rng = np.random.default_rng(config.seed)
        jittered = pts + rng.uniform(-config.hull_jitter, config.hull_jitter,
                                     size=pts.shape)
        return colorhull.build_hull(np.clip(jittered, -0.25, 1.25))


def _init_from_dataset(dataset, config: TrainConfig):
    if config.mode == "2d":
        image = np.asarray(dataset, dtype=np.float64)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError("2d dataset must be an (H, W, 3) image")
        pixels = image.reshape(-1, 3)
    else:
        if not isinstance(dataset, dataio.MultiViewDataset):
            raise ValueError("3d dataset must be a MultiViewDataset")
        if len(dataset) == 0:
            raise ValueError("dataset has no frames")
        pixels = dataset.all_pixels()

    hull = build_hull_for_pixels(pixels, config)

    rng = np.random.default_rng(config.seed)
    sample = pixels
    if len(sample) > 200_000:
        sample = sample[rng.choice(len(sample), 200_000, replace=False)]
    palette0 = init_palette(
        config.palette_init, hull, sample, config.K, seed=config.seed,
        colors=config.palette_colors,
    )
    order = determine_order(sample, palette0)
    palette0 = apply_order(palette0, order)

    if config.mode == "2d":
        fields = allocate2d(
            image.shape[0], image.shape[1], config.K,
            init_logit=config.init_logit, seed=config.seed,
        )
        return fields, palette0, hull, image
    res = config.grid_resolution
    resolution = (res, res, res) if np.isscalar(res) else tuple(res)
    fields = allocate3d(
        resolution, config.K, init_density=config.init_density,
        init_logit=config.init_logit, aabb=dataset.aabb, seed=config.seed,
    )
    return fields, palette0, hull, dataset


def _prepare_rays(dataset: dataio.MultiViewDataset):
    origins, dirs, nears, fars, hits, targets = [], [], [], [], [], []
    for cam, image in dataset.frames:
        rays = renderer.camera_rays(cam)
        clipped, hit = renderer.clip_to_aabb(rays, dataset.aabb, cam.near, cam.far)
        origins.append(clipped.origins)
        dirs.append(clipped.directions)
        nears.append(clipped.t_near)
        fars.append(clipped.t_far)
        hits.append(hit)
        targets.append(image.reshape(-1, 3))
    rays = Rays(
        np.concatenate(origins), np.concatenate(dirs),
        np.concatenate(nears), np.concatenate(fars),
    )
    return rays, np.concatenate(hits), torch.as_tensor(np.concatenate(targets))


def fit(dataset, config: TrainConfig, checkpoint_path=None, log_path=None,
        meta_extra: dict | None = None) -> FitResult:
    """Initialize (hull, palette, order, fields) and run the training loop.

    2D datasets are (H, W, 3) images; 3D datasets are MultiViewDataset. The
    per-step history records the raw loss sums plus the batch PSNR. Emits a
    checkpoint (with camera metadata for 3D scenes) when a path is given.
    """
    fields, palette0, hull, data = _init_from_dataset(dataset, config)
    state = make_state(fields, palette0, hull, config)

    if config.mode == "2d":
        image = data
        h, w = image.shape[:2]
        targets_all = torch.as_tensor(image.reshape(-1, 3))
        stream = _BatchStream(h * w, config.batch_rays, config.seed + 1)
    else:
        rays_all, hit_all, targets_all = _prepare_rays(data)
        stream = _BatchStream(len(hit_all), config.batch_rays, config.seed + 1)

    upsample_at = dict(zip(config.upsample_steps, config.upsample_resolutions))
    history = []
    log_fh = open(log_path, "w") if log_path else None
    try:
        for step in range(config.iterations):
            if step in upsample_at and config.mode == "3d":
                res = upsample_at[step]
                resolution = (res, res, res) if np.isscalar(res) else tuple(res)
                state.fields = upsample(state.fields, resolution)
                # Adam moments restart at the new resolution
                state.optimizer = _make_optimizer(
                    state.fields, state.palette_colors, config
                )

            idx = stream.next_indices()
            if config.mode == "2d":
                batch = Batch2D(idx // w, idx % w, targets_all[idx])
            else:
                jitter = None
                if config.stratified:
                    jitter = np.random.default_rng(
                        (config.seed, step)
                    ).random((len(idx), config.samples_per_ray))
                batch = Batch3D(
                    rays_all.take(idx), hit_all[idx], targets_all[idx], jitter
                )

            breakdown = train_step(state, batch, config, step)
            record = {
                "step": step,
                **breakdown.as_dict(),
                "psnr": psnr_from_color_sum(breakdown.color, len(batch)),
            }
            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
    finally:
        if log_fh:
            log_fh.close()

    final_palette = state.palette
    meta = {"config": _config_dict(config)}
    if config.mode == "3d":
        meta["cameras"] = [cam.to_json_dict() for cam in data.cameras]
        meta["views"] = len(data)
    else:
        meta["views"] = 1
    if meta_extra:
        meta.update(meta_extra)
    if checkpoint_path:
        dataio.save_checkpoint(checkpoint_path, state.fields, final_palette, meta)
    return FitResult(state.fields, final_palette, hull, history, meta)


def psnr_from_color_sum(color_sum: float, batch_size: int) -> float:
    mse = color_sum / (3.0 * batch_size)
    if mse <= 0:
        return math.inf
    return -10.0 * math.log10(mse)


def _config_dict(config: TrainConfig) -> dict:
    out = {}
    for key, value in config.__dict__.items():
        if isinstance(value, tuple):
            value = list(value)
        out[key] = value
    return out


# --------------------------------------------------------------------------
# gradient verification


def gradcheck(loss_fn, parameters, step: float = 1e-4, samples: int = 64,
              seed: int = 0) -> float:
    """Max relative error between autograd and central finite differences.

    Perturbs `samples` randomly chosen scalar parameters; the relative error
    is |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    params = [p for p in parameters]
    for p in params:
        p.grad = None
    value = loss_fn()
    value.backward()
    grads = [p.grad.detach().reshape(-1).clone() for p in params]
    flats = [p.detach().reshape(-1) for p in params]

    sizes = np.array([f.numel() for f in flats])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    chosen = rng.choice(offsets[-1], size=min(samples, offsets[-1]),
                        replace=False)

    worst = 0.0
    for flat_index in chosen:
        which = int(np.searchsorted(offsets, flat_index, side="right") - 1)
        local = int(flat_index - offsets[which])
        storage = flats[which]
        original = storage[local].item()
        with torch.no_grad():
            storage[local] = original + step
        f_plus = loss_fn().item()
        with torch.no_grad():
            storage[local] = original - step
        f_minus = loss_fn().item()
        with torch.no_grad():
            storage[local] = original
        numeric = (f_plus - f_minus) / (2.0 * step)
        analytic = grads[which][local].item()
        rel = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
        worst = max(worst, rel)
    return worst


def build_gradcheck_problem(mode: str, seed: int = 0):
    """A small full-loss problem: (loss_fn, parameters, config).

    2D: a 4x4 image fit; 3D: an 8^3 grid with a handful of rays. Both
    include the color, hull, and sparsity terms.
    """
    rng = np.random.default_rng(seed)
    cloud = rng.random((256, 3))
    hull = colorhull.build_hull(cloud)

    if mode == "2d":
        config = TrainConfig(mode="2d", K=3, iterations=0)
        fields = allocate2d(4, 4, K=3, init_logit=0.0, seed=seed)
        with torch.no_grad():
            fields.opacity_logits += torch.as_tensor(
                rng.normal(0, 1.0, size=(4, 4, 3))
            )
        target = torch.as_tensor(rng.random((4, 4, 3)))
        colors = torch.as_tensor(0.25 + 0.5 * rng.random((4, 3)),
                                 dtype=torch.float64)
        colors.requires_grad_(True)
        fields.opacity_logits.requires_grad_(True)

        def loss_fn():
            out = composite_pixels(fields.opacity_logits, colors)
            c = loss_color(out.color, target)
            s = loss_sparsity(out.opaque, config.eta)
            h = hull_penalty(colors, hull, config.delta_in, config.delta_out)
            return c + config.lambda_hull * h + config.lambda_sparsity * s

        return loss_fn, [fields.opacity_logits, colors], config

    config = TrainConfig(mode="3d", K=2, iterations=0, samples_per_ray=5)
    fields = allocate3d((8, 8, 8), K=2, init_density=0.0, init_logit=0.0,
                        seed=seed)
    with torch.no_grad():
        fields.density_logits += torch.as_tensor(rng.normal(0, 0.8, size=(8, 8, 8)))
        fields.opacity_logits += torch.as_tensor(
            rng.normal(0, 1.0, size=(8, 8, 8, 2))
        )
    cam = renderer.Camera(
        4, 4, 5.0, renderer.look_at_pose((0.3, 0.4, 3.0)), near=0.5, far=8.0
    )
    rays = renderer.camera_rays(cam)
    clipped, hit = renderer.clip_to_aabb(rays, fields.aabb, cam.near, cam.far)
    clipped = clipped.take(np.flatnonzero(hit))
    target = torch.as_tensor(rng.random((len(clipped), 3)))
    colors = torch.as_tensor(0.25 + 0.5 * rng.random((3, 3)), dtype=torch.float64)
    colors.requires_grad_(True)
    fields.density_logits.requires_grad_(True)
    fields.opacity_logits.requires_grad_(True)

    def loss_fn():
        samples = march(clipped, fields, config.samples_per_ray)
        out = composite_rays(samples, colors)
        c = loss_color(out.color, target)
        s = loss_sparsity(out.opaque, config.eta)
        h = hull_penalty(colors, hull, config.delta_in, config.delta_out)
        return c + config.lambda_hull * h + config.lambda_sparsity * s

    return loss_fn, [fields.density_logits, fields.opacity_logits, colors], config
