"""Full localization network: toy backbone, MFA, MSCC, heads, loss and SGD training."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterator, NamedTuple

import numpy as np

from . import tensor as T
from .exceptions import ConfigError, ContractError, NonFiniteLossError
from .mfa import MfaParams, align, mfa_forward
from .mscc import MsccConfig, MsccOutput, MsccParams, mscc_forward, normalized_adjacency
from .spectral import SpectralConfig, build_basis
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

OUTPUT_STRIDE = 8
PIXEL_STD_FLOOR = 1e-3


@dataclass(frozen=True)
class NetworkConfig:
    widths: tuple[int, int, int] = (16, 32, 64)
    channels: int = 64
    U: int = 8
    V: int = 8
    M: int = 4
    k: int = 2
    use_mfa: bool = True
    use_mscc: bool = True
    use_mscc_loss: bool = True
    use_gcn: bool = True
    gcn_graph: str = "same_class"
    spectral_mode: str = "modulate"
    fusion: str = "concat"
    center_weights: str = "softmax_logits"
    activation: str = "relu"
    spectral_gain: str = "unit_power"

    def spectral_config(self) -> SpectralConfig:
        return SpectralConfig(self.U, self.V, self.M, self.channels)

    def mscc_config(self) -> MsccConfig:
        return MsccConfig(
            M=self.M,
            k=self.k,
            spectral_mode=self.spectral_mode,
            use_gcn=self.use_gcn,
            gcn_graph=self.gcn_graph,
            fusion=self.fusion,
            center_weights=self.center_weights,
            activation=self.activation,
            spectral_gain=self.spectral_gain,
        )

    def validate(self) -> "NetworkConfig":
        if len(self.widths) != 3 or min(self.widths) < 1:
            raise ConfigError(f"backbone needs three positive widths, got {self.widths}")
        if self.use_mscc_loss and not self.use_mscc:
            raise ConfigError("use_mscc_loss requires use_mscc")
        if self.use_mscc:
            self.spectral_config().validate()
            self.mscc_config().validate()
        elif self.k != 2:
            raise ConfigError("only k=2 classes are supported")
        return self


# rows of the module ablation, in order of strictly increasing parameter count
ABLATION_ROWS: dict[str, dict[str, bool]] = {
    "baseline": dict(use_mfa=False, use_mscc=False, use_mscc_loss=False),
    "mfa": dict(use_mfa=True, use_mscc=False, use_mscc_loss=False),
    "mfa_mscc": dict(use_mfa=True, use_mscc=True, use_mscc_loss=False),
    "full": dict(use_mfa=True, use_mscc=True, use_mscc_loss=True),
}


def ablation_config(row: str, base: NetworkConfig | None = None) -> NetworkConfig:
    try:
        flags = ABLATION_ROWS[row]
    except KeyError:
        raise ConfigError(f"unknown ablation row {row!r}; choose from {list(ABLATION_ROWS)}") from None
    return replace(base or NetworkConfig(), **flags)


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.009
    momentum: float = 0.9
    weight_decay: float = 5e-4
    poly_power: float = 0.9
    total_iters: int = 2000
    batch_size: int = 8
    input_size: int = 64
    seed: int = 0
    hflip: bool = True

    def validate(self) -> "TrainConfig":
        if self.base_lr <= 0 or self.momentum < 0 or self.weight_decay < 0 or self.poly_power <= 0:
            raise ConfigError(f"optimizer settings must be positive: {self}")
        if self.total_iters < 0 or self.batch_size < 1:
            raise ConfigError("total_iters must be >= 0 and batch_size >= 1")
        if self.input_size < OUTPUT_STRIDE or self.input_size % OUTPUT_STRIDE:
            raise ConfigError(f"input_size {self.input_size} must be a positive multiple of {OUTPUT_STRIDE}")
        return self


class ForwardOutput(NamedTuple):
    pixel_logits: Tensor  # P1 [B, k, H, W]
    image_logits: Tensor  # P2 [B, k]
    aux_logits: Tensor | None  # P'_S [B, k, h, w]
    mscc: MsccOutput | None = None


# parameters ------------------------------------------------------------------
def _he(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), requires_grad=True)


def _zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def init_params(cfg: NetworkConfig, seed: int = 0) -> dict[str, Tensor]:
    """He-initialized weights, zero biases; the key set depends on the ablation flags."""
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4D53]))
    p: dict[str, Tensor] = {}
    c_in = 3
    for s, width in enumerate(cfg.widths, start=1):
        p[f"backbone.s{s}.conv1.weight"] = _he(rng, (width, c_in, 3, 3), c_in * 9)
        p[f"backbone.s{s}.conv1.bias"] = _zeros(width)
        p[f"backbone.s{s}.conv2.weight"] = _he(rng, (width, width, 3, 3), width * 9)
        p[f"backbone.s{s}.conv2.bias"] = _zeros(width)
        c_in = width
    k, C = cfg.k, cfg.channels
    p["cls.weight"] = _he(rng, (k, cfg.widths[2]), cfg.widths[2])
    p["cls.bias"] = _zeros(k)
    levels = (1, 2, 3) if cfg.use_mfa else (3,)
    for lvl in levels:
        width = cfg.widths[lvl - 1]
        p[f"mfa.align{lvl}.weight"] = _he(rng, (C, width, 3, 3), width * 9)
        p[f"mfa.align{lvl}.bias"] = _zeros(C)
    if cfg.use_mfa:
        p["mfa.fuse.weight"] = _he(rng, (C, 3 * C, 1, 1), 3 * C)
        p["mfa.fuse.bias"] = _zeros(C)
    if cfg.use_mscc:
        M = cfg.M
        c = C // M
        p["mscc.head.weight"] = _he(rng, (M, k, c), c)
        p["mscc.head.bias"] = _zeros(M, k)
        if cfg.use_gcn:
            p["mscc.gcn.weight"] = _he(rng, (c, c), c)
        fuse_in = 2 * C if cfg.fusion == "concat" else C
        p["mscc.fuse.weight"] = _he(rng, (C, fuse_in, 1, 1), fuse_in)
        p["mscc.fuse.bias"] = _zeros(C)
        if cfg.use_mscc_loss:
            p["mscc.coarse.weight"] = _he(rng, (k, M * k, 1, 1), M * k)
            p["mscc.coarse.bias"] = _zeros(k)
    p["seg.weight"] = _he(rng, (k, C, 1, 1), C)
    p["seg.bias"] = _zeros(k)
    return p


def count_params(params: dict[str, Tensor]) -> int:
    return int(sum(t.size for t in params.values()))


def mscc_params(params: dict[str, Tensor], cfg: NetworkConfig) -> MsccParams:
    c = cfg.channels // cfg.M
    gcn = params.get("mscc.gcn.weight")
    return MsccParams(
        head_weight=params["mscc.head.weight"],
        head_bias=params["mscc.head.bias"],
        gcn_weight=gcn if gcn is not None else Tensor(np.eye(c)),
        adjacency=normalized_adjacency(cfg.M, cfg.k, cfg.gcn_graph),
        fuse_weight=params["mscc.fuse.weight"],
        fuse_bias=params["mscc.fuse.bias"],
        coarse_weight=params.get("mscc.coarse.weight"),
        coarse_bias=params.get("mscc.coarse.bias"),
    )


# forward ---------------------------------------------------------------------
def preprocess(images) -> np.ndarray:
    """Standardize each image channel to zero mean, unit variance (0..255 input)."""
    x = np.asarray(images, dtype=np.float64) / 255.0
    mu = x.mean(axis=(-2, -1), keepdims=True)
    sd = x.std(axis=(-2, -1), keepdims=True)
    return (x - mu) / (sd + PIXEL_STD_FLOOR)


def backbone_forward(x: Tensor, params: dict[str, Tensor]) -> list[Tensor]:
    feats = []
    for s in (1, 2, 3):
        x = T.relu(T.conv2d(x, params[f"backbone.s{s}.conv1.weight"], params[f"backbone.s{s}.conv1.bias"], 2, 1))
        x = T.relu(T.conv2d(x, params[f"backbone.s{s}.conv2.weight"], params[f"backbone.s{s}.conv2.bias"], 1, 1))
        feats.append(x)
    return feats


def forward(images, params: dict[str, Tensor], cfg: NetworkConfig) -> ForwardOutput:
    """Run the network on preprocessed images ``[B, 3, H, W]`` (or one ``[3, H, W]``)."""
    x = T.as_tensor(images)
    single = x.ndim == 3
    if single:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 4 or x.shape[1] != 3:
        raise ContractError(f"forward expects [B,3,H,W] images, got {x.shape}")
    H, W = x.shape[-2:]
    if H % OUTPUT_STRIDE or W % OUTPUT_STRIDE:
        raise ConfigError(f"input {H}x{W} not divisible by {OUTPUT_STRIDE}")
    h, w = H // OUTPUT_STRIDE, W // OUTPUT_STRIDE

    f1, f2, f3 = backbone_forward(x, params)
    pooled = f3.mean(axis=(2, 3))
    image_logits = T.matmul(pooled, params["cls.weight"].T) + params["cls.bias"]

    act = cfg.activation
    if cfg.use_mfa:
        mp = MfaParams(
            [params[f"mfa.align{i}.weight"] for i in (1, 2, 3)],
            [params[f"mfa.align{i}.bias"] for i in (1, 2, 3)],
            params["mfa.fuse.weight"],
            params["mfa.fuse.bias"],
        )
        fa = mfa_forward([f1, f2, f3], mp, (h, w), act)
    else:
        fa = align(f3, params["mfa.align3.weight"], params["mfa.align3.bias"], (h, w), act)

    mscc_out = None
    aux = None
    fm = fa
    if cfg.use_mscc:
        basis = build_basis(cfg.U, cfg.V)
        mscc_out = mscc_forward(fa, mscc_params(params, cfg), cfg.mscc_config(), basis)
        fm = mscc_out.features
        aux = mscc_out.aux_logits

    seg = T.conv2d(fm, params["seg.weight"], params["seg.bias"])
    pixel_logits = T.upsample_bilinear(seg, OUTPUT_STRIDE)
    if single:
        pixel_logits = pixel_logits.reshape(pixel_logits.shape[1:])
        image_logits = image_logits.reshape(image_logits.shape[1:])
        if aux is not None:
            aux = aux.reshape(aux.shape[1:])
    return ForwardOutput(pixel_logits, image_logits, aux, mscc_out)


# loss ------------------------------------------------------------------------
class LossTerms(NamedTuple):
    total: Tensor
    cls: float
    seg: float
    mscc: float


def downsample_nearest(masks: np.ndarray, factor: int = OUTPUT_STRIDE) -> np.ndarray:
    """Pick the pixel nearest to each low-resolution cell center (index f*i + f//2)."""
    masks = np.asarray(masks)
    off = factor // 2
    return masks[..., off::factor, off::factor]


def check_mask_labels(masks: np.ndarray, labels: np.ndarray, k: int = 2) -> None:
    masks = np.asarray(masks)
    labels = np.asarray(labels)
    if masks.size and (masks.min() < 0 or masks.max() >= k or not np.all(masks == np.round(masks))):
        raise ContractError("mask values must be class ids in {0, 1}")
    if labels.size and (labels.min() < 0 or labels.max() >= k or not np.all(labels == np.round(labels))):
        raise ContractError("image labels must be class ids in {0, 1}")


def _ce_term(name: str, logits: Tensor, target: np.ndarray) -> Tensor:
    try:
        return T.cross_entropy(logits, target, axis=1)
    except ContractError as exc:
        if "non-finite" in str(exc):
            raise NonFiniteLossError(f"loss component {name!r} has non-finite logits") from exc
        raise


def loss(out: ForwardOutput, masks, labels) -> LossTerms:
    """Sum of image CE, pixel CE and (when present) auxiliary coarse CE."""
    masks = np.asarray(masks)
    labels = np.asarray(labels)
    pixel_logits, image_logits, aux = out.pixel_logits, out.image_logits, out.aux_logits
    if pixel_logits.ndim == 3:
        pixel_logits = pixel_logits.reshape((1,) + pixel_logits.shape)
        image_logits = image_logits.reshape((1,) + image_logits.shape)
        aux = aux.reshape((1,) + aux.shape) if aux is not None else None
        masks = masks.reshape((1,) + masks.shape)
        labels = labels.reshape(1)
    check_mask_labels(masks, labels, pixel_logits.shape[1])
    if masks.shape != pixel_logits.shape[:1] + pixel_logits.shape[2:]:
        raise ContractError(f"mask shape {masks.shape} does not match logits {pixel_logits.shape}")
    l_seg = _ce_term("seg", pixel_logits, masks)
    l_cls = _ce_term("cls", image_logits, labels)
    total = l_seg + l_cls
    l_mscc = 0.0
    if aux is not None:
        factor = pixel_logits.shape[-1] // aux.shape[-1]
        aux_term = _ce_term("mscc", aux, downsample_nearest(masks, factor))
        total = total + aux_term
        l_mscc = aux_term.item()
    return LossTerms(total, l_cls.item(), l_seg.item(), l_mscc)


# optimization ----------------------------------------------------------------
def poly_lr(iteration: int, total_iters: int, base_lr: float = 0.009, power: float = 0.9) -> float:
    if total_iters <= 0:
        return 0.0
    frac = min(max(iteration / total_iters, 0.0), 1.0)
    return base_lr * (1.0 - frac) ** power


@dataclass
class SGD:
    """Momentum SGD with weight decay added to the gradient (L2 term)."""

    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, Tensor], lr: float) -> None:
        for name, p in params.items():
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data
            v = self.velocity.get(name)
            v = g if v is None else self.momentum * v + g
            self.velocity[name] = v
            p.data = p.data - lr * v

    @staticmethod
    def zero_grad(params: dict[str, Tensor]) -> None:
        for p in params.values():
            p.grad = None


class StepMetrics(NamedTuple):
    iteration: int
    lr: float
    loss: float
    cls: float
    seg: float
    mscc: float


def train_step(
    batch: tuple[np.ndarray, np.ndarray, np.ndarray],
    params: dict[str, Tensor],
    opt: SGD,
    iteration: int,
    net_cfg: NetworkConfig,
    train_cfg: TrainConfig,
) -> StepMetrics:
    """One forward/backward/update on a preprocessed batch ``(images, masks, labels)``."""
    if iteration >= train_cfg.total_iters:
        raise ContractError(f"iteration {iteration} >= total_iters {train_cfg.total_iters}")
    images, masks, labels = batch
    SGD.zero_grad(params)
    try:
        out = forward(images, params, net_cfg)
    except ContractError as exc:
        if "non-finite" in str(exc):
            raise NonFiniteLossError(f"non-finite activations at iteration {iteration}: {exc}") from exc
        raise
    terms = loss(out, masks, labels)
    components = {"cls": terms.cls, "seg": terms.seg, "mscc": terms.mscc}
    bad = [k for k, v in components.items() if not np.isfinite(v)]
    if bad or not np.isfinite(terms.total.item()):
        raise NonFiniteLossError(f"non-finite loss at iteration {iteration}: components {components}")
    terms.total.backward()
    lr = poly_lr(iteration, train_cfg.total_iters, train_cfg.base_lr, train_cfg.poly_power)
    opt.step(params, lr)
    return StepMetrics(iteration, lr, terms.total.item(), terms.cls, terms.seg, terms.mscc)


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Endless stream of index batches drawn epoch by epoch without replacement."""
    if n < 1:
        raise ContractError("cannot train on an empty set")
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1 if n >= batch_size else 1, batch_size):
            yield order[start : start + batch_size]


def fit(
    images: np.ndarray,
    masks: np.ndarray,
    labels: np.ndarray,
    net_cfg: NetworkConfig,
    train_cfg: TrainConfig,
    params: dict[str, Tensor] | None = None,
    callback: Callable[[StepMetrics], None] | None = None,
) -> tuple[dict[str, Tensor], list[StepMetrics]]:
    """Train from raw 0..255 images ``[n, 3, H, W]``, binary masks and image labels."""
    net_cfg.validate()
    train_cfg.validate()
    images = preprocess(images)
    masks = np.asarray(masks).astype(np.intp)
    labels = np.asarray(labels).astype(np.intp)
    check_mask_labels(masks, labels, net_cfg.k)
    if params is None:
        params = init_params(net_cfg, train_cfg.seed)
    rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 0x7472]))
    opt = SGD(train_cfg.momentum, train_cfg.weight_decay)
    batches = iterate_batches(len(images), train_cfg.batch_size, rng)
    trace: list[StepMetrics] = []
    for it in range(train_cfg.total_iters):
        idx = next(batches)
        xb, mb = images[idx], masks[idx]
        if train_cfg.hflip:
            flip = rng.random(len(idx)) < 0.5
            xb = np.where(flip[:, None, None, None], xb[..., ::-1], xb)
            mb = np.where(flip[:, None, None], mb[..., ::-1], mb)
        metrics = train_step((xb, mb, labels[idx]), params, opt, it, net_cfg, train_cfg)
        trace.append(metrics)
        if callback is not None:
            callback(metrics)
        if it % 100 == 0:
            logger.debug("iter %d lr %.5f loss %.4f", it, metrics.lr, metrics.loss)
    SGD.zero_grad(params)
    return params, trace


class Prediction(NamedTuple):
    masks: np.ndarray  # [n, H, W] in {0, 1}
    labels: np.ndarray  # [n]
    pixel_scores: np.ndarray  # fake-class probability per pixel
    image_scores: np.ndarray  # fake-class probability per image
    pixel_logits: np.ndarray
    image_logits: np.ndarray


def decode(pixel_logits: np.ndarray, image_logits: np.ndarray) -> Prediction:
    """Argmax decoding plus fake-class softmax scores."""
    pixel_logits = np.asarray(pixel_logits)
    image_logits = np.asarray(image_logits)
    pix = T.softmax(pixel_logits, axis=1).data
    img = T.softmax(image_logits, axis=1).data
    return Prediction(
        pixel_logits.argmax(axis=1).astype(np.uint8),
        image_logits.argmax(axis=1).astype(np.uint8),
        pix[:, 1],
        img[:, 1],
        pixel_logits,
        image_logits,
    )


def predict(images: np.ndarray, params: dict[str, Tensor], cfg: NetworkConfig, batch_size: int = 16) -> Prediction:
    """Inference on raw 0..255 images ``[n, 3, H, W]``."""
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    pix, img = [], []
    with no_grad():
        for start in range(0, len(images), batch_size):
            out = forward(preprocess(images[start : start + batch_size]), params, cfg)
            pix.append(out.pixel_logits.data)
            img.append(out.image_logits.data)
    return decode(np.concatenate(pix), np.concatenate(img))


def config_dict(net_cfg: NetworkConfig) -> dict:
    d = asdict(net_cfg)
    d["widths"] = list(d["widths"])
    return d
