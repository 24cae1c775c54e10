"""scikit-learn style wrappers: the localization network, the spectral decomposer and the annotator."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import network as net
from .annotate import AnnotationConfig, annotate_pair
from .exceptions import ContractError
from .metrics import EvalAccumulator, miou_pixel
from .spectral import SpectralConfig, build_basis, group_spectra, spectral_transform
from .tensor import no_grad
from .validation import check_images, check_labels, check_masks, check_pairs


class MSCCNet(BaseEstimator):
    """Face-manipulation localizer trained end to end with momentum SGD.

    ``fit(X, y)`` takes raw images ``[n, 3, H, W]`` (0..255) and binary masks
    ``[n, H, W]``; image labels default to "mask is non-empty".  ``predict``
    returns masks, ``predict_label`` image labels, and ``score`` the pooled
    pixel mIoU.
    """

    def __init__(
        self,
        widths=(16, 32, 64),
        channels=64,
        U=8,
        V=8,
        M=4,
        use_mfa=True,
        use_mscc=True,
        use_mscc_loss=True,
        use_gcn=True,
        gcn_graph="same_class",
        spectral_mode="modulate",
        fusion="concat",
        center_weights="softmax_logits",
        activation="relu",
        spectral_gain="unit_power",
        base_lr=0.009,
        momentum=0.9,
        weight_decay=5e-4,
        poly_power=0.9,
        total_iters=2000,
        batch_size=8,
        hflip=True,
        random_state=0,
    ):
        self.widths = widths
        self.channels = channels
        self.U = U
        self.V = V
        self.M = M
        self.use_mfa = use_mfa
        self.use_mscc = use_mscc
        self.use_mscc_loss = use_mscc_loss
        self.use_gcn = use_gcn
        self.gcn_graph = gcn_graph
        self.spectral_mode = spectral_mode
        self.fusion = fusion
        self.center_weights = center_weights
        self.activation = activation
        self.spectral_gain = spectral_gain
        self.base_lr = base_lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.poly_power = poly_power
        self.total_iters = total_iters
        self.batch_size = batch_size
        self.hflip = hflip
        self.random_state = random_state

    def network_config(self) -> net.NetworkConfig:
        return net.NetworkConfig(
            widths=tuple(self.widths),
            channels=self.channels,
            U=self.U,
            V=self.V,
            M=self.M,
            use_mfa=self.use_mfa,
            use_mscc=self.use_mscc,
            use_mscc_loss=self.use_mscc_loss,
            use_gcn=self.use_gcn,
            gcn_graph=self.gcn_graph,
            spectral_mode=self.spectral_mode,
            fusion=self.fusion,
            center_weights=self.center_weights,
            activation=self.activation,
            spectral_gain=self.spectral_gain,
        ).validate()

    def train_config(self, input_size: int) -> net.TrainConfig:
        return net.TrainConfig(
            base_lr=self.base_lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            poly_power=self.poly_power,
            total_iters=self.total_iters,
            batch_size=self.batch_size,
            input_size=input_size,
            seed=self.random_state,
            hflip=self.hflip,
        ).validate()

    def fit(self, X, y, labels=None):
        X = check_images(X)
        y = check_masks(y, X)
        labels = check_labels(labels, y)
        if X.shape[2] != X.shape[3]:
            raise ContractError(f"square inputs expected, got {X.shape[2]}x{X.shape[3]}")
        self.config_ = self.network_config()
        params, trace = net.fit(X, y, labels, self.config_, self.train_config(X.shape[2]))
        self.params_ = params
        self.trace_ = trace
        self.n_params_ = net.count_params(params)
        return self

    def _predict(self, X) -> net.Prediction:
        check_is_fitted(self, "params_")
        return net.predict(check_images(X, single_ok=True), self.params_, self.config_)

    def predict(self, X) -> np.ndarray:
        """Binary tamper masks ``[n, H, W]``."""
        return self._predict(X).masks

    def predict_proba(self, X) -> np.ndarray:
        """Per-pixel fake probability ``[n, H, W]``."""
        return self._predict(X).pixel_scores

    def predict_label(self, X) -> np.ndarray:
        """Image-level labels (1 = manipulated)."""
        return self._predict(X).labels

    def score(self, X, y) -> float:
        X = check_images(X, single_ok=True)
        y = check_masks(np.asarray(y).reshape((len(X),) + X.shape[2:]), X)
        acc = EvalAccumulator()
        acc.add_masks(self.predict(X), y)
        return miou_pixel(acc)


class SpectralDecomposer(TransformerMixin, BaseEstimator):
    """Split feature maps ``[n, C, h, w]`` into ``[n, M, C/M, h, w]`` spectral groups."""

    def __init__(self, U=8, V=8, M=4, mode="modulate"):
        self.U = U
        self.V = V
        self.M = M
        self.mode = mode

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 4:
            raise ContractError(f"expected features [n, C, h, w], got {X.shape}")
        SpectralConfig(self.U, self.V, self.M, X.shape[1]).validate()
        self.basis_ = build_basis(self.U, self.V)
        self.n_channels_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "basis_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 4 or X.shape[1] != self.n_channels_:
            raise ContractError(f"expected features [n, {self.n_channels_}, h, w], got {X.shape}")
        with no_grad():
            return group_spectra(spectral_transform(X, self.basis_, self.mode), self.M).data


class TamperAnnotator(TransformerMixin, BaseEstimator):
    """Ground-truth masks from aligned (real, fake) pairs ``[n, 2, 3, H, W]``."""

    def __init__(self, dilate_radius=5, erode_radius=3, hull_passes=2, blur_sigma=2.0, product_threshold=0.05):
        self.dilate_radius = dilate_radius
        self.erode_radius = erode_radius
        self.hull_passes = hull_passes
        self.blur_sigma = blur_sigma
        self.product_threshold = product_threshold

    def fit(self, X=None, y=None):
        self.config_ = AnnotationConfig(
            product_threshold=self.product_threshold,
            dilate_radius=self.dilate_radius,
            erode_radius=self.erode_radius,
            hull_passes=self.hull_passes,
            blur_sigma=self.blur_sigma,
        )
        return self

    def transform(self, X, is_real=None) -> np.ndarray:
        check_is_fitted(self, "config_")
        X = check_pairs(X)
        flags = np.zeros(len(X), dtype=bool) if is_real is None else np.asarray(is_real, dtype=bool)
        if flags.shape != (len(X),):
            raise ContractError("is_real must have one flag per pair")
        return np.stack([annotate_pair(r, f, bool(real), self.config_) for (r, f), real in zip(X, flags)])
