"""Dense backbones: (denoising) autoencoder, bias-free SVDD extractor, logit classifier.

All forward functions take a batch ``(B, d)`` (or a single row ``(d,)``)
and return one base loss per row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParameterSet, format_float
from .errors import ContractError, FormatError, ShapeError

CENTER_EPS = 0.1


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_mlp(params: ParameterSet, prefix: str, widths, rng, bias=True):
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        params.add_layer(
            f"{prefix}{i}", glorot_uniform(rng, fan_in, fan_out), np.zeros(fan_out) if bias else None
        )


def mlp_forward(params: ParameterSet, prefix: str, n_layers: int, x) -> Node:
    """Affine layers with leaky-relu between them; the last layer is linear."""
    h = x
    for i in range(n_layers):
        layer = f"{prefix}{i}"
        h = ad.affine(h, params.weight(layer), params.bias(layer))
        if i < n_layers - 1:
            h = ad.leaky_relu(h)
    return h


def _check_input(x, dim: int):
    x = np.asarray(x.value if isinstance(x, Node) else x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != dim:
        raise ShapeError(f"input shape {x.shape} does not match model input dimension {dim}")
    return x


@dataclass
class AeModel:
    encoder_widths: list[int]
    decoder_widths: list[int]
    params: ParameterSet
    noise_sigma: float = 0.0

    kind = "ae"

    def __post_init__(self):
        if self.decoder_widths[-1] != self.encoder_widths[0]:
            raise ContractError("decoder output dimension must equal the input dimension")
        if self.encoder_widths[-1] < 1 or self.decoder_widths[0] != self.encoder_widths[-1]:
            raise ContractError("latent widths of encoder and decoder disagree")
        if self.noise_sigma < 0:
            raise ContractError("noise_sigma must be nonnegative")

    @property
    def input_dim(self) -> int:
        return self.encoder_widths[0]

    @property
    def latent_dim(self) -> int:
        return self.encoder_widths[-1]

    def encode(self, x) -> Node:
        return mlp_forward(self.params, "enc", len(self.encoder_widths) - 1, x)

    def decode(self, z) -> Node:
        return mlp_forward(self.params, "dec", len(self.decoder_widths) - 1, z)


@dataclass
class SvddModel:
    widths: list[int]
    params: ParameterSet
    center: np.ndarray

    kind = "svdd"

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        if any(self.params.has_bias.values()):
            raise ContractError("SVDD feature extractors must not have bias terms")
        if self.center.shape != (self.widths[-1],):
            raise ShapeError(f"center shape {self.center.shape} does not match output width {self.widths[-1]}")
        if not np.any(self.center):
            raise ContractError("SVDD center must not be the zero vector")

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    def features(self, x) -> Node:
        return mlp_forward(self.params, "enc", len(self.widths) - 1, x)


@dataclass
class ClassifierModel:
    widths: list[int]
    params: ParameterSet

    kind = "classifier"

    def __post_init__(self):
        if self.widths[-1] != 1:
            raise ContractError("classifier must end in a single logit")

    @property
    def input_dim(self) -> int:
        return self.widths[0]


# ------------------------------------------------------------ builders

def make_ae(input_dim, hidden, latent_dim, rng, noise_sigma=0.0, bias=True) -> AeModel:
    enc = [input_dim, *hidden, latent_dim]
    dec = [latent_dim, *reversed(hidden), input_dim]
    params = ParameterSet()
    init_mlp(params, "enc", enc, rng, bias)
    init_mlp(params, "dec", dec, rng, bias)
    return AeModel(enc, dec, params, noise_sigma)


def make_classifier(input_dim, hidden, rng) -> ClassifierModel:
    widths = [input_dim, *hidden, 1]
    params = ParameterSet()
    init_mlp(params, "clf", widths, rng)
    return ClassifierModel(widths, params)


# ------------------------------------------------------------ base losses

def reconstruction_error(model: AeModel, x, noise=None) -> Node:
    """||D(E(x + noise)) - x|| per row."""
    xv = _check_input(x, model.input_dim)
    inp = xv
    if noise is not None:
        if model.noise_sigma == 0:
            raise ContractError("noise given to a model with noise_sigma == 0")
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != xv.shape:
            raise ShapeError(f"noise shape {noise.shape} does not match input shape {xv.shape}")
        inp = xv + noise
    recon = model.decode(model.encode(ad.constant(inp)))
    return ad.l2_norm(ad.sub(recon, xv), axis=-1)


def svdd_score(model: SvddModel, x) -> Node:
    """||f(x) - c||^2 per row."""
    xv = _check_input(x, model.input_dim)
    return ad.sq_l2_norm(ad.sub(model.features(ad.constant(xv)), model.center), axis=-1)


def classifier_logit(model: ClassifierModel, x) -> Node:
    xv = _check_input(x, model.input_dim)
    out = mlp_forward(model.params, "clf", len(model.widths) - 1, ad.constant(xv))
    return ad.Node(out.value[..., 0], (out,), "squeeze", lambda g: (g[..., None],))


def base_loss(model, x, noise=None) -> Node:
    """Per-row anomaly score of any backbone (reconstruction error, center distance or logit)."""
    if isinstance(model, AeModel):
        return reconstruction_error(model, x, noise)
    if isinstance(model, SvddModel):
        return svdd_score(model, x)
    if isinstance(model, ClassifierModel):
        return classifier_logit(model, x)
    raise TypeError(f"unsupported model type {type(model).__name__}")


# ------------------------------------------------------------ SVDD setup

def init_center(extractor, unlabeled, eps: float = CENTER_EPS) -> np.ndarray:
    """Mean extractor output over ``unlabeled``, pushed away from zero coordinate-wise.

    ``extractor`` is any callable mapping a batch to a feature Node (e.g. an
    AE's ``encode``).
    """
    unlabeled = np.asarray(unlabeled, dtype=np.float64)
    if unlabeled.ndim != 2 or unlabeled.shape[0] == 0:
        raise ContractError("init_center needs a non-empty unlabeled matrix")
    c = extractor(ad.constant(unlabeled)).value.mean(axis=0)
    small = np.abs(c) < eps
    c[small] = np.where(c[small] < 0, -eps, eps)
    return c


def svdd_from_ae(ae: AeModel, unlabeled) -> SvddModel:
    """Reuse the encoder of a trained bias-free AE as the SVDD feature extractor."""
    params = ParameterSet()
    for i in range(len(ae.encoder_widths) - 1):
        params.add_layer(f"enc{i}", ae.params.weight(f"enc{i}").value.copy())
    widths = list(ae.encoder_widths)
    center = init_center(lambda x: mlp_forward(params, "enc", len(widths) - 1, x), unlabeled)
    return SvddModel(widths, params, center)


def pretrain_svdd(ae: AeModel, data, cfg):
    """Train ``ae`` on the unlabeled split with the AE objective, then build the SVDD model.

    Returns ``(svdd_model, pretrain_history)``.
    """
    from .trainer import train

    if any(ae.params.has_bias.values()):
        raise ContractError("SVDD pretraining needs a bias-free autoencoder")
    ae_cfg = cfg.replace(loss="AE", max_epochs=cfg.pretrain_epochs)
    trained, history = train(ae, data, ae_cfg)
    return svdd_from_ae(trained, data.unlabeled), history


# ------------------------------------------------------------ persistence

def _fmt_list(values) -> str:
    return ",".join(str(int(v)) for v in values)


def _parse_ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def model_to_text(model) -> str:
    header = {"kind": model.kind}
    if isinstance(model, AeModel):
        header["encoder_widths"] = _fmt_list(model.encoder_widths)
        header["decoder_widths"] = _fmt_list(model.decoder_widths)
        header["latent_dim"] = str(model.latent_dim)
        header["noise_sigma"] = format_float(model.noise_sigma)
    elif isinstance(model, SvddModel):
        header["widths"] = _fmt_list(model.widths)
        header["center"] = ",".join(format_float(v) for v in model.center)
    else:
        header["widths"] = _fmt_list(model.widths)
    lines = [f"{k}={v}" for k, v in header.items()]
    return "\n".join(lines) + "\n---\n" + model.params.to_text()


def model_from_text(text: str):
    head, sep, body = text.partition("\n---\n")
    if not sep:
        raise FormatError("model file lacks the '---' header separator")
    header = {}
    for lineno, line in enumerate(head.splitlines(), 1):
        key, eq, value = line.partition("=")
        if not eq:
            raise FormatError(f"model header line {lineno}: expected key=value", lineno)
        header[key.strip()] = value.strip()
    params = ParameterSet.from_text(body)
    kind = header.get("kind")
    try:
        if kind == "ae":
            return AeModel(
                _parse_ints(header["encoder_widths"]),
                _parse_ints(header["decoder_widths"]),
                params,
                float(header["noise_sigma"]),
            )
        if kind == "svdd":
            center = np.array([float(v) for v in header["center"].split(",")])
            return SvddModel(_parse_ints(header["widths"]), params, center)
        if kind == "classifier":
            return ClassifierModel(_parse_ints(header["widths"]), params)
    except KeyError as exc:
        raise FormatError(f"model header missing key {exc.args[0]!r}") from None
    raise FormatError(f"unknown model kind {kind!r}")


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model_to_text(model))


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_text(fh.read())


def copy_model(model):
    params = model.params.copy()
    if isinstance(model, AeModel):
        return AeModel(list(model.encoder_widths), list(model.decoder_widths), params, model.noise_sigma)
    if isinstance(model, SvddModel):
        return SvddModel(list(model.widths), params, model.center.copy())
    return ClassifierModel(list(model.widths), params)


__all__ = [
    "AeModel",
    "SvddModel",
    "ClassifierModel",
    "make_ae",
    "make_classifier",
    "reconstruction_error",
    "svdd_score",
    "classifier_logit",
    "base_loss",
    "init_center",
    "svdd_from_ae",
    "pretrain_svdd",
    "save_model",
    "load_model",
    "copy_model",
]
