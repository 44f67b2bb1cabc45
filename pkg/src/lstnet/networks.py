"""Architecture tables, padding assignment, and construction of the seven subnetworks.

Architectures are written as rows mirroring the usual layer table: a row is a
linear op followed by its normalisation/activation (and pooling for the
discriminators).  Per-domain values are given as ``(first, second)`` pairs;
``slash_order`` decides which domain is "first".
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from .autograd import Parameter
from .functional import conv_output_size, deconv_output_size
from .layers import BatchNorm, Conv, Deconv, Dense, LayerSpec, LeakyReLU, MaxPool, Network, Sigmoid, Tanh

PerDomain = Union[int, tuple]
ROLES = ("encoder", "generator", "discriminator", "latent_discriminator")


@dataclass(frozen=True)
class Row:
    block: str  # conv_bn | deconv_bn | deconv_tanh | conv_pool | fc_sigmoid
    channels: Optional[int] = None  # None: image channels of the domain
    kernel: PerDomain = 3
    stride: PerDomain = 1
    pool_stride: PerDomain = 2
    valid: Union[bool, tuple] = False
    shared: bool = False


ARCHITECTURES: dict[str, dict[str, list[Row]]] = {
    "standard": {
        "encoder": [
            Row("conv_bn", 64, 7, 1),
            Row("conv_bn", 128, 5, 2),
            Row("conv_bn", 256, 3, (2, 1)),
            Row("conv_bn", 512, (3, 2), 1, valid=(False, True)),
            Row("conv_bn", 256, 3, 1, shared=True),
            Row("conv_bn", 128, 3, 3, shared=True),
        ],
        "generator": [
            Row("deconv_bn", 128, 3, 1, shared=True),
            Row("deconv_bn", 256, 3, 1, shared=True),
            Row("deconv_bn", 512, (3, 2), 1, valid=(False, True)),
            Row("deconv_bn", 256, 3, 2),
            Row("deconv_bn", 128, 5, (2, 1)),
            Row("deconv_bn", 64, 7, 1),
            Row("deconv_tanh", None, 1, 1),
        ],
        "discriminator": [
            Row("conv_pool", 64, 3, 1, pool_stride=1),
            Row("conv_pool", 128, 3, 1, pool_stride=(2, 1)),
            Row("conv_pool", 256, 5, 1, pool_stride=2),
            Row("conv_pool", 512, (3, 2), 1, pool_stride=2, valid=(False, True)),
            Row("fc_sigmoid", 1),
        ],
        "latent_discriminator": [
            Row("conv_pool", 256, 3, 1, pool_stride=1),
            Row("conv_pool", 512, 3, 1, pool_stride=2),
            Row("conv_pool", 256, 3, 1, pool_stride=1),
            Row("fc_sigmoid", 1),
        ],
    },
    # desk-scale variant for 8x8 synthetic domains
    "toy": {
        "encoder": [
            Row("conv_bn", 16, 3, 1),
            Row("conv_bn", 32, 3, 2),
            Row("conv_bn", 32, 3, 1, shared=True),
        ],
        "generator": [
            Row("deconv_bn", 32, 3, 1, shared=True),
            Row("deconv_bn", 16, 3, 2),
            Row("deconv_tanh", None, 1, 1),
        ],
        "discriminator": [
            Row("conv_pool", 16, 3, 1, pool_stride=2),
            Row("conv_pool", 32, 3, 1, pool_stride=2),
            Row("fc_sigmoid", 1),
        ],
        "latent_discriminator": [
            Row("conv_pool", 8, 3, 1, pool_stride=2),
            Row("fc_sigmoid", 1),
        ],
    },
    # a few hundred parameters; used by finite-difference suites on 4x4 images
    "tiny": {
        "encoder": [
            Row("conv_bn", 2, 3, 1),
            Row("conv_bn", 2, 3, 2, shared=True),
        ],
        "generator": [
            Row("deconv_bn", 2, 3, 2, shared=True),
            Row("deconv_tanh", None, 1, 1),
        ],
        "discriminator": [
            Row("conv_pool", 2, 3, 1, pool_stride=2),
            Row("fc_sigmoid", 1),
        ],
        "latent_discriminator": [
            Row("conv_pool", 2, 2, 1, pool_stride=1),
            Row("fc_sigmoid", 1),
        ],
    },
}


@dataclass
class BuildConfig:
    domain_shapes: dict = field(default_factory=lambda: {1: (28, 28, 1), 2: (16, 16, 1)})
    arch: str = "standard"
    slash_order: str = "12"
    leaky_slope: float = 0.2
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.9
    dtype: str = "float32"
    seed: int = 0
    padding: Optional[dict] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["domain_shapes"] = {str(k): list(v) for k, v in self.domain_shapes.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BuildConfig":
        d = dict(d)
        d["domain_shapes"] = {int(k): tuple(v) for k, v in d["domain_shapes"].items()}
        return cls(**d)


@dataclass
class NetworkSpec:
    role: str
    domain: Union[int, str]
    layers: list[LayerSpec]


class ShapeError(ValueError):
    pass


def _pick(value, domain: int, slash_order: str):
    if not isinstance(value, tuple):
        return value
    first = int(slash_order[0])
    return value[0] if domain == first else value[1]


def _scope(row: Row, domain) -> str:
    return "shared" if row.shared or domain == "l" else f"d{domain}"


def _row_vars(role: str, idx: int, row: Row, domain, slash_order: str) -> list[tuple[str, tuple]]:
    """Free padding variables of one row: (key, allowed values with the default first)."""
    prefix = f"{role}.{idx}" if domain == "l" else f"{role}.{idx}.{_scope(row, domain)}"
    fixed_valid = _pick(row.valid, domain, slash_order) if domain != "l" else bool(row.valid)
    out = []
    if row.block in ("conv_bn", "conv_pool", "deconv_bn", "deconv_tanh"):
        out.append((f"{prefix}.padding", ("valid",) if fixed_valid else ("same", "valid")))
    if row.block in ("deconv_bn", "deconv_tanh"):
        s = _pick(row.stride, domain, slash_order) if domain != "l" else row.stride
        out.append((f"{prefix}.output_padding", tuple(range(s))))
    if row.block == "conv_pool":
        out.append((f"{prefix}.pool_padding", ("valid", "same")))
    return out


def expand_row(role: str, idx: int, row: Row, domain, cfg: BuildConfig, assignment: dict, image_channels: int) -> list[LayerSpec]:
    so = cfg.slash_order
    pick = (lambda v: v if not isinstance(v, tuple) else v[0]) if domain == "l" else (lambda v: _pick(v, domain, so))
    k, s = pick(row.kernel), pick(row.stride)
    prefix = f"{role}.{idx}" if domain == "l" else f"{role}.{idx}.{_scope(row, domain)}"
    pad = assignment.get(f"{prefix}.padding")
    channels = row.channels if row.channels is not None else image_channels
    sh = row.shared
    if row.block == "conv_bn":
        return [LayerSpec("conv", channels, k, s, pad, shared=sh), LayerSpec("batchnorm", channels, shared=sh), LayerSpec("leaky_relu", shared=sh)]
    if row.block == "deconv_bn":
        op = assignment.get(f"{prefix}.output_padding", 0)
        return [LayerSpec("deconv", channels, k, s, pad, op, shared=sh), LayerSpec("batchnorm", channels, shared=sh), LayerSpec("leaky_relu", shared=sh)]
    if row.block == "deconv_tanh":
        op = assignment.get(f"{prefix}.output_padding", 0)
        return [LayerSpec("deconv", channels, k, s, pad, op, shared=sh), LayerSpec("tanh", shared=sh)]
    if row.block == "conv_pool":
        return [
            LayerSpec("conv", channels, k, s, pad),
            LayerSpec("leaky_relu"),
            LayerSpec("maxpool", kernel=2, stride=pick(row.pool_stride), padding=assignment.get(f"{prefix}.pool_padding")),
        ]
    if row.block == "fc_sigmoid":
        return [LayerSpec("fc", channels), LayerSpec("sigmoid")]
    raise ValueError(f"unknown row block {row.block!r}")


def network_specs(cfg: BuildConfig, assignment: dict) -> dict[str, NetworkSpec]:
    arch = ARCHITECTURES[cfg.arch]
    specs = {}
    for role, short in (("encoder", "E"), ("generator", "G"), ("discriminator", "D")):
        for d in (1, 2):
            layers = []
            for idx, row in enumerate(arch[role], start=1):
                for j, spec in enumerate(expand_row(role, idx, row, d, cfg, assignment, cfg.domain_shapes[d][2])):
                    spec.name = f"{short}{'s' if row.shared else d}.{idx}.{spec.kind}"
                    layers.append(spec)
            specs[f"{short}{d}"] = NetworkSpec(role, d, layers)
    layers = []
    for idx, row in enumerate(arch["latent_discriminator"], start=1):
        for spec in expand_row("latent_discriminator", idx, row, "l", cfg, assignment, 1):
            spec.name = f"Dl.{idx}.{spec.kind}"
            layers.append(spec)
    specs["Dl"] = NetworkSpec("latent_discriminator", "shared-only", layers)
    return specs


def propagate(layers: list[LayerSpec], shape: tuple) -> tuple:
    """Per-sample shape after ``layers``; raises ShapeError naming the first bad layer."""
    for spec in layers:
        if spec.kind in ("conv", "deconv", "maxpool"):
            h, w, c = shape
            if spec.kind == "deconv":
                size = lambda n: deconv_output_size(n, spec.kernel, spec.stride, spec.padding, spec.output_padding or 0)  # noqa: E731
                c = spec.channels
            else:
                if spec.padding == "valid" and (h < spec.kernel or w < spec.kernel):
                    raise ShapeError(f"layer {spec.name}: kernel {spec.kernel} exceeds input {shape}")
                size = lambda n: conv_output_size(n, spec.kernel, spec.stride, spec.padding)  # noqa: E731
                if spec.kind == "conv":
                    c = spec.channels
            shape = (size(h), size(w), c)
            if min(shape[:2]) < 1:
                raise ShapeError(f"layer {spec.name}: empty output from input {(h, w)}")
        elif spec.kind == "fc":
            shape = (spec.channels,)
    return shape


def _solve(keys_values: list[tuple[str, tuple]], check) -> Optional[dict]:
    """Smallest number of non-default choices that satisfies ``check``."""
    n = len(keys_values)
    defaults = {k: v[0] for k, v in keys_values}
    for cost in range(n + 1):
        for idxs in itertools.combinations(range(n), cost):
            alternatives = [keys_values[i][1][1:] for i in idxs]
            for choice in itertools.product(*alternatives):
                assignment = dict(defaults)
                for i, val in zip(idxs, choice):
                    assignment[keys_values[i][0]] = val
                if check(assignment):
                    return assignment
    return None


def _collect_vars(cfg: BuildConfig, role: str, domains) -> list[tuple[str, tuple]]:
    seen: dict[str, tuple] = {}
    for d in domains:
        for idx, row in enumerate(ARCHITECTURES[cfg.arch][role], start=1):
            for key, values in _row_vars(role, idx, row, d, cfg.slash_order):
                seen.setdefault(key, values)
    return list(seen.items())


def solve_padding(cfg: BuildConfig) -> dict:
    """Choose paddings so both encoders share one latent shape and each generator
    restores its domain's exact image shape.  Deviations from the default
    (``same`` for conv/deconv, ``valid`` for pooling, zero output padding) are
    minimised; layers marked valid stay valid.
    """
    shapes = cfg.domain_shapes

    def specs_for(role, d, assignment):
        layers = []
        for idx, row in enumerate(ARCHITECTURES[cfg.arch][role], start=1):
            for spec in expand_row(role, idx, row, d, cfg, assignment, shapes[d][2] if d != "l" else 1):
                spec.name = f"{role}.{idx}" + ("" if d == "l" else f".{_scope(row, d)}") + f".{spec.kind}"
                layers.append(spec)
        return layers

    def safe(layers, shape):
        try:
            return propagate(layers, shape)
        except ShapeError:
            return None

    def encoders_ok(a):
        z1 = safe(specs_for("encoder", 1, a), shapes[1])
        z2 = safe(specs_for("encoder", 2, a), shapes[2])
        return z1 is not None and z1 == z2

    enc_vars = _collect_vars(cfg, "encoder", (1, 2))
    enc = _solve(enc_vars, encoders_ok)
    if enc is None:
        _raise_unsolvable(cfg, "encoder", specs_for, {k: v[0] for k, v in enc_vars})
    latent = propagate(specs_for("encoder", 1, enc), shapes[1])

    def generators_ok(a):
        return all(safe(specs_for("generator", d, a), latent) == tuple(shapes[d]) for d in (1, 2))

    gen_vars = _collect_vars(cfg, "generator", (1, 2))
    gen = _solve(gen_vars, generators_ok)
    if gen is None:
        _raise_unsolvable(cfg, "generator", specs_for, {k: v[0] for k, v in gen_vars}, latent)

    assignment = {**enc, **gen}
    for d in (1, 2):
        dvars = [kv for kv in _collect_vars(cfg, "discriminator", (d,))]
        sol = _solve(dvars, lambda a, d=d: safe(specs_for("discriminator", d, a), shapes[d]) is not None)
        if sol is None:
            _raise_unsolvable(cfg, "discriminator", specs_for, {k: v[0] for k, v in dvars}, None, d)
        assignment.update(sol)
    lvars = _collect_vars(cfg, "latent_discriminator", ("l",))
    sol = _solve(lvars, lambda a: safe(specs_for("latent_discriminator", "l", a), latent) is not None)
    if sol is None:
        _raise_unsolvable(cfg, "latent_discriminator", specs_for, {k: v[0] for k, v in lvars}, latent, "l")
    assignment.update(sol)
    return dict(sorted(assignment.items()))


def _raise_unsolvable(cfg, role, specs_for, defaults, latent=None, only=None):
    domains = [only] if only is not None else ([1, 2] if role != "latent_discriminator" else ["l"])
    for d in domains:
        shape = latent if latent is not None else cfg.domain_shapes[d]
        try:
            out = propagate(specs_for(role, d, defaults), shape)
        except ShapeError as exc:
            raise ShapeError(f"no padding assignment makes the {role} shapes consistent; {exc}") from None
        if role == "generator" and out != tuple(cfg.domain_shapes[d]):
            last = specs_for(role, d, defaults)[-1].name
            raise ShapeError(f"no padding assignment lets generator {d} restore {cfg.domain_shapes[d]}; got {out} after layer {last}")
    raise ShapeError(f"no padding assignment makes the {role} shapes consistent (arch {cfg.arch!r}, shapes {cfg.domain_shapes})")


class ParameterStore:
    """Every named parameter and batch-norm buffer, plus the shared groups."""

    def __init__(self):
        self.params: dict[str, Parameter] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.groups: dict[str, list[str]] = {}
        self.owners: dict[str, list[str]] = {}

    def register(self, network: Network) -> None:
        for p in network.params():
            existing = self.params.setdefault(p.name, p)
            if existing is not p:
                raise ValueError(f"duplicate parameter name {p.name!r}")
            self.owners.setdefault(p.name, []).append(network.name)
        self.buffers.update(network.buffers())

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.values())

    def __len__(self):
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


class LSTNet:
    """Two encoders, two generators, two image discriminators and the latent discriminator."""

    def __init__(self, config: BuildConfig, nets: dict[str, Network], specs: dict[str, NetworkSpec], store: ParameterStore):
        self.config = config
        self.specs = specs
        self.store = store
        self.E1, self.E2 = nets["E1"], nets["E2"]
        self.G1, self.G2 = nets["G1"], nets["G2"]
        self.D1, self.D2 = nets["D1"], nets["D2"]
        self.Dl = nets["Dl"]
        self.latent_shape = self.E1.output_shape

    @property
    def networks(self) -> dict[str, Network]:
        return {"E1": self.E1, "E2": self.E2, "G1": self.G1, "G2": self.G2, "D1": self.D1, "D2": self.D2, "Dl": self.Dl}

    def image_shape(self, domain: int) -> tuple:
        return tuple(self.config.domain_shapes[domain])

    def encoder(self, domain: int) -> Network:
        return {1: self.E1, 2: self.E2}[_domain(domain)]

    def generator(self, domain: int) -> Network:
        return {1: self.G1, 2: self.G2}[_domain(domain)]

    def discriminator(self, domain: int) -> Network:
        return {1: self.D1, 2: self.D2}[_domain(domain)]

    def encode(self, domain, x, training=False):
        return self.encoder(domain)(x, training)

    def generate(self, domain, z, training=False):
        return self.generator(domain)(z, training)

    def discriminate(self, domain, x, training=False):
        return self.discriminator(domain)(x, training)

    def latent_discriminate(self, z, training=False):
        return self.Dl(z, training)

    def translate(self, x, source: int, target: int, training=False):
        return self.generate(target, self.encode(source, x, training), training)

    def team(self, phase: str) -> list[Parameter]:
        if phase == "discriminator":
            nets = (self.D1, self.D2, self.Dl)
        elif phase == "encoder_generator":
            nets = (self.E1, self.E2, self.G1, self.G2)
        else:
            raise ValueError(f"unknown team {phase!r}")
        seen: dict[int, Parameter] = {}
        for net in nets:
            for p in net.params():
                seen.setdefault(id(p), p)
        return list(seen.values())

    def parameter_report(self) -> dict:
        per_net = {name: int(sum(p.data.size for p in net.params())) for name, net in self.networks.items()}
        return {"total": self.store.count(), "tensors": len(self.store), "per_network": per_net, "shared_groups": self.store.groups}


def _domain(domain) -> int:
    if domain not in (1, 2):
        raise ValueError(f"domain must be 1 or 2, got {domain!r}")
    return domain


def _make_layer(spec: LayerSpec, in_shape: tuple, cfg: BuildConfig, rng, dtype, followed_by_bn: bool):
    slope = cfg.leaky_slope
    if spec.kind == "conv":
        return Conv(spec.name, in_shape[2], spec.channels, spec.kernel, spec.stride, spec.padding, not followed_by_bn, rng, slope, dtype)
    if spec.kind == "deconv":
        return Deconv(spec.name, in_shape[2], spec.channels, spec.kernel, spec.stride, spec.padding, spec.output_padding or 0, not followed_by_bn, rng, slope, dtype)
    if spec.kind == "batchnorm":
        return BatchNorm(spec.name, spec.channels, cfg.bn_epsilon, cfg.bn_momentum, dtype)
    if spec.kind == "leaky_relu":
        return LeakyReLU(slope)
    if spec.kind == "maxpool":
        return MaxPool(spec.kernel, spec.stride, spec.padding)
    if spec.kind == "fc":
        return Dense(spec.name, int(np.prod(in_shape)), spec.channels, rng, slope, dtype)
    if spec.kind == "sigmoid":
        return Sigmoid()
    if spec.kind == "tanh":
        return Tanh()
    raise ValueError(spec.kind)


def build_lstnet(config: Optional[BuildConfig] = None) -> LSTNet:
    """Construct all seven networks with shared encoder/generator components aliased."""
    cfg = config or BuildConfig()
    if cfg.arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {cfg.arch!r}; choose from {sorted(ARCHITECTURES)}")
    if sorted(cfg.domain_shapes) != [1, 2]:
        raise ValueError("domain_shapes must declare domains 1 and 2")
    if cfg.padding is None:
        cfg.padding = solve_padding(cfg)
    specs = network_specs(cfg, cfg.padding)
    latent = propagate(specs["E1"].layers, cfg.domain_shapes[1])
    if propagate(specs["E2"].layers, cfg.domain_shapes[2]) != latent:
        raise ShapeError("the padding assignment gives the two encoders different latent shapes")
    for d in (1, 2):
        out = propagate(specs[f"G{d}"].layers, latent)
        if out != tuple(cfg.domain_shapes[d]):
            raise ShapeError(f"generator {d} produces {out}, expected {tuple(cfg.domain_shapes[d])} (last layer {specs[f'G{d}'].layers[-1].name})")

    rng = np.random.default_rng(cfg.seed)
    dtype = np.dtype(cfg.dtype)
    cache: dict[str, object] = {}
    nets = {}
    for name, spec in specs.items():
        in_shape = latent if spec.role in ("generator", "latent_discriminator") else tuple(cfg.domain_shapes[spec.domain])
        shape = in_shape
        layers = []
        for i, ls in enumerate(spec.layers):
            followed_by_bn = i + 1 < len(spec.layers) and spec.layers[i + 1].kind == "batchnorm"
            key = ls.name if ls.shared else f"{name}:{i}"
            if key not in cache:
                cache[key] = _make_layer(ls, shape, cfg, rng, dtype, followed_by_bn)
            layer = cache[key]
            layers.append(layer)
            shape = layer.output_shape(shape)
        nets[name] = Network(name, layers, in_shape)

    store = ParameterStore()
    for net in nets.values():
        store.register(net)
    for group, prefix in (("E_s", "Es."), ("G_s", "Gs.")):
        store.groups[group] = [n for n in store.names() if n.startswith(prefix)]
    return LSTNet(cfg, nets, specs, store)
