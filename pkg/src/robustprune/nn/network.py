"""Width-scaled network families and whole-network forward/backward."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from robustprune.nn import layers as L

FAMILIES = ("mnist_lenet", "cifar_lenet", "cifar_vgg", "cifar_resnet")
NUM_CLASSES = 10

MNIST_SHAPE = (1, 28, 28)
CIFAR_SHAPE = (3, 32, 32)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str = ""
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    bias: bool = True
    in_features: int = 0
    out_features: int = 0


@dataclass(frozen=True)
class NetworkSpec:
    family: str
    width: int
    input_shape: tuple
    layers: tuple

    def to_dict(self):
        return {
            "family": self.family,
            "width": self.width,
            "input_shape": list(self.input_shape),
            "layers": [asdict(l) for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], int(d["width"]), tuple(d["input_shape"]),
                   tuple(LayerSpec(**l) for l in d["layers"]))

    @property
    def classifier(self) -> str:
        """Parameter name of the final 10-way weight matrix."""
        return [l for l in self.layers if l.kind == "fc"][-1].name + ".weight"


def _conv(name, cin, cout, k, stride=1, padding=0, bias=True):
    return LayerSpec("conv2d", name, in_channels=cin, out_channels=cout, kernel=k,
                     stride=stride, padding=padding, bias=bias)


def _fc(name, fin, fout):
    return LayerSpec("fc", name, in_features=fin, out_features=fout)


def _relu():
    return LayerSpec("relu")


def _maxpool():
    return LayerSpec("maxpool", kernel=2, stride=2)


def _mnist_lenet(w):
    # Only filter counts and the 196w flatten are fixed by the architecture
    # table.  5x5 "same" convolutions each followed by 2x2 max pooling take
    # 28x28 down to 7x7, and 4w * 7 * 7 = 196w.
    return [
        _conv("conv1", 1, 2 * w, 5, padding=2), _relu(), _maxpool(),
        _conv("conv2", 2 * w, 4 * w, 5, padding=2), _relu(), _maxpool(),
        LayerSpec("flatten"),
        _fc("fc1", 196 * w, 64 * w), _relu(),
        _fc("fc2", 64 * w, NUM_CLASSES),
    ]


def _cifar_lenet(w):
    # valid 5x5 convolutions: 32 -> 28 -> 14 -> 10 -> 5, and 16w * 5 * 5 = 400w
    return [
        _conv("conv1", 3, 6 * w, 5), _relu(), _maxpool(),
        _conv("conv2", 6 * w, 16 * w, 5), _relu(), _maxpool(),
        LayerSpec("flatten"),
        _fc("fc1", 400 * w, 120 * w), _relu(),
        _fc("fc2", 120 * w, 84 * w), _relu(),
        _fc("fc3", 84 * w, NUM_CLASSES),
    ]


_VGG_PLAN = (4, 4, "M", 8, 8, "M", 16, 16, 16, "M", 32, 32, 32, "M", 32, 32, 32, "M")


def _cifar_vgg(w):
    out, cin, i = [], 3, 0
    for item in _VGG_PLAN:
        if item == "M":
            out.append(_maxpool())
            continue
        i += 1
        cout = item * w
        out += [_conv(f"conv{i}", cin, cout, 3, padding=1, bias=False),
                LayerSpec("batchnorm", f"bn{i}", out_channels=cout), _relu()]
        cin = cout
    out += [LayerSpec("avgpool", kernel=0), LayerSpec("flatten"), _fc("fc", 32 * w, NUM_CLASSES)]
    return out


def _cifar_resnet(w):
    # ResNet-18 with every width divided by 16 and multiplied by w
    base = 4 * w
    out = [_conv("conv1", 3, base, 3, padding=1, bias=False),
           LayerSpec("batchnorm", "bn1", out_channels=base), _relu()]
    cin = base
    for stage, (mult, stride) in enumerate(((1, 1), (2, 2), (4, 2), (8, 2)), start=1):
        cout = base * mult
        for b in range(2):
            s = stride if b == 0 else 1
            out.append(LayerSpec("residual_block", f"layer{stage}.{b}",
                                 in_channels=cin, out_channels=cout, stride=s))
            cin = cout
    out += [LayerSpec("avgpool", kernel=0), LayerSpec("flatten"), _fc("fc", 8 * base, NUM_CLASSES)]
    return out


_BUILDERS = {
    "mnist_lenet": (_mnist_lenet, MNIST_SHAPE),
    "cifar_lenet": (_cifar_lenet, CIFAR_SHAPE),
    "cifar_vgg": (_cifar_vgg, CIFAR_SHAPE),
    "cifar_resnet": (_cifar_resnet, CIFAR_SHAPE),
}


def build_network(family: str, w: int) -> NetworkSpec:
    if family not in _BUILDERS:
        raise ValueError(f"unknown network family {family!r}; expected one of {FAMILIES}")
    if int(w) != w or w < 1:
        raise ValueError(f"width scale must be a positive integer, got {w!r}")
    builder, shape = _BUILDERS[family]
    return NetworkSpec(family, int(w), shape, tuple(builder(int(w))))


# -- parameter layout ---------------------------------------------------------

WEIGHT, BIAS, BN_SCALE, BN_SHIFT, BN_BUFFER = "weight", "bias", "bn_scale", "bn_shift", "bn_buffer"


def _bn_entries(name, c):
    return [(f"{name}.gamma", (c,), BN_SCALE), (f"{name}.beta", (c,), BN_SHIFT),
            (f"{name}.running_mean", (c,), BN_BUFFER), (f"{name}.running_var", (c,), BN_BUFFER)]


def param_layout(spec: NetworkSpec):
    """Ordered ``(name, shape, role)`` for every tensor the network owns."""
    out = []
    for l in spec.layers:
        if l.kind == "conv2d":
            out.append((f"{l.name}.weight", (l.out_channels, l.in_channels, l.kernel, l.kernel), WEIGHT))
            if l.bias:
                out.append((f"{l.name}.bias", (l.out_channels,), BIAS))
        elif l.kind == "fc":
            out.append((f"{l.name}.weight", (l.out_features, l.in_features), WEIGHT))
            if l.bias:
                out.append((f"{l.name}.bias", (l.out_features,), BIAS))
        elif l.kind == "batchnorm":
            out += _bn_entries(l.name, l.out_channels)
        elif l.kind == "residual_block":
            cin, cout = l.in_channels, l.out_channels
            out.append((f"{l.name}.conv1.weight", (cout, cin, 3, 3), WEIGHT))
            out += _bn_entries(f"{l.name}.bn1", cout)
            out.append((f"{l.name}.conv2.weight", (cout, cout, 3, 3), WEIGHT))
            out += _bn_entries(f"{l.name}.bn2", cout)
            if _has_projection(l):
                out.append((f"{l.name}.shortcut.weight", (cout, cin, 1, 1), WEIGHT))
                out += _bn_entries(f"{l.name}.shortcut_bn", cout)
    return out


def _has_projection(l: LayerSpec) -> bool:
    return l.stride != 1 or l.in_channels != l.out_channels


def prunable_names(spec: NetworkSpec):
    """Conv and fc weight tensors; biases and batchnorm are never pruned."""
    return [n for n, _, role in param_layout(spec) if role == WEIGHT]


def trainable_names(spec: NetworkSpec):
    return [n for n, _, role in param_layout(spec) if role != BN_BUFFER]


@dataclass
class Model:
    """A network spec together with its parameter tensors."""

    spec: NetworkSpec
    params: dict = field(default_factory=dict)

    def copy(self) -> "Model":
        return Model(self.spec, {k: v.copy() for k, v in self.params.items()})

    def check(self):
        layout = param_layout(self.spec)
        missing = [n for n, _, _ in layout if n not in self.params]
        if missing:
            raise ValueError(f"model is missing tensors {missing}")
        for n, shape, _ in layout:
            if self.params[n].shape != tuple(shape):
                raise ValueError(f"{n} has shape {self.params[n].shape}, expected {tuple(shape)}")
        return self

    def num_params(self, names=None) -> int:
        names = names if names is not None else trainable_names(self.spec)
        return int(sum(self.params[n].size for n in names))


def zeros_model(spec: NetworkSpec) -> Model:
    params = {}
    for name, shape, role in param_layout(spec):
        fill = 1.0 if name.endswith((".gamma", ".running_var")) else 0.0
        params[name] = np.full(shape, fill)
    return Model(spec, params)


# -- forward / backward -------------------------------------------------------

@dataclass
class ForwardCache:
    spec: NetworkSpec
    batch: int
    train: bool
    entries: list
    buffer_updates: dict
    used: bool = False


def _bn(p, name, x, train, updates):
    out, cache, m, v = L.batchnorm_forward(x, p[f"{name}.gamma"], p[f"{name}.beta"],
                                           p[f"{name}.running_mean"], p[f"{name}.running_var"], train)
    if train:
        updates[f"{name}.running_mean"] = m
        updates[f"{name}.running_var"] = v
    return out, cache


def _residual_forward(p, l, x, train, updates):
    n = l.name
    h, c1 = L.conv2d_forward(x, p[f"{n}.conv1.weight"], None, l.stride, 1)
    h, b1 = _bn(p, f"{n}.bn1", h, train, updates)
    h, r1 = L.relu_forward(h)
    h, c2 = L.conv2d_forward(h, p[f"{n}.conv2.weight"], None, 1, 1)
    h, b2 = _bn(p, f"{n}.bn2", h, train, updates)
    if _has_projection(l):
        s, cs = L.conv2d_forward(x, p[f"{n}.shortcut.weight"], None, l.stride, 0)
        s, bs = _bn(p, f"{n}.shortcut_bn", s, train, updates)
        short = (cs, bs)
    else:
        s, short = x, None
    out, r2 = L.relu_forward(h + s)
    return out, (c1, b1, r1, c2, b2, short, r2)


def _residual_backward(l, cache, dout, grads, param_grads):
    n = l.name
    c1, b1, r1, c2, b2, short, r2 = cache
    d = L.relu_backward(dout, r2)
    dh, g = L.batchnorm_backward(d, b2, param_grads)
    _put(grads, f"{n}.bn2", g)
    dh, g = L.conv2d_backward(dh, c2, param_grads)
    _put(grads, f"{n}.conv2", g)
    dh = L.relu_backward(dh, r1)
    dh, g = L.batchnorm_backward(dh, b1, param_grads)
    _put(grads, f"{n}.bn1", g)
    dx, g = L.conv2d_backward(dh, c1, param_grads)
    _put(grads, f"{n}.conv1", g)
    if short is None:
        dx = dx + d
    else:
        cs, bs = short
        ds, g = L.batchnorm_backward(d, bs, param_grads)
        _put(grads, f"{n}.shortcut_bn", g)
        ds, g = L.conv2d_backward(ds, cs, param_grads)
        _put(grads, f"{n}.shortcut", g)
        dx = dx + ds
    return dx


def _put(grads, prefix, g):
    for k, v in g.items():
        grads[f"{prefix}.{k}"] = v


def forward(model: Model, x, mode: str = "eval"):
    """Run the network; returns ``(logits, cache)``.

    In train mode batchnorm normalises with batch statistics and the advanced
    running statistics are returned in ``cache.buffer_updates`` rather than
    written into ``model``; callers that train apply them explicitly.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    spec, p = model.spec, model.params
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(spec.input_shape):
        raise ValueError(f"{spec.family} expects input [batch, {', '.join(map(str, spec.input_shape))}], "
                         f"got {list(x.shape)}")
    train = mode == "train"
    entries, updates = [], {}
    h = x
    for l in spec.layers:
        k = l.kind
        if k == "conv2d":
            h, c = L.conv2d_forward(h, p[f"{l.name}.weight"], p.get(f"{l.name}.bias"), l.stride, l.padding)
        elif k == "fc":
            h, c = L.fc_forward(h, p[f"{l.name}.weight"], p.get(f"{l.name}.bias"))
        elif k == "relu":
            h, c = L.relu_forward(h)
        elif k == "maxpool":
            h, c = L.maxpool_forward(h, l.kernel, l.stride)
        elif k == "avgpool":
            h, c = L.avgpool_forward(h, l.kernel)
        elif k == "batchnorm":
            h, c = _bn(p, l.name, h, train, updates)
        elif k == "flatten":
            c = h.shape
            h = h.reshape(h.shape[0], -1)
        elif k == "residual_block":
            h, c = _residual_forward(p, l, h, train, updates)
        else:
            raise ValueError(f"unknown layer kind {k!r}")
        entries.append(c)
    return h, ForwardCache(spec, x.shape[0], train, entries, updates)


def backward(model: Model, cache: ForwardCache, dlogits, param_grads: bool = True):
    """Backpropagate ``dlogits``; returns ``(grads, dx)``.

    ``grads`` maps trainable parameter names to gradients (empty when
    ``param_grads`` is false, which PGD uses to skip the weight products).
    A cache can only be consumed once.
    """
    if cache is None or not isinstance(cache, ForwardCache):
        raise ValueError("backward needs the cache returned by forward()")
    if cache.used:
        raise ValueError("forward cache was already consumed by a backward pass")
    if cache.spec != model.spec:
        raise ValueError("forward cache belongs to a different network")
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != (cache.batch, NUM_CLASSES):
        raise ValueError(f"upstream gradient shape {dlogits.shape} does not match batch {cache.batch}")
    cache.used = True
    grads = {}
    d = dlogits
    for l, c in zip(reversed(model.spec.layers), reversed(cache.entries)):
        k = l.kind
        if k == "conv2d":
            d, g = L.conv2d_backward(d, c, param_grads)
            _put(grads, l.name, g)
        elif k == "fc":
            d, g = L.fc_backward(d, c, param_grads)
            _put(grads, l.name, g)
        elif k == "relu":
            d = L.relu_backward(d, c)
        elif k == "maxpool":
            d = L.maxpool_backward(d, c)
        elif k == "avgpool":
            d = L.avgpool_backward(d, c)
        elif k == "batchnorm":
            d, g = L.batchnorm_backward(d, c, param_grads)
            _put(grads, l.name, g)
        elif k == "flatten":
            d = d.reshape(c)
        elif k == "residual_block":
            d = _residual_backward(l, c, d, grads, param_grads)
    return grads, d


def cross_entropy_loss(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    labels = labels.astype(np.intp)
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad /= n
    return float(loss), grad


def per_sample_cross_entropy(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(labels)), np.asarray(labels, dtype=np.intp)]


def apply_buffer_updates(model: Model, cache: ForwardCache):
    for k, v in cache.buffer_updates.items():
        model.params[k] = v
