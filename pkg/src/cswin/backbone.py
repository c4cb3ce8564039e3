"""The hierarchical backbone: conv token embedding, four stages of blocks,
stride-2 conv transitions and a pooled linear classifier.

Parameters live in a flat ``dict`` keyed by dotted paths such as
``stage2.block5.attn.wq``; :func:`param_shapes` is the single source of truth
for the layout.
"""

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from .attention import AttentionConfig, HeadProjections, cswin_attention_backward, cswin_attention_forward
from .errors import ConfigError, GeometryError
from .lepe import DEFAULT_TAU, LePETable
from .numerics import ops
from .numerics.init import DEFAULT_STD, init_params

NUM_STAGES = 4
EMBED_KERNEL, EMBED_STRIDE, EMBED_PAD = 7, 4, 3
MERGE_KERNEL, MERGE_STRIDE, MERGE_PAD = 3, 2, 1


@dataclass(frozen=True)
class ModelConfig:
    base_dim: int
    blocks_per_stage: tuple
    stripe_widths: tuple
    heads_per_stage: tuple
    mlp_ratio: int = 4
    num_classes: int = 1000
    input_size: int = 224
    tau: int = DEFAULT_TAU

    def __post_init__(self):
        for name in ("blocks_per_stage", "stripe_widths", "heads_per_stage"):
            value = tuple(int(v) for v in getattr(self, name))
            if len(value) != NUM_STAGES:
                raise ConfigError(f"{name} needs {NUM_STAGES} entries, got {len(value)}")
            object.__setattr__(self, name, value)
        if self.base_dim < 1 or self.mlp_ratio < 1 or self.num_classes < 1 or self.tau < 0:
            raise ConfigError(f"invalid scalar field in {self}")
        if min(self.blocks_per_stage) < 0 or min(self.stripe_widths) < 1:
            raise ConfigError("block counts must be >= 0 and stripe widths >= 1")
        for i, (dim, heads) in enumerate(zip(self.stage_dims, self.heads_per_stage)):
            if heads < 2 or heads % 2:
                raise ConfigError(f"stage {i}: heads must be a positive even number, got {heads}")
            if dim % heads:
                raise ConfigError(f"stage {i}: dim {dim} not divisible by {heads} heads")

    @property
    def stage_dims(self):
        return tuple(self.base_dim * 2**i for i in range(NUM_STAGES))

    def to_dict(self):
        d = dataclasses.asdict(self)
        for k in ("blocks_per_stage", "stripe_widths", "heads_per_stage"):
            d[k] = list(d[k])
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("model config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(data)


_SW = (1, 2, 7, 7)
VARIANTS = {
    "T": ModelConfig(64, (1, 2, 21, 1), _SW, (2, 4, 8, 16)),
    "S": ModelConfig(64, (2, 4, 32, 2), _SW, (2, 4, 8, 16)),
    "B": ModelConfig(96, (2, 4, 32, 2), _SW, (4, 8, 16, 32)),
    "L": ModelConfig(144, (2, 4, 32, 2), _SW, (6, 12, 24, 48)),
}
DESK = ModelConfig(16, (1, 1, 1, 1), (1, 2, 2, 2), (2, 2, 2, 2), num_classes=10, input_size=32)


def builtin_variant(name):
    if name in VARIANTS:
        return VARIANTS[name]
    if name == "desk":
        return DESK
    raise ConfigError(f"unknown variant {name!r}; valid names: {', '.join(VARIANTS)}, desk")


@dataclass(frozen=True)
class StageLayout:
    index: int
    height: int
    width: int
    dim: int
    heads: int
    stripe_width: int  # after clamping to the map size
    blocks: int

    def attention_config(self, tau):
        return AttentionConfig(self.height, self.width, self.dim, self.heads, self.stripe_width, tau)


def stage_layout(cfg, height, width=None):
    """Token grid, width and stripe width of every stage for an input image.

    A stripe width larger than the feature map is clamped to the map, so the
    stripe then spans the whole map.
    """
    width = height if width is None else width
    if height % EMBED_STRIDE or width % EMBED_STRIDE or height <= 0 or width <= 0:
        raise GeometryError(f"input {height}x{width} is not divisible by the embedding stride {EMBED_STRIDE}")
    h, w = height // EMBED_STRIDE, width // EMBED_STRIDE
    out = []
    for i in range(NUM_STAGES):
        if i > 0:
            if h % 2 or w % 2:
                raise GeometryError(f"transition {i - 1}: token grid {h}x{w} is not even")
            h, w = h // 2, w // 2
        sw = min(cfg.stripe_widths[i], h, w)
        if h % sw or w % sw:
            raise GeometryError(f"stage {i}: stripe width {sw} does not divide the {h}x{w} token grid")
        out.append(StageLayout(i, h, w, cfg.stage_dims[i], cfg.heads_per_stage[i], sw, cfg.blocks_per_stage[i]))
    return out


# ---------------------------------------------------------------------------
# parameters


def block_shapes(dim, mlp_ratio, tau):
    side = 2 * tau + 1
    hidden = dim * mlp_ratio
    return {
        "norm1.gamma": (dim,),
        "norm1.beta": (dim,),
        "attn.wq": (dim, dim),
        "attn.wk": (dim, dim),
        "attn.wv": (dim, dim),
        "attn.wo": (dim, dim),
        "attn.lepe": (side, side, dim),
        "norm2.gamma": (dim,),
        "norm2.beta": (dim,),
        "mlp.fc1.weight": (dim, hidden),
        "mlp.fc1.bias": (hidden,),
        "mlp.fc2.weight": (hidden, dim),
        "mlp.fc2.bias": (dim,),
    }


def param_shapes(cfg):
    """Ordered mapping from parameter path to shape."""
    c = cfg.base_dim
    shapes = {
        "embed.kernel": (EMBED_KERNEL, EMBED_KERNEL, 3, c),
        "embed.bias": (c,),
        "embed.norm.gamma": (c,),
        "embed.norm.beta": (c,),
    }
    for i, dim in enumerate(cfg.stage_dims):
        for j in range(cfg.blocks_per_stage[i]):
            for name, shape in block_shapes(dim, cfg.mlp_ratio, cfg.tau).items():
                shapes[f"stage{i}.block{j}.{name}"] = shape
        if i < NUM_STAGES - 1:
            shapes[f"transition{i}.kernel"] = (MERGE_KERNEL, MERGE_KERNEL, dim, 2 * dim)
            shapes[f"transition{i}.bias"] = (2 * dim,)
    last = cfg.stage_dims[-1]
    shapes["head.norm.gamma"] = (last,)
    shapes["head.norm.beta"] = (last,)
    shapes["head.weight"] = (last, cfg.num_classes)
    shapes["head.bias"] = (cfg.num_classes,)
    return shapes


def init_model(cfg, seed, std=DEFAULT_STD):
    """Seeded parameters: truncated normals for weights and kernels, LN at
    (1, 0), zero biases and zero LePE tables."""
    params = {}
    for path, shape in param_shapes(cfg).items():
        leaf = path.rsplit(".", 1)[-1]
        if leaf == "gamma":
            params[path] = np.ones(shape)
        elif leaf in ("beta", "bias", "lepe"):
            params[path] = np.zeros(shape)
        else:
            params[path] = init_params(shape, seed, std, path=path)
    return params


def check_params(cfg, params):
    shapes = param_shapes(cfg)
    missing = sorted(set(shapes) - set(params))
    extra = sorted(set(params) - set(shapes))
    if missing or extra:
        raise GeometryError(f"parameter set mismatch; missing={missing[:5]} extra={extra[:5]}")
    for path, shape in shapes.items():
        if tuple(np.shape(params[path])) != shape:
            raise GeometryError(f"{path}: shape {np.shape(params[path])}, expected {shape}")


@dataclass
class ParamCount:
    total: int
    items: dict


def _param_group(path):
    parts = path.split(".")
    if parts[0].startswith("stage"):
        kind = parts[2]
        if kind == "attn":
            kind = "lepe" if parts[3] == "lepe" else "attention"
        elif kind.startswith("norm"):
            kind = "norm"
        return f"{parts[0]}.{kind}"
    return parts[0]


def count_params(cfg):
    """Exact learnable-scalar count, itemised by component."""
    items = {}
    for path, shape in param_shapes(cfg).items():
        group = _param_group(path)
        items[group] = items.get(group, 0) + math.prod(shape)
    return ParamCount(sum(items.values()), items)


def block_params(params, prefix):
    return {k[len(prefix) + 1:]: v for k, v in params.items() if k.startswith(prefix + ".")}


# ---------------------------------------------------------------------------
# layers


def token_embed_forward(image, params):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise GeometryError(f"expected an [H, W, 3] image, got {image.shape}")
    h, w, _ = image.shape
    if h % EMBED_STRIDE or w % EMBED_STRIDE:
        raise GeometryError(f"input {h}x{w} is not divisible by the embedding stride {EMBED_STRIDE}")
    y = ops.conv2d(image, params["embed.kernel"], params["embed.bias"], EMBED_STRIDE, EMBED_PAD)
    out = ops.layer_norm(y, params["embed.norm.gamma"], params["embed.norm.beta"])
    return out, (image, y)


def token_embed(image, params):
    return token_embed_forward(image, params)[0]


def token_embed_backward(dout, cache, params, grads):
    image, y = cache
    dy, grads["embed.norm.gamma"], grads["embed.norm.beta"] = ops.layer_norm_backward(
        dout, y, params["embed.norm.gamma"]
    )
    dimg, grads["embed.kernel"], grads["embed.bias"] = ops.conv2d_backward(
        dy, image, params["embed.kernel"], EMBED_STRIDE, EMBED_PAD
    )
    return dimg


def stage_transition_forward(x, kernel, bias):
    x = np.asarray(x, dtype=np.float64)
    h, w, _ = x.shape
    if h % 2 or w % 2:
        raise GeometryError(f"stage transition needs even token grid, got {h}x{w}")
    return ops.conv2d(x, kernel, bias, MERGE_STRIDE, MERGE_PAD), x


def stage_transition(x, kernel, bias):
    """3x3 stride-2 conv: halves the grid, maps D channels to ``kernel.shape[3]``."""
    return stage_transition_forward(x, kernel, bias)[0]


def cswin_block_forward(x, acfg, bp):
    """``x + Attn(LN(x))`` followed by ``+ MLP(LN(.))``; returns (out, cache)."""
    h, w, d = x.shape
    x1 = ops.layer_norm(x, bp["norm1.gamma"], bp["norm1.beta"])
    proj = HeadProjections(bp["attn.wq"], bp["attn.wk"], bp["attn.wv"], bp["attn.wo"])
    lepe = LePETable(acfg.tau, bp["attn.lepe"])
    a, acache = cswin_attention_forward(x1, acfg, proj, lepe)
    xh = x + a
    x2 = ops.layer_norm(xh, bp["norm2.gamma"], bp["norm2.beta"]).reshape(h * w, d)
    h1 = ops.linear(x2, bp["mlp.fc1.weight"], bp["mlp.fc1.bias"])
    g = ops.gelu(h1)
    m = ops.linear(g, bp["mlp.fc2.weight"], bp["mlp.fc2.bias"])
    out = xh + m.reshape(h, w, d)
    return out, (x, acache, xh, x2, h1, g)


def cswin_block(x, acfg, bp):
    return cswin_block_forward(x, acfg, bp)[0]


def cswin_block_backward(dout, cache, bp):
    x, acache, xh, x2, h1, g = cache
    h, w, d = x.shape
    grads = {}
    dm = dout.reshape(h * w, d)
    dg, grads["mlp.fc2.weight"], grads["mlp.fc2.bias"] = ops.linear_backward(dm, g, bp["mlp.fc2.weight"])
    dh1 = ops.gelu_backward(dg, h1)
    dx2, grads["mlp.fc1.weight"], grads["mlp.fc1.bias"] = ops.linear_backward(dh1, x2, bp["mlp.fc1.weight"])
    dxh_ln, grads["norm2.gamma"], grads["norm2.beta"] = ops.layer_norm_backward(
        dx2.reshape(h, w, d), xh, bp["norm2.gamma"]
    )
    dxh = dout + dxh_ln
    dx1, ag = cswin_attention_backward(dxh, acache)
    for k in ("wq", "wk", "wv", "wo"):
        grads[f"attn.{k}"] = ag[k]
    grads["attn.lepe"] = ag["lepe"]
    dx_ln, grads["norm1.gamma"], grads["norm1.beta"] = ops.layer_norm_backward(dx1, x, bp["norm1.gamma"])
    return dxh + dx_ln, grads


# ---------------------------------------------------------------------------
# full model


def forward_with_cache(image, cfg, params):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise GeometryError(f"expected an [H, W, 3] image, got {image.shape}")
    layout = stage_layout(cfg, image.shape[0], image.shape[1])
    x, ecache = token_embed_forward(image, params)
    caches = {"embed": ecache, "blocks": [], "transitions": []}
    for st in layout:
        if st.index > 0:
            p = f"transition{st.index - 1}"
            try:
                x, tcache = stage_transition_forward(x, params[f"{p}.kernel"], params[f"{p}.bias"])
            except GeometryError as exc:
                raise GeometryError(f"{p}: {exc}") from None
            caches["transitions"].append(tcache)
        acfg = st.attention_config(cfg.tau)
        for j in range(st.blocks):
            prefix = f"stage{st.index}.block{j}"
            try:
                x, bcache = cswin_block_forward(x, acfg, block_params(params, prefix))
            except GeometryError as exc:
                raise GeometryError(f"{prefix}: {exc}") from None
            caches["blocks"].append((prefix, bcache))
    h, w, d = x.shape
    tokens = x.reshape(h * w, d)
    normed = ops.layer_norm(tokens, params["head.norm.gamma"], params["head.norm.beta"])
    pooled = ops.seq_sum(normed, axis=0) / (h * w)
    logits = ops.linear(pooled[None, :], params["head.weight"], params["head.bias"])[0]
    caches["head"] = (tokens, normed, pooled, (h, w, d))
    caches["layout"] = layout
    return logits, caches


def forward(image, cfg, params):
    """Logits ``[num_classes]`` for one ``[H, W, 3]`` image."""
    return forward_with_cache(image, cfg, params)[0]


def backward(dlogits, caches, params):
    """Gradients for the image and every parameter, keyed like ``params``."""
    grads = {}
    tokens, normed, pooled, (h, w, d) = caches["head"]
    dpooled, grads["head.weight"], grads["head.bias"] = ops.linear_backward(
        np.asarray(dlogits, dtype=np.float64)[None, :], pooled[None, :], params["head.weight"]
    )
    dnormed = np.repeat(dpooled / (h * w), h * w, axis=0)
    dtokens, grads["head.norm.gamma"], grads["head.norm.beta"] = ops.layer_norm_backward(
        dnormed, tokens, params["head.norm.gamma"]
    )
    dx = dtokens.reshape(h, w, d)
    blocks = list(caches["blocks"])
    transitions = list(caches["transitions"])
    for st in reversed(caches["layout"]):
        for j in reversed(range(st.blocks)):
            prefix, bcache = blocks.pop()
            dx, bg = cswin_block_backward(dx, bcache, block_params(params, prefix))
            for k, v in bg.items():
                grads[f"{prefix}.{k}"] = v
        if st.index > 0:
            p = f"transition{st.index - 1}"
            xin = transitions.pop()
            dx, grads[f"{p}.kernel"], grads[f"{p}.bias"] = ops.conv2d_backward(
                dx, xin, params[f"{p}.kernel"], MERGE_STRIDE, MERGE_PAD
            )
    dimage = token_embed_backward(dx, caches["embed"], params, grads)
    return dimage, grads
