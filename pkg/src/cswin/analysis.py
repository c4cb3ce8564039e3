"""Cost model: closed-form attention cost, a counting-only forward pass, the
attention-region metric and the variant table.

MAC counts follow the usual convention for vision backbones: one
multiply-accumulate is one "FLOP". Convolutions count only taps that land on
real input (zero padding is never multiplied). Layer norm, softmax, GELU,
residual adds and the LePE additions are tallied separately as auxiliary
element operations and excluded from the MAC total.
"""

import enum
import json
from dataclasses import asdict, dataclass, field

from .backbone import (
    EMBED_KERNEL,
    EMBED_PAD,
    EMBED_STRIDE,
    MERGE_KERNEL,
    MERGE_PAD,
    MERGE_STRIDE,
    VARIANTS,
    builtin_variant,
    count_params,
    stage_layout,
)

# published (params, FLOPs) per variant
PUBLISHED = {
    "T": (23e6, 4.3e9),
    "S": (35e6, 6.9e9),
    "B": (78e6, 15.0e9),
    "L": (173e6, 31.5e9),
}
PARAM_TOLERANCE = 0.03
MAC_TOLERANCE = 0.05


class Mechanism(enum.Enum):
    CSWIN = "cswin"
    AXIAL = "axial"
    CRISS_CROSS = "criss-cross"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).lower().replace("_", "-")
        for m in cls:
            if m.value == key:
                return m
        raise ValueError(f"unknown mechanism {name!r}; valid: {', '.join(m.value for m in cls)}")


def attention_macs(height, width, channels, sw):
    """``H*W*C*(4C + sw*H + sw*W)`` for one cross-shaped attention layer."""
    return height * width * channels * (4 * channels + sw * height + sw * width)


def attention_macs_itemized(height, width, channels, sw):
    hw = height * width
    return {
        "projections": 4 * hw * channels * channels,
        # half the channels attend over sw*W keys, half over sw*H keys; QK^T and AV each
        "horizontal": 2 * hw * (channels // 2) * sw * width,
        "vertical": 2 * hw * (channels // 2) * sw * height,
    }


def attention_region(mechanism, height, sw=1):
    """Tokens each head attends to on an H x H map."""
    m = Mechanism.parse(mechanism)
    if height < 1 or sw < 1:
        raise ValueError("height and sw must be >= 1")
    if m is Mechanism.CSWIN:
        return sw * height
    if m is Mechanism.AXIAL:
        return height
    return 2 * height - 1


def _valid_taps(size, k, stride, pad):
    # sum over output positions of the number of kernel taps inside the input
    out = (size + 2 * pad - k) // stride + 1
    total = 0
    for o in range(out):
        start = o * stride - pad
        total += min(start + k, size) - max(start, 0)
    return out, total


def _conv_macs(h, w, cin, cout, k, stride, pad):
    ho, taps_r = _valid_taps(h, k, stride, pad)
    wo, taps_c = _valid_taps(w, k, stride, pad)
    return ho, wo, taps_r * taps_c * cin * cout


@dataclass
class CostReport:
    params: int
    attention_macs: list
    total_macs: int
    flops_paper_convention: int
    attention_region: list
    items: dict = field(default_factory=dict)
    aux_ops: dict = field(default_factory=dict)
    param_items: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return dumps(self.to_dict())


def dumps(obj):
    """Stable JSON encoding used for every machine-readable report."""
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def instrument_forward(cfg, image_size=None, width=None):
    """Count the MACs of a forward pass without touching any values.

    Walks the same layer sequence as :func:`cswin.backbone.forward`: every
    head over every stripe contributes ``n*d*n`` for the scores and ``n*n*d``
    for the weighted sum.
    """
    image_size = cfg.input_size if image_size is None else image_size
    width = image_size if width is None else width
    layout = stage_layout(cfg, image_size, width)
    items = {}
    aux = {"layer_norm": 0, "softmax": 0, "gelu": 0, "residual_add": 0, "lepe_add": 0}

    def add(key, n):
        items[key] = items.get(key, 0) + n

    c = cfg.base_dim
    h, w, embed = _conv_macs(image_size, width, 3, c, EMBED_KERNEL, EMBED_STRIDE, EMBED_PAD)
    add("embed", embed)
    aux["layer_norm"] += h * w * c

    stage_attn = []
    stages = []
    for st in layout:
        if st.index > 0:
            h, w, m = _conv_macs(h, w, st.dim // 2, st.dim, MERGE_KERNEL, MERGE_STRIDE, MERGE_PAD)
            add(f"transition{st.index - 1}", m)
        assert (h, w) == (st.height, st.width)
        d = st.dim // st.heads
        attn_total = 0
        for _ in range(st.blocks):
            hw = h * w
            proj = 4 * hw * st.dim * st.dim
            per_head = 0
            softmax_elems = 0
            for head in range(st.heads):
                if head < st.heads // 2:
                    stripes, n = h // st.stripe_width, st.stripe_width * w
                else:
                    stripes, n = w // st.stripe_width, st.stripe_width * h
                for _ in range(stripes):
                    per_head += n * d * n + n * n * d
                    softmax_elems += n * n
                    aux["lepe_add"] += n * n * d
            attn = proj + per_head
            attn_total += attn
            add(f"stage{st.index}.attention", attn)
            mlp = 2 * hw * st.dim * st.dim * cfg.mlp_ratio
            add(f"stage{st.index}.mlp", mlp)
            aux["layer_norm"] += 2 * hw * st.dim
            aux["softmax"] += softmax_elems
            aux["gelu"] += hw * st.dim * cfg.mlp_ratio
            aux["residual_add"] += 2 * hw * st.dim
        stage_attn.append(attn_total)
        stages.append(
            {
                "stage": st.index,
                "grid": [h, w],
                "dim": st.dim,
                "heads": st.heads,
                "stripe_width": st.stripe_width,
                "blocks": st.blocks,
                "attention_macs": attn_total,
                "attention_region": st.stripe_width * h,
            }
        )
    last = cfg.stage_dims[-1]
    aux["layer_norm"] += h * w * last
    add("head", last * cfg.num_classes)
    total = sum(items.values())
    pc = count_params(cfg)
    return CostReport(
        params=pc.total,
        attention_macs=stage_attn,
        total_macs=total,
        flops_paper_convention=total,
        attention_region=[s["attention_region"] for s in stages],
        items=items,
        aux_ops=aux,
        param_items=pc.items,
        stages=stages,
    )


def _dev(value, ref):
    return (value - ref) / ref


def table1_rows(names=None, image_size=224):
    names = list(VARIANTS) + ["desk"] if names is None else names
    rows = []
    for name in names:
        cfg = builtin_variant(name)
        size = image_size if name in PUBLISHED else cfg.input_size
        rep = instrument_forward(cfg, size)
        row = {"variant": name, "resolution": size, "params": rep.params, "macs": rep.total_macs}
        if name in PUBLISHED:
            pp, pf = PUBLISHED[name]
            row.update(
                published_params=pp,
                published_macs=pf,
                params_dev=_dev(rep.params, pp),
                macs_dev=_dev(rep.total_macs, pf),
            )
            row["within_tolerance"] = (
                abs(row["params_dev"]) <= PARAM_TOLERANCE and abs(row["macs_dev"]) <= MAC_TOLERANCE
            )
        else:
            row.update(published_params=None, published_macs=None, params_dev=None, macs_dev=None, within_tolerance=None)
        rows.append(row)
    return rows


def _fmt_count(n, unit, scale):
    if n is None:
        return "n/a"
    if n < scale / 10:
        return f"{n / 1e6:.3f}M"
    return f"{n / scale:.2f}{unit}"


def _fmt_dev(d):
    return "n/a" if d is None else f"{100 * d:+.2f}%"


def format_rows(rows):
    header = f"{'variant':<8}{'res':>5}{'params':>10}{'ref':>9}{'dev':>9}{'MACs':>10}{'ref':>9}{'dev':>9}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['variant']:<8}{r['resolution']:>5}"
            f"{_fmt_count(r['params'], 'M', 1e6):>10}{_fmt_count(r['published_params'], 'M', 1e6):>9}"
            f"{_fmt_dev(r['params_dev']):>9}"
            f"{_fmt_count(r['macs'], 'G', 1e9):>10}{_fmt_count(r['published_macs'], 'G', 1e9):>9}"
            f"{_fmt_dev(r['macs_dev']):>9}"
        )
    return "\n".join(lines) + "\n"


def table1_report(fmt="text"):
    """Computed vs published params and MACs for every builtin variant at 224x224."""
    rows = table1_rows()
    if fmt == "json":
        return dumps({"rows": rows, "param_tolerance": PARAM_TOLERANCE, "mac_tolerance": MAC_TOLERANCE})
    return format_rows(rows)
