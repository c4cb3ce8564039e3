"""Verification suites behind ``cswin gradcheck`` and ``cswin oracle-check``.

Each suite returns a list of :class:`Check` records instead of raising, so a
caller can report every failure at once.
"""

from dataclasses import dataclass

import numpy as np

from . import attention as attn
from . import backbone
from .lepe import LePETable
from .numerics import ops
from .numerics.gradcheck import finite_diff_grad, relative_error

OP_TOLERANCE = 1e-5
MODEL_TOLERANCE = 1e-4
ORACLE_TOLERANCE = 1e-10
FD_STEP = 1e-6


@dataclass
class Check:
    name: str
    value: float
    passed: bool
    rule: str

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<46} {self.value:.3e}  ({self.rule})"


def _check(name, value, threshold):
    return Check(name, float(value), bool(value < threshold), f"< {threshold:.0e}")


def _zero(name, count):
    return Check(name, float(count), count == 0, "== 0")


def _grad_checks(prefix, loss, inputs, analytic, tol=OP_TOLERANCE):
    """Compare ``analytic[name]`` with central differences of ``loss(dict)``."""
    out = []
    for name, x in inputs.items():
        def f(v, name=name):
            args = dict(inputs)
            args[name] = v
            return loss(args)

        numeric = finite_diff_grad(f, x, FD_STEP)
        out.append(_check(f"{prefix}/{name}", relative_error(analytic[name], numeric), tol))
    return out


def _small_desk(scale):
    if scale == "small":
        return backbone.ModelConfig(8, (1, 1, 1, 1), (1, 2, 2, 2), (2, 2, 2, 2), num_classes=4, input_size=32)
    return backbone.DESK


def op_gradient_suite(seed):
    rng = np.random.default_rng(seed)
    checks = []

    # matmul
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 5))
    r = rng.normal(size=(3, 5))
    da, db = ops.matmul_backward(r, a, b)
    checks += _grad_checks("matmul", lambda p: np.sum(ops.matmul(p["a"], p["b"]) * r), {"a": a, "b": b}, {"a": da, "b": db})

    # linear with bias
    x, w, bias = rng.normal(size=(4, 3)), rng.normal(size=(3, 5)), rng.normal(size=5)
    r = rng.normal(size=(4, 5))
    dx, dw, dbias = ops.linear_backward(r, x, w)
    checks += _grad_checks(
        "linear",
        lambda p: np.sum(ops.linear(p["x"], p["w"], p["b"]) * r),
        {"x": x, "w": w, "b": bias},
        {"x": dx, "w": dw, "b": dbias},
    )

    # softmax
    x = rng.normal(size=(4, 6)) * 2.0
    r = rng.normal(size=(4, 6))
    y = ops.softmax(x)
    checks += _grad_checks(
        "softmax", lambda p: np.sum(ops.softmax(p["x"]) * r), {"x": x}, {"x": ops.softmax_backward(r, y)}
    )

    # layer norm
    x, g, be = rng.normal(size=(5, 8)), 1.0 + 0.3 * rng.normal(size=8), rng.normal(size=8)
    r = rng.normal(size=(5, 8))
    dx, dg, dbe = ops.layer_norm_backward(r, x, g)
    checks += _grad_checks(
        "layer_norm",
        lambda p: np.sum(ops.layer_norm(p["x"], p["gamma"], p["beta"]) * r),
        {"x": x, "gamma": g, "beta": be},
        {"x": dx, "gamma": dg, "beta": dbe},
    )

    # gelu
    x = rng.normal(size=(6, 8)) * 2.0
    r = rng.normal(size=(6, 8))
    checks += _grad_checks("gelu", lambda p: np.sum(ops.gelu(p["x"]) * r), {"x": x}, {"x": ops.gelu_backward(r, x)})

    # conv2d, stride 2 with padding
    x, k, bias = rng.normal(size=(5, 5, 2)), rng.normal(size=(3, 3, 2, 3)), rng.normal(size=3)
    y = ops.conv2d(x, k, bias, 2, 1)
    r = rng.normal(size=y.shape)
    dx, dk, dbias = ops.conv2d_backward(r, x, k, 2, 1)
    checks += _grad_checks(
        "conv2d",
        lambda p: np.sum(ops.conv2d(p["x"], p["kernel"], p["bias"], 2, 1) * r),
        {"x": x, "kernel": k, "bias": bias},
        {"x": dx, "kernel": dk, "bias": dbias},
    )

    # cross-shaped attention with a non-zero LePE table
    cfg = attn.AttentionConfig(4, 4, 4, 2, 2, tau=1)
    x = rng.normal(size=(4, 4, 4))
    mats = {n: 0.5 * rng.normal(size=(4, 4)) for n in ("wq", "wk", "wv", "wo")}
    table = 0.3 * rng.normal(size=(3, 3, 4))
    r = rng.normal(size=(4, 4, 4))

    def attn_loss(p):
        proj = attn.HeadProjections(p["wq"], p["wk"], p["wv"], p["wo"])
        return np.sum(attn.cswin_attention(p["x"], cfg, proj, LePETable(1, p["lepe"])) * r)

    proj = attn.HeadProjections(**mats)
    _, cache = attn.cswin_attention_forward(x, cfg, proj, LePETable(1, table))
    dx, g = attn.cswin_attention_backward(r, cache)
    inputs = {"x": x, **mats, "lepe": table}
    checks += _grad_checks("cswin_attention", attn_loss, inputs, {"x": dx, **g})

    # sequential ablation, shared parameters for both passes
    def seq_loss(p):
        proj = attn.HeadProjections(p["wq"], p["wk"], p["wv"], p["wo"])
        return np.sum(attn.sequential_cswin_attention(p["x"], cfg, proj, LePETable(1, p["lepe"])) * r)

    _, cache = attn.sequential_cswin_attention_forward(x, cfg, proj, LePETable(1, table))
    dx, (g1, g2) = attn.sequential_cswin_attention_backward(r, cache)
    summed = {k: g1[k] + g2[k] for k in g1}
    checks += _grad_checks("sequential_attention", seq_loss, inputs, {"x": dx, **summed})

    # one block
    acfg = attn.AttentionConfig(2, 4, 4, 2, 2, tau=1)
    shapes = backbone.block_shapes(4, 2, 1)
    bp = {k: 0.4 * rng.normal(size=s) for k, s in shapes.items()}
    bp["norm1.gamma"] += 1.0
    bp["norm2.gamma"] += 1.0
    x = rng.normal(size=(2, 4, 4))
    r = rng.normal(size=(2, 4, 4))
    _, cache = backbone.cswin_block_forward(x, acfg, bp)
    dx, g = backbone.cswin_block_backward(r, cache, bp)
    sample = {"x": x, "attn.wq": bp["attn.wq"], "attn.lepe": bp["attn.lepe"], "mlp.fc1.weight": bp["mlp.fc1.weight"],
              "norm2.gamma": bp["norm2.gamma"]}

    def block_loss(p):
        merged = dict(bp)
        merged.update({k: v for k, v in p.items() if k != "x"})
        return np.sum(backbone.cswin_block(p["x"], acfg, merged) * r)

    checks += _grad_checks("cswin_block", block_loss, sample, {"x": dx, **g})
    return checks


def model_gradient_check(seed, scale="desk", samples=20):
    """End-to-end check on ``samples`` randomly chosen parameter entries."""
    cfg = _small_desk(scale)
    rng = np.random.default_rng(seed)
    params = backbone.init_model(cfg, seed)
    # give zero-initialised tensors some signal so every path is exercised
    for k, v in params.items():
        if k.endswith(("bias", "beta", "lepe")):
            params[k] = 0.05 * rng.normal(size=v.shape)
    image = rng.normal(size=(cfg.input_size, cfg.input_size, 3))
    r = rng.normal(size=cfg.num_classes)
    logits, cache = backbone.forward_with_cache(image, cfg, params)
    _, grads = backbone.backward(r, cache, params)
    keys = sorted(params)
    analytic, numeric = [], []
    for _ in range(samples):
        key = keys[int(rng.integers(len(keys)))]
        idx = int(rng.integers(params[key].size))

        def f(v, key=key):
            p = dict(params)
            p[key] = v
            return float(backbone.forward(image, cfg, p) @ r)

        numeric.append(finite_diff_grad(f, params[key], FD_STEP, indices=[idx])[0])
        analytic.append(grads[key].ravel()[idx])
    return _check(f"model[{scale}] {samples} params", relative_error(analytic, numeric), MODEL_TOLERANCE)


def gradient_suite(seed=0, scale="desk"):
    return op_gradient_suite(seed) + [model_gradient_check(seed, scale)]


# ---------------------------------------------------------------------------
# oracle / locality


def _random_proj(rng, c, scale=0.5):
    return attn.HeadProjections(*(scale * rng.normal(size=(c, c)) for _ in range(4)))


def oracle_equivalence(max_size=8, channels=(4, 8, 16), heads=(2, 4), seed=0):
    """Largest |CSWin - full attention| over square maps with sw = H = W and zero LePE."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in range(1, max_size + 1):
        for c in channels:
            for k in heads:
                if c % k:
                    continue
                cfg = attn.AttentionConfig(n, n, c, k, n)
                x = rng.normal(size=(n, n, c))
                p = _random_proj(rng, c)
                y = attn.cswin_attention(x, cfg, p, LePETable.zeros(c, cfg.tau))
                worst = max(worst, float(np.max(np.abs(y - attn.full_attention_oracle(x, k, p)))))
    return worst


def in_cross(i, j, t, sw):
    """True if token ``t`` lies in the row stripe of ``i`` or the column stripe of ``j``."""
    return t[0] // sw == i // sw or t[1] // sw == j // sw


def locality_violations(size=6, sws=(1, 2, 3), channels=4, heads=2, seed=0):
    """Count (output, perturbed token) pairs outside the cross whose output bits changed."""
    rng = np.random.default_rng(seed)
    violations = 0
    for sw in sws:
        cfg = attn.AttentionConfig(size, size, channels, heads, sw)
        p = _random_proj(rng, channels)
        lepe = LePETable(cfg.tau, 0.2 * rng.normal(size=(2 * cfg.tau + 1, 2 * cfg.tau + 1, channels)))
        x = rng.normal(size=(size, size, channels))
        base = attn.cswin_attention(x, cfg, p, lepe)
        for tr in range(size):
            for tc in range(size):
                xp = x.copy()
                xp[tr, tc] += 1.0 + rng.normal(size=channels)
                y = attn.cswin_attention(xp, cfg, p, lepe)
                same = np.all(y == base, axis=2)
                for i in range(size):
                    for j in range(size):
                        if not in_cross(i, j, (tr, tc), sw) and not same[i, j]:
                            violations += 1
    return violations


def stripe_roundtrip_failures(cases=200, seed=0):
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(cases):
        sw = int(rng.integers(1, 5))
        h = sw * int(rng.integers(1, 5))
        w = sw * int(rng.integers(1, 5))
        c = int(rng.integers(1, 6))
        o = attn.Orientation.HORIZONTAL if rng.integers(2) else attn.Orientation.VERTICAL
        x = rng.normal(size=(h, w, c))
        back = attn.stripe_merge(attn.stripe_partition(x, sw, o), sw, o, h, w)
        if not np.array_equal(back.view(np.uint64), x.view(np.uint64)):
            failures += 1
    return failures


def sequential_vs_parallel_difference(seed=0):
    rng = np.random.default_rng(seed)
    cfg = attn.AttentionConfig(4, 4, 8, 2, 1)
    p = _random_proj(rng, 8)
    lepe = LePETable.zeros(8)
    x = rng.normal(size=(4, 4, 8))
    par = attn.cswin_attention(x, cfg, p, lepe)
    seq = attn.sequential_cswin_attention(x, cfg, p, lepe)
    return float(np.max(np.abs(par - seq)))


def oracle_suite(max_size=8, seed=0):
    checks = [
        _check(f"full-attention equivalence (<= {max_size}x{max_size})", oracle_equivalence(max_size, seed=seed), ORACLE_TOLERANCE),
        _zero("cross locality violations (6x6, sw=1,2,3)", locality_violations(seed=seed)),
        _zero("stripe round-trip failures (200 cases)", stripe_roundtrip_failures(seed=seed)),
    ]
    diff = sequential_vs_parallel_difference(seed)
    checks.append(Check("sequential vs parallel max |diff|", diff, diff > 0.0, "> 0"))
    return checks
