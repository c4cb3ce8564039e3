"""``cswin`` command line: shape traces, cost reports, forward runs and the
verification suites.

Exit codes: 0 success, 2 usage or configuration, 3 I/O, 4 file format,
5 geometry, 6 verification failure.
"""

import argparse
import os
import sys

from . import analysis, backbone
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, FormatError, GeometryError
from .numerics import cswt, kernels

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_GEOMETRY = 5
EXIT_VERIFY = 6


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def load_config(path):
    with open(path) as fh:
        return backbone.ModelConfig.from_json(fh.read())


def _model_from_args(args):
    if getattr(args, "config", None):
        return load_config(args.config)
    return backbone.builtin_variant(args.variant or "T")


def _add_model_args(p, default_resolution=True):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--variant", help="builtin variant: T, S, B, L or desk")
    g.add_argument("--config", help="model config JSON file")
    if default_resolution:
        p.add_argument("--resolution", type=int, help="input side in pixels (default: config input_size)")


def cmd_trace(args, out):
    cfg = _model_from_args(args)
    res = args.resolution or cfg.input_size
    layout = backbone.stage_layout(cfg, res, res)
    c = cfg.base_dim
    g = res // backbone.EMBED_STRIDE
    out.write(f"input        {res}x{res}x3\n")
    out.write(f"embed        conv7x7/s4 + LN   {res}x{res}x3 -> {g}x{g}x{c}\n")
    for st in layout:
        if st.index > 0:
            prev = layout[st.index - 1]
            out.write(
                f"transition{st.index - 1}  conv3x3/s2        "
                f"{prev.height}x{prev.width}x{prev.dim} -> {st.height}x{st.width}x{st.dim}\n"
            )
        out.write(
            f"stage{st.index}       grid={st.height}x{st.width} tokens={st.height * st.width} "
            f"dim={st.dim} heads={st.heads} sw={st.stripe_width} blocks={st.blocks}\n"
        )
        for j in range(st.blocks):
            shape = f"{st.height}x{st.width}x{st.dim}"
            out.write(f"  block{j:<6} {shape} -> {shape}\n")
    last = layout[-1]
    out.write(f"head         LN + mean pool + linear  {last.height}x{last.width}x{last.dim} -> {cfg.num_classes}\n")
    out.write("stage grids: " + " ".join(str(st.height) for st in layout) + "\n")
    return EXIT_OK


def flops_payload(cfg, res, name=None):
    rep = analysis.instrument_forward(cfg, res, res)
    stages = []
    for s in rep.stages:
        h, w = s["grid"]
        eq3 = analysis.attention_macs(h, w, s["dim"], s["stripe_width"])
        stages.append(dict(s, eq3_per_layer=eq3, eq3_match=s["attention_macs"] == eq3 * s["blocks"]))
    payload = {
        "variant": name,
        "resolution": res,
        "params": rep.params,
        "total_macs": rep.total_macs,
        "flops_paper_convention": rep.flops_paper_convention,
        "items": rep.items,
        "aux_ops": rep.aux_ops,
        "param_items": rep.param_items,
        "stages": stages,
    }
    if name in analysis.PUBLISHED and res == 224:
        pp, pf = analysis.PUBLISHED[name]
        payload["published"] = {"params": pp, "macs": pf}
        payload["params_dev"] = (rep.params - pp) / pp
        payload["macs_dev"] = (rep.total_macs - pf) / pf
    return payload


def cmd_flops(args, out):
    cfg = _model_from_args(args)
    name = None if args.config else (args.variant or "T")
    res = args.resolution or cfg.input_size
    payload = flops_payload(cfg, res, name)
    if args.json:
        out.write(analysis.dumps(payload))
        return EXIT_OK
    ref = payload.get("published")
    row = {
        "variant": name or os.path.basename(args.config),
        "resolution": res,
        "params": payload["params"],
        "macs": payload["total_macs"],
        "published_params": ref["params"] if ref else None,
        "published_macs": ref["macs"] if ref else None,
        "params_dev": payload.get("params_dev"),
        "macs_dev": payload.get("macs_dev"),
    }
    out.write(analysis.format_rows([row]))
    out.write("\nattention per stage (counted vs H*W*C*(4C+sw*H+sw*W) x blocks)\n")
    for s in payload["stages"]:
        mark = "ok" if s["eq3_match"] else "MISMATCH"
        out.write(
            f"  stage{s['stage']} {s['grid'][0]}x{s['grid'][1]} C={s['dim']} sw={s['stripe_width']} "
            f"blocks={s['blocks']}: {s['attention_macs']} vs {s['eq3_per_layer'] * s['blocks']} [{mark}] "
            f"region={s['attention_region']}\n"
        )
    out.write("\nMAC items\n")
    for k, v in payload["items"].items():
        out.write(f"  {k:<20} {v}\n")
    out.write("\nparameter items\n")
    for k, v in payload["param_items"].items():
        out.write(f"  {k:<20} {v}\n")
    return EXIT_OK


def cmd_forward(args, out):
    cfg = load_config(args.config)
    params, _ = load_checkpoint(args.params, cfg)
    image = cswt.load(args.input)
    kernels.set_num_threads(args.threads)
    try:
        logits = backbone.forward(image, cfg, params)
    finally:
        kernels.set_num_threads(1)
    cswt.save(args.output, logits, "float64")
    out.write(f"wrote {logits.shape[0]} logits to {args.output}\n")
    return EXIT_OK


def cmd_init(args, out):
    cfg = _model_from_args(args)
    params = backbone.init_model(cfg, args.seed)
    save_checkpoint(args.output, params, cfg, args.dtype)
    with open(os.path.join(args.output, "config.json"), "w") as fh:
        fh.write(cfg.to_json())
    out.write(f"wrote {len(params)} tensors ({backbone.count_params(cfg).total} scalars) to {args.output}\n")
    return EXIT_OK


def cmd_gradcheck(args, out):
    from .verify import gradient_suite

    worst = {}
    ok = True
    for seed in range(args.seed, args.seed + args.seeds):
        for c in gradient_suite(seed, args.scale):
            op = c.name.split("/")[0]
            prev = worst.get(op)
            if prev is None or c.value > prev.value or not c.passed:
                worst[op] = c
            ok &= c.passed
    out.write(f"gradient check: seeds {args.seed}..{args.seed + args.seeds - 1}, scale={args.scale}, "
              f"backend={kernels.backend_name()}\n")
    for c in worst.values():
        out.write(c.line() + "\n")
    out.write("all checks passed\n" if ok else "GRADIENT CHECK FAILED\n")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_oracle_check(args, out):
    from .verify import oracle_suite

    if not 1 <= args.max_size <= 16:
        raise ConfigError("--max-size must be between 1 and 16")
    checks = oracle_suite(args.max_size, args.seed)
    for c in checks:
        out.write(c.line() + "\n")
    ok = all(c.passed for c in checks)
    out.write("all checks passed\n" if ok else "ORACLE CHECK FAILED\n")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_region(args, out):
    try:
        n = analysis.attention_region(args.mechanism, args.height, args.sw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out.write(f"{n}\n")
    return EXIT_OK


def build_parser():
    p = _Parser(prog="cswin", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("trace", help="print per-layer shapes")
    _add_model_args(s)
    s.set_defaults(fn=cmd_trace)

    s = sub.add_parser("flops", help="parameter and MAC report")
    _add_model_args(s)
    s.add_argument("--json", action="store_true", help="machine-readable output")
    s.set_defaults(fn=cmd_flops)

    s = sub.add_parser("forward", help="run a checkpoint on a CSWT image")
    s.add_argument("--config", required=True)
    s.add_argument("--params", required=True, help="checkpoint directory")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(fn=cmd_forward)

    s = sub.add_parser("init", help="write seeded parameters to a checkpoint directory")
    _add_model_args(s, default_resolution=False)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", required=True)
    s.add_argument("--dtype", choices=("float32", "float64"), default="float64")
    s.set_defaults(fn=cmd_init)

    s = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    s.add_argument("--scale", choices=("desk", "small"), default="desk")
    s.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("oracle-check", help="equivalence, locality and round-trip sweeps")
    s.add_argument("--max-size", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_oracle_check)

    s = sub.add_parser("region", help="attention region per head")
    s.add_argument("--mechanism", required=True, help="cswin, axial or criss-cross")
    s.add_argument("--height", type=int, required=True)
    s.add_argument("--sw", type=int, default=1)
    s.set_defaults(fn=cmd_region)
    return p


def main(argv=None, out=None, err=None):
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args, out)
    except ConfigError as exc:
        err.write(f"config error: {exc}\n")
        return EXIT_USAGE
    except FormatError as exc:
        err.write(f"format error: {exc}\n")
        return EXIT_FORMAT
    except GeometryError as exc:
        err.write(f"geometry error: {exc}\n")
        return EXIT_GEOMETRY
    except OSError as exc:
        err.write(f"i/o error: {exc}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
