"""Command-line entry point: ``mlpfusion <subcommand> ...``.

Every failure exits nonzero and prints a single JSON line
``{"error": <code>, "message": ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import io as tio
from .bench import BenchConfig, load_report, run_bench
from .compress import METHODS, STRATEGIES, FusedMlp, compress, equal_budget_prune_ratio
from .errors import InvalidArgument, MlpFusionError
from .fixtures import FixtureSpec, fixture_hash, make_fixture
from .linalg import make_rng
from .mlp import ACTIVATIONS, MlpWeights, flops_estimate
from .ntk import output_error
from .tuning import LossTrajectory, TuneConfig, label_by_teacher, layerwise_tune, train_toy

U64 = 2**64


def _seed(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed {text!r} is not an integer")
    if not 0 <= v < U64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _seed_list(text):
    """``"0-9"`` or ``"1,5,7"`` (ranges inclusive)."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(_seed(lo), _seed(hi) + 1))
        elif part:
            out.append(_seed(part))
    if not out:
        raise argparse.ArgumentTypeError("empty seed list")
    return out


def _bandwidth(text):
    return text if text == "auto" else float(text)


def _emit(obj):
    print(json.dumps(obj, sort_keys=True))


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_fixture(args):
    spec = FixtureSpec(p=args.p, p_I=args.p_I, k_true=args.k_true, noise=args.noise,
                       n=args.n, m=args.m, seed=args.seed, activation=args.activation)
    fx = make_fixture(spec)
    out = Path(args.out)
    tio.save_model(fx.teacher, out / "teacher", head=fx.head)
    tio.save_inputs(fx.inputs, out / "inputs")
    meta = {"spec": spec.to_dict(), "fixture_hash": fx.hash(), "planted_labels": fx.labels.tolist()}
    (out / "fixture.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    _emit({"out": str(out), "fixture_hash": meta["fixture_hash"]})


def _load_teacher(path):
    model, head, manifest = tio.load_model(path)
    if not isinstance(model, MlpWeights):
        raise InvalidArgument(f"{path} holds a {manifest.get('variant')!r} model, expected a dense teacher")
    return model, head


def cmd_compress(args):
    teacher, head = _load_teacher(args.manifest)
    comp = compress(teacher, args.method, k=args.k, t=args.t, ratio=args.ratio, seed=args.seed,
                    strategy=args.strategy, steps=args.steps, lr=args.lr, bandwidth=args.bandwidth)
    meta = {"method": args.method, "seed": args.seed}
    if args.method == "svd":
        meta["t"] = comp.rank
    elif args.method == "prune":
        meta["ratio"] = equal_budget_prune_ratio(teacher, args.k) if args.ratio is None else args.ratio
    else:
        meta["k"] = comp.width
    if args.method == "fuse":
        meta["strategy"] = args.strategy
    if getattr(comp, "out_scale", 1.0) != 1.0:
        meta["out_scale"] = comp.out_scale
    path = tio.save_model(comp, args.out, head=head, compression=meta)
    _emit({"manifest": str(path), "variant": comp.variant, "params": int(comp.param_count())})


def cmd_bench(args):
    teacher, head = _load_teacher(args.manifest)
    if head is None:
        raise InvalidArgument("the teacher manifest has no readout head")
    inputs = tio.load_inputs(args.inputs)
    t = min(args.k, teacher.p) if args.t is None else args.t
    cfg = BenchConfig(methods=args.methods, seeds=args.seeds, k=args.k, t=t, ratio=args.ratio,
                      strategy=args.strategy, mmd_steps=args.steps, mmd_lr=args.lr,
                      bandwidth=args.bandwidth, timing=args.timing, dynamics=args.dynamics)
    report = run_bench(teacher, head, inputs, cfg)
    if args.out:
        report.write(args.out, args.format)
        if args.format == "csv" or (args.format is None and not str(args.out).endswith(".json")):
            report.write(Path(args.out).with_suffix(".json"), "json")
    else:
        sys.stdout.write(report.to_json() if args.format == "json" else report.to_csv())
    if args.verify and args.out:
        ok = load_report(Path(args.out).with_suffix(".json")).header["fixture_hash"] == fixture_hash(teacher, head, inputs)
        if not ok:
            raise InvalidArgument("report fixture hash does not match the inputs")


def _split(inputs, holdout, seed):
    order = make_rng(seed).permutation(len(inputs))
    n_hold = int(round(holdout * len(inputs)))
    if n_hold >= len(inputs):
        raise InvalidArgument("held-out fraction leaves no training inputs")
    return [inputs[i] for i in order[n_hold:]], [inputs[i] for i in order[:n_hold]]


def cmd_tune(args):
    teacher, _ = _load_teacher(args.teacher)
    student, head, manifest = tio.load_model(args.student)
    if not isinstance(student, FusedMlp):
        raise InvalidArgument(f"layer-wise tuning needs a fused student, got {student.variant!r}")
    inputs = tio.load_inputs(args.inputs)
    train, held = _split(inputs, args.holdout, args.seed)
    cfg = TuneConfig(steps=args.steps, lr=args.lr, optimizer=args.optimizer)
    tuned, traj = layerwise_tune(teacher, student, train, cfg)
    out = Path(args.out)
    compression = dict(manifest.get("compression", {}), tuned={"steps": args.steps, "lr": args.lr,
                                                               "optimizer": args.optimizer})
    tio.save_model(tuned, out, head=head, compression=compression)
    traj.to_csv(out / "trajectory.csv")
    summary = {"initial_loss": traj.initial, "final_loss": traj.final, "train_inputs": len(train),
               "heldout_inputs": len(held)}
    if held:
        summary["heldout_error_before"] = output_error(teacher, student, held)
        summary["heldout_error_after"] = output_error(teacher, tuned, held)
    _emit(summary)


def cmd_train(args):
    model, head, _ = tio.load_model(args.manifest)
    if head is None:
        raise InvalidArgument("the manifest has no readout head")
    inputs = tio.load_inputs(args.inputs)
    labeller = model
    if args.teacher:
        labeller, _ = _load_teacher(args.teacher)
    data = label_by_teacher(labeller, head, inputs)
    cfg = TuneConfig(steps=args.steps, lr=args.lr, optimizer=args.optimizer, batch_size=args.batch_size)
    traj = train_toy(model, head, data, cfg, seed=args.seed)
    if args.out:
        traj.to_csv(args.out)
    _emit({"initial_loss": traj.initial, "final_loss": traj.final, "steps": len(traj) - 1})


def cmd_flops(args):
    attn, ffn = flops_estimate(args.n, args.p, args.h)
    if attn == ffn:
        note = "ffn == attn (n = 2p)"
    elif ffn > attn:
        note = "ffn > attn (n < 2p): the FFN dominates"
    else:
        note = "attn > ffn (n > 2p)"
    if args.format == "json":
        _emit({"n": args.n, "p": args.p, "h": args.h, "attn": attn, "ffn": ffn, "ratio": ffn / attn, "note": note})
        return
    print(f"n={args.n} p={args.p} h={args.h}")
    print(f"attn  {attn:>20,}".replace(",", " "))
    print(f"ffn   {ffn:>20,}".replace(",", " "))
    print(f"ratio {ffn / attn:>20.6f}")
    print(note)


def cmd_plot(args):
    from . import plotting

    written = []
    if args.report:
        written.append(str(plotting.error_bars(load_report(args.report), args.out)))
    if args.trajectories:
        curves = {Path(p).stem: LossTrajectory.from_csv(p) for p in args.trajectories}
        target = args.out if not args.report else Path(args.out).with_name(Path(args.out).stem + "_loss.svg")
        written.append(str(plotting.loss_curves(curves, target)))
    if not written:
        raise InvalidArgument("give --report and/or --trajectories")
    _emit({"written": written})


# ---------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="mlpfusion", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def method_flags(p, steps_default=200, lr_default=1.0):
        p.add_argument("--k", type=int, default=16, help="target width for width-k methods")
        p.add_argument("--t", type=int, default=None, help="SVD rank (defaults to min(k, p))")
        p.add_argument("--ratio", type=float, default=None, help="prune ratio (default: equal budget with k)")
        p.add_argument("--strategy", choices=STRATEGIES, default="standalone_p")
        p.add_argument("--steps", type=int, default=steps_default)
        p.add_argument("--lr", type=float, default=lr_default)
        p.add_argument("--bandwidth", type=_bandwidth, default="auto")

    g = sub.add_parser("gen-fixture", help="write a teacher with planted sub-MLP clusters plus inputs")
    g.add_argument("--p", type=int, default=16)
    g.add_argument("--p-I", dest="p_I", type=int, default=64)
    g.add_argument("--k-true", dest="k_true", type=int, default=16)
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--n", type=int, default=8)
    g.add_argument("--m", type=int, default=32)
    g.add_argument("--activation", choices=ACTIVATIONS, default="gelu_exact")
    g.add_argument("--seed", type=_seed, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_fixture)

    c = sub.add_parser("compress", help="compress a teacher manifest")
    c.add_argument("manifest")
    c.add_argument("--method", choices=METHODS, required=True)
    method_flags(c)
    c.add_argument("--seed", type=_seed, default=0)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compress)

    b = sub.add_parser("bench", help="approximation-error benchmark over methods and seeds")
    b.add_argument("manifest")
    b.add_argument("inputs")
    b.add_argument("--methods", type=lambda s: [m.strip() for m in s.split(",") if m.strip()],
                   default=["fuse", "sketch", "ablation", "mmd", "prune", "svd"])
    b.add_argument("--seeds", type=_seed_list, default=list(range(10)))
    method_flags(b)
    b.add_argument("--timing", action="store_true", help="record wall-clock seconds (breaks byte-identical reruns)")
    b.add_argument("--dynamics", action="store_true", help="also compare fuse/sketch training trajectories")
    b.add_argument("--verify", action="store_true", help="reload the JSON report and check the fixture hash")
    b.add_argument("--format", choices=("csv", "json"), default=None)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("tune", help="layer-wise MSE tuning of a fused student")
    t.add_argument("teacher")
    t.add_argument("student")
    t.add_argument("inputs")
    t.add_argument("--steps", type=int, default=100)
    t.add_argument("--lr", type=float, default=1e-2)
    t.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    t.add_argument("--holdout", type=float, default=0.25, help="fraction of inputs kept for evaluation")
    t.add_argument("--seed", type=_seed, default=0, help="permutes inputs before the split")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_tune)

    r = sub.add_parser("train", help="toy binary fine-tuning run; writes the loss trajectory")
    r.add_argument("manifest")
    r.add_argument("inputs")
    r.add_argument("--teacher", default=None, help="label with this model instead of the trained one")
    r.add_argument("--steps", type=int, default=100)
    r.add_argument("--lr", type=float, default=1e-3)
    r.add_argument("--optimizer", choices=("sgd", "adam"), default="adam")
    r.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    r.add_argument("--seed", type=_seed, default=0)
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_train)

    f = sub.add_parser("flops", help="attention vs FFN multiply counts")
    f.add_argument("--n", type=int, required=True)
    f.add_argument("--p", type=int, required=True)
    f.add_argument("--h", type=int, default=12)
    f.add_argument("--format", choices=("text", "json"), default="text")
    f.set_defaults(func=cmd_flops)

    pl = sub.add_parser("plot", help="SVG charts from a report and/or trajectory CSVs")
    pl.add_argument("--report", default=None)
    pl.add_argument("--trajectories", nargs="*", default=None)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return ap


def _fail(code, message):
    print(json.dumps({"error": code, "message": message}), file=sys.stderr)
    return 1 if code != "usage" else 2


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        return _fail("usage", "invalid command line; see --help")
    try:
        args.func(args)
    except MlpFusionError as exc:
        msg = str(exc)
        if getattr(exc, "path", None):
            msg = f"{msg} ({exc.path})"
        return _fail(exc.code, msg)
    except (ValueError, OSError) as exc:
        return _fail("invalid-argument" if isinstance(exc, ValueError) else "io-error", str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
