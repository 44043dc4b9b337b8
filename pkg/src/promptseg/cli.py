"""Command-line entry point.

Subcommands: synth (dataset generation), train, eval (metrics report +
PR CSV + figures), enhance (visual prompt + gate dump), gradcheck
(finite-difference table), selftest (acceptance suite).

Exit codes: 0 success, 1 runtime failure, 2 usage/validation error.
DIFFPROMPT_THREADS caps eval worker threads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .errors import PromptSegError
from .model import ARCHS


def _worker_count() -> int:
    env = os.environ.get("DIFFPROMPT_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def _pow2(n: int) -> bool:
    return n >= 16 and (n & (n - 1)) == 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="promptseg",
                                 description="Prompted adaptor segmentation toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="run two-phase training")
    p.add_argument("--config", help="JSON config (strict schema)")
    p.add_argument("--arch", choices=ARCHS)
    p.add_argument("--data", help="dataset root (overrides config)")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="resume .npz from a previous run")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="split dir with adverse/ and mask/")
    p.add_argument("--report", required=True, help="output JSON path")

    p = sub.add_parser("enhance", help="run the prompt generator on one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-gates", required=True)
    p.add_argument("--stage", type=int, default=1)

    p = sub.add_parser("gradcheck", help="finite-difference verification table")
    p.add_argument("--tol", type=float, default=1e-4)

    p = sub.add_parser("selftest", help="run the acceptance suite")
    p.add_argument("--quick", action="store_true", help="skip training-based criteria")
    p.add_argument("--workdir", help="artifact directory (default: temp)")
    return ap


def cmd_synth(args, parser) -> int:
    if not _pow2(args.size):
        parser.error(f"--size must be a power of two >= 16, got {args.size}")
    from .data import make_split
    info = make_split(args.out, n_train=args.n_train, n_test=args.n_test,
                      seed=args.seed, size=args.size)
    for split, meta in info["splits"].items():
        print(f"{split}: {meta['count']} samples, tags {meta['tags']}")
    return 0


def cmd_train(args, parser) -> int:
    from .report import render_loss_figure
    from .training import TrainConfig, load_config, train
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.arch:
        cfg.arch = args.arch
    if args.data:
        cfg.dataset_root = args.data
    if args.seed is not None:
        cfg.seed = args.seed
    if args.epochs is not None:
        cfg.epochs = args.epochs
    if not cfg.dataset_root:
        parser.error("no dataset root (set --data or dataset_root in the config)")
    log = train(cfg, args.out, resume=args.resume)
    render_loss_figure(Path(args.out) / "runlog.jsonl", Path(args.out) / "loss_curve.png")
    b = log.phase_losses("B")
    print(f"phase A steps: {len(log.phase_losses('A'))}, phase B steps: {len(b)}")
    print(f"final B loss (mean of last 5): {np.mean(b[-5:]):.5f}")
    print(f"final checkpoint: {log.checkpoints[-1]}")
    return 0


def _predict_split(model, split_dir):
    from .data import load_split
    _, adverse, masks = load_split(split_dir)
    preds = []
    for s in range(0, len(adverse), 8):
        preds.extend(list(model.predict(adverse[s:s + 8])))
    return preds, list(masks)


def cmd_eval(args, parser) -> int:
    from .checkpoint import load_model
    from .metrics import MetricsReport, e_measure_mean, mae, pr_curve, s_measure, weighted_f
    from .report import save_report
    if not Path(args.checkpoint).exists():
        print(f"checkpoint not found: {args.checkpoint}", file=sys.stderr)
        return 1
    model = load_model(args.checkpoint)
    preds, masks = _predict_split(model, args.data)

    def one(pair):
        p, g = pair
        return s_measure(p, g), e_measure_mean(p, g), weighted_f(p, g), mae(p, g)

    with ThreadPoolExecutor(max_workers=_worker_count()) as ex:
        rows = list(ex.map(one, zip(preds, masks)))
    arr = np.array(rows)
    report = MetricsReport(s_alpha=float(arr[:, 0].mean()), e_phi=float(arr[:, 1].mean()),
                           f_beta_w=float(arr[:, 2].mean()), mae=float(arr[:, 3].mean()),
                           pr_curve=pr_curve(preds, masks), n_images=len(preds))
    paths = save_report(report, args.report)
    print(f"S={report.s_alpha:.4f} E={report.e_phi:.4f} Fw={report.f_beta_w:.4f} "
          f"MAE={report.mae:.4f} over {report.n_images} images")
    print(f"wrote {paths['json']}, {paths['csv']}, {paths['figure']}")
    return 0


def cmd_enhance(args, parser) -> int:
    from .autodiff import Tensor
    from .checkpoint import load_model
    from .imageio import read_image, write_image
    if not Path(args.checkpoint).exists():
        print(f"checkpoint not found: {args.checkpoint}", file=sys.stderr)
        return 1
    model = load_model(args.checkpoint)
    prompted = [a for a in model.adaptors if a.diffvp is not None]
    if not prompted:
        print(f"checkpoint arch {model.spec.arch!r} has no prompt blocks", file=sys.stderr)
        return 1
    if not 1 <= args.stage <= len(prompted):
        parser.error(f"--stage must be in [1, {len(prompted)}] for this checkpoint")
    img = read_image(args.image)
    if img.shape[0] == 1:
        img = np.repeat(img, 3, axis=0)
    current = Tensor(img)
    dump = None
    for s in range(args.stage):
        gen = prompted[s].diffvp
        out = gen(current, hfc_mode="hard")
        if s == args.stage - 1:
            dump = gen.enhancer.gate_dump(out.embedding)
        current = out.image
    enhanced = current.data[0] if current.data.ndim == 4 else current.data
    write_image(args.out, enhanced)
    Path(args.dump_gates).write_text(json.dumps(dump, indent=1))
    print(f"stage {args.stage}: tau={dump['tau']:.4f}; wrote {args.out} and {args.dump_gates}")
    return 0


def cmd_gradcheck(args, parser) -> int:
    from .gradcheck import format_table, run_registry
    rows = run_registry(tol=args.tol)
    print(format_table(rows))
    fails = [r for r in rows if r.status == "FAIL"]
    print(f"{len(rows) - len(fails)}/{len(rows)} components pass at tol {args.tol:g}")
    return 0 if not fails else 1


def cmd_selftest(args, parser) -> int:
    from .acceptance import AcceptanceSuite
    workdir = args.workdir or tempfile.mkdtemp(prefix="promptseg_selftest_")
    print(f"selftest workdir: {workdir}")
    suite = AcceptanceSuite(workdir)
    results = suite.run(quick=args.quick)
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} criteria pass")
    return 0 if n_pass == len(results) else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "synth": cmd_synth,
        "train": cmd_train,
        "eval": cmd_eval,
        "enhance": cmd_enhance,
        "gradcheck": cmd_gradcheck,
        "selftest": cmd_selftest,
    }
    try:
        return handlers[args.command](args, parser)
    except (PromptSegError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
