"""Command line interface.

Subcommands: train, generate, reconstruct, nn-baseline, evaluate, synth,
gradcheck, export-plot.  Exit codes: 0 success, 2 invalid input, 3 numerical
failure.  ``VGPDS_THREADS`` caps internal linear-algebra parallelism.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import baselines, bound_core, datasets, metrics, model_io, optimizer, predictor
from .estimator import resolve_temporal_spec
from .kernels import ArdKernelParams
from .validation import NumericalError, ValidationError


def _parse_col_spec(spec, n, names=()):
    """Column spec: comma list of names, indices, or ranges like ``0-4``."""
    name_to_idx = {name: i for i, name in enumerate(names)}
    out = []
    for token in str(spec).split(","):
        token = token.strip()
        if not token:
            continue
        if token in name_to_idx:
            out.append(name_to_idx[token])
        elif "-" in token and not token.lstrip("-").isdigit():
            raise ValidationError(f"cannot parse column token {token!r}")
        elif "-" in token and token.count("-") == 1 and not token.startswith("-"):
            lo, hi = token.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(token))
    if not out:
        raise ValidationError(f"empty column spec {spec!r}")
    bad = [i for i in out if not 0 <= i < n]
    if bad:
        raise ValidationError(f"column indices {bad} outside [0, {n})")
    return sorted(set(out))


def _write_trace(path, trace):
    with open(path, "w") as fh:
        fh.write("iteration,bound,kl,grad_norm\n")
        for p in trace:
            fh.write(f"{p.iteration},{p.value!r},{p.kl!r},{p.grad_norm!r}\n")


def _add_train(sub):
    p = sub.add_parser("train", help="fit a model to a dataset")
    p.add_argument("--data", required=True, help="training dataset CSV")
    p.add_argument("--latent-dim", type=int, default=8)
    p.add_argument("--kernel", default="rbf+white+bias",
                   help="temporal kernel: shorthand like rbf+white, inline JSON, or @file.json")
    p.add_argument("--inducing", type=int, default=None)
    p.add_argument("--warmup-iters", type=int, default=50)
    p.add_argument("--iters", default="200", help="count or comma list of segment counts")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--freeze", default="", help="comma list of parameter groups to freeze")
    p.add_argument("--lambda-init", type=float, default=0.5)
    p.add_argument("--beta-init", type=float, default=None)
    p.add_argument("--optimize-period", action="store_true")
    p.add_argument("--restarts", type=int, default=1,
                   help="independent initializations; the best bound wins")
    p.add_argument("--no-embed-data", action="store_true")
    p.add_argument("--out", required=True, help="model checkpoint path (JSON)")
    p.add_argument("--trace", default=None, help="optional objective trace CSV")
    return p


def _resolve_kernel_arg(arg):
    if arg.startswith("@"):
        with open(arg[1:]) as fh:
            return resolve_temporal_spec(json.load(fh))
    return resolve_temporal_spec(arg)


def _cmd_train(args):
    dataset = datasets.load_dataset(args.data)
    spec = _resolve_kernel_arg(args.kernel)
    iters = tuple(int(x) for x in str(args.iters).split(",") if x.strip())
    iters = iters[0] if len(iters) == 1 else iters
    freeze = tuple(x.strip() for x in args.freeze.split(",") if x.strip())
    config = optimizer.TrainConfig(
        warmup_iters=args.warmup_iters,
        iters=iters,
        tol=args.tol,
        freeze=freeze,
        optimize_period=args.optimize_period,
    )
    best = None
    for restart in range(max(1, args.restarts)):
        model = bound_core.init_model(
            dataset.y,
            dataset.t,
            args.latent_dim,
            spec,
            layout=dataset.layout,
            n_inducing=args.inducing,
            lambda_init=args.lambda_init,
            beta=args.beta_init,
            seed=args.seed + restart,
            column_names=dataset.column_names,
        )
        result = optimizer.train(model, config)
        if best is None or result.trace[-1].value > best.trace[-1].value:
            best = result
    model_io.save_model(best.model, args.out, embed_data=not args.no_embed_data)
    if args.trace:
        _write_trace(args.trace, best.trace)
    final = best.trace[-1]
    print(
        f"trained: status={best.status} bound={final.value:.6f} kl={final.kl:.6f} "
        f"iterations={final.iteration} clamps={best.clamp_events}"
    )
    print(f"relevance weights: {np.array2string(best.model.mapping.weights, precision=5)}")
    return 0


def _add_generate(sub):
    p = sub.add_parser("generate", help="predict outputs at new time stamps")
    p.add_argument("--model", required=True)
    p.add_argument("--times", required=True, help="CSV with the test time stamps")
    p.add_argument("--data", default=None, help="training dataset CSV if not embedded")
    p.add_argument("--continue-seq", type=int, default=None,
                   help="treat test times as continuing this training sequence")
    p.add_argument("--out", required=True,
                   help="mean CSV path, optionally 'mean.csv,var.csv'")
    return p


def _cmd_generate(args):
    y = datasets.load_dataset(args.data).y if args.data else None
    model, doc = model_io.load_model(args.model, y=y)
    t_star = datasets.load_times(args.times)
    out_paths = [p.strip() for p in args.out.split(",") if p.strip()]
    if model.y is not None:
        moments = predictor.forecast_outputs(model, t_star, continue_from=args.continue_seq)
        mean, var = moments.mean, moments.output_variance()
    elif doc.get("predict_cache"):
        latent = predictor.forecast_latent(model, t_star, continue_from=args.continue_seq)
        from .psi_stats import MomentSet, psi_star

        star = psi_star(model.mapping, MomentSet(latent.mean, latent.variance), model.state.inducing)
        weights = np.asarray(doc["predict_cache"]["weights"], dtype=float)
        mean, var = star.psi1_star.T @ weights, None
        if len(out_paths) > 1:
            raise ValidationError(
                "variances need the training outputs; pass --data or re-save with embedded data"
            )
    else:
        raise ValidationError(
            "checkpoint has neither embedded data nor a prediction cache; pass --data"
        )
    names = model.column_names or None
    datasets.save_matrix(out_paths[0], mean, column_names=names, t=t_star)
    if len(out_paths) > 1:
        datasets.save_matrix(out_paths[1], var, column_names=names, t=t_star)
    print(f"wrote predictions for {t_star.size} time stamps to {out_paths[0]}")
    return 0


def _add_reconstruct(sub):
    p = sub.add_parser("reconstruct", help="fill in missing dimensions of a test sequence")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True, help="CSV with t plus the observed columns")
    p.add_argument("--observed-cols", required=True,
                   help="observed output dimensions, e.g. '0-3,7' or names")
    p.add_argument("--data", default=None, help="training dataset CSV if not embedded")
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--continue-seq", type=int, default=None)
    p.add_argument("--out", required=True)
    return p


def _cmd_reconstruct(args):
    y = datasets.load_dataset(args.data).y if args.data else None
    model, _ = model_io.load_model(args.model, y=y)
    if model.y is None:
        raise ValidationError("reconstruction needs training outputs; pass --data")
    test = datasets.load_dataset(args.test)
    observed = _parse_col_spec(args.observed_cols, model.y.shape[1], model.column_names)
    if test.n_dims != len(observed):
        raise ValidationError(
            f"test file has {test.n_dims} feature columns but --observed-cols names "
            f"{len(observed)}"
        )
    result = predictor.reconstruct_missing(
        model, test.t, test.y, observed,
        iters=args.iters, continue_from=args.continue_seq,
    )
    names = None
    if model.column_names:
        names = [model.column_names[i] for i in result.missing_columns]
    datasets.save_matrix(args.out, result.moments.mean, column_names=names, t=test.t)
    print(
        f"reconstructed {len(result.missing_columns)} missing dimensions "
        f"({result.status}) -> {args.out}"
    )
    return 0


def _add_nn(sub):
    p = sub.add_parser("nn-baseline", help="nearest-neighbour reconstruction baseline")
    p.add_argument("--data", required=True, help="training dataset CSV")
    p.add_argument("--test", required=True, help="CSV with the observed columns")
    p.add_argument("--observed-cols", required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--out", required=True)
    return p


def _cmd_nn(args):
    train = datasets.load_dataset(args.data)
    test = datasets.load_dataset(args.test)
    observed = _parse_col_spec(args.observed_cols, train.n_dims, train.column_names)
    recon = baselines.nn_baseline(train.y, test.y, observed, k=args.k)
    missing = np.setdiff1d(np.arange(train.n_dims), observed)
    names = [train.column_names[i] for i in missing]
    datasets.save_matrix(args.out, recon, column_names=names, t=test.t)
    print(f"nearest-neighbour (k={args.k}) reconstruction -> {args.out}")
    return 0


def _add_evaluate(sub):
    p = sub.add_parser("evaluate", help="error metrics over missing entries")
    p.add_argument("--recon", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--cols", default=None,
                   help="columns of the truth file to compare against (default: all)")
    p.add_argument("--angle-cols", default=None,
                   help="angle-unit columns within the compared set")
    p.add_argument("--weights", default=None, help="comma list of per-column weights")
    p.add_argument("--out", default=None, help="write the report as JSON")
    return p


def _cmd_evaluate(args):
    recon = datasets.load_dataset(args.recon)
    truth = datasets.load_dataset(args.truth)
    truth_y = truth.y
    if args.cols is not None:
        cols = _parse_col_spec(args.cols, truth.n_dims, truth.column_names)
        truth_y = truth_y[:, cols]
    angle_cols = None
    if args.angle_cols is not None:
        angle_cols = _parse_col_spec(args.angle_cols, recon.n_dims, recon.column_names)
    weights = None
    if args.weights is not None:
        weights = np.asarray([float(x) for x in args.weights.split(",")])
    report = metrics.evaluate(recon.y, truth_y, angle_cols=angle_cols, weights=weights)
    payload = json.dumps(report.to_json(), indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(payload + "\n")
    print(payload)
    return 0


def _add_synth(sub):
    p = sub.add_parser("synth", help="sample a synthetic dataset from the generative model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dims", type=int, required=True)
    p.add_argument("--latent-dim", type=int, required=True)
    p.add_argument("--kernel", default=None, help="temporal kernel (default: smooth rbf)")
    p.add_argument("--beta", type=float, default=100.0, help="noise precision (inf allowed)")
    p.add_argument("--sequences", default=None, help="comma list of sequence lengths")
    p.add_argument("--out", required=True)
    p.add_argument("--latents", default=None, help="optional CSV for the true latents")
    return p


def _cmd_synth(args):
    spec = _resolve_kernel_arg(args.kernel) if args.kernel else None
    seq_lengths = None
    if args.sequences:
        seq_lengths = [int(x) for x in args.sequences.split(",")]
    dataset, latents = datasets.synth_generate(
        args.seed,
        args.n,
        args.dims,
        args.latent_dim,
        temporal_spec=spec,
        beta=args.beta,
        sequence_lengths=seq_lengths,
    )
    datasets.save_dataset(dataset, args.out)
    if args.latents:
        datasets.save_matrix(
            args.latents, latents,
            column_names=[f"x{q + 1}" for q in range(latents.shape[1])], t=dataset.t,
        )
    print(f"sampled {dataset.n} rows x {dataset.n_dims} dims -> {args.out}")
    return 0


def _add_gradcheck(sub):
    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--data", default=None, help="dataset CSV (default: small synthetic)")
    p.add_argument("--latent-dim", type=int, default=2)
    p.add_argument("--kernel", default="rbf+white")
    p.add_argument("--inducing", type=int, default=4)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=1e-5)
    return p


def _cmd_gradcheck(args):
    if args.data:
        dataset = datasets.load_dataset(args.data)
    else:
        dataset, _ = datasets.synth_generate(args.seed, 10, 3, 2, beta=50.0)
    spec = _resolve_kernel_arg(args.kernel)
    model = bound_core.init_model(
        dataset.y, dataset.t, args.latent_dim, spec,
        layout=dataset.layout, n_inducing=args.inducing, seed=args.seed,
    )
    report = optimizer.gradcheck(model, epsilon=args.epsilon, seed=args.seed)
    print(report)
    if report.worst >= args.threshold:
        print(f"FAIL: worst relative error {report.worst:.3e} >= {args.threshold:g}")
        return 3
    print(f"OK: all groups below {args.threshold:g}")
    return 0


def _add_export_plot(sub):
    p = sub.add_parser("export-plot", help="emit tidy CSV series for external plotting")
    p.add_argument("--what", required=True, choices=("traces", "scales", "errors"))
    p.add_argument("--trace", default=None, help="trace CSV from train (for traces)")
    p.add_argument("--model", default=None, help="model checkpoint (for scales)")
    p.add_argument("--recon", default=None, help="reconstruction CSV (for errors)")
    p.add_argument("--truth", default=None, help="ground truth CSV (for errors)")
    p.add_argument("--out", required=True)
    return p


def _cmd_export_plot(args):
    rows = []
    if args.what == "traces":
        if not args.trace:
            raise ValidationError("--what traces needs --trace")
        with open(args.trace) as fh:
            header = fh.readline().strip().split(",")
            for line in fh:
                vals = line.strip().split(",")
                it = vals[0]
                for name, v in zip(header[1:], vals[1:]):
                    rows.append((name, it, v))
    elif args.what == "scales":
        if not args.model:
            raise ValidationError("--what scales needs --model")
        model, _ = model_io.load_model(args.model)
        for q, w in enumerate(model.mapping.weights):
            rows.append(("relevance_weight", str(q), repr(float(w))))
    else:
        if not (args.recon and args.truth):
            raise ValidationError("--what errors needs --recon and --truth")
        recon = datasets.load_dataset(args.recon)
        truth = datasets.load_dataset(args.truth)
        if recon.y.shape != truth.y.shape:
            raise ValidationError("recon and truth must have matching shapes")
        per_frame = np.mean((recon.y - truth.y) ** 2, axis=1)
        for i, e in enumerate(per_frame):
            rows.append(("per_frame_mse", repr(float(recon.t[i])), repr(float(e))))
    with open(args.out, "w", newline="") as fh:
        fh.write("series,x,y\n")
        for series, x, yv in rows:
            fh.write(f"{series},{x},{yv}\n")
    print(f"wrote {len(rows)} tidy rows -> {args.out}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "generate": _cmd_generate,
    "reconstruct": _cmd_reconstruct,
    "nn-baseline": _cmd_nn,
    "evaluate": _cmd_evaluate,
    "synth": _cmd_synth,
    "gradcheck": _cmd_gradcheck,
    "export-plot": _cmd_export_plot,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vgpds",
        description="Variational Gaussian process dynamical systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_add_train, _add_generate, _add_reconstruct, _add_nn,
                _add_evaluate, _add_synth, _add_gradcheck, _add_export_plot):
        add(sub)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
