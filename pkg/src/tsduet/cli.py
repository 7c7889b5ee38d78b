"""Command-line entry point.

Heavy imports happen inside `main` so that --threads can pin BLAS pools
before numpy loads. Every command writes its reports (CSV + rendered
figure) and a manifest into the output directory.

Exit codes: 2 bad configuration, 3 data problems, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

DEFAULT_STRENGTHS = "0,10,20,30,40,50"

_MODEL_KEYS = (
    "seq_len",
    "patch_len",
    "d_model",
    "registers",
    "pred_len",
    "backbone_layers",
    "decoder_layers",
    "dropout",
    "head_dropout",
    "gate_activation",
    "expansion",
)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tsduet",
        description="Dual-space time-series model: pre-training and diagnostics",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override file values")
    common.add_argument("--seed", type=int, default=None, help="root seed (default 0)")
    common.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread cap")
    common.add_argument("--out", default=None, help="output directory (default runs/<command>)")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        return sub.add_parser(name, help=help_text, parents=[common])

    sg = add("synth-gen", "generate a synthetic corpus CSV")
    sg.add_argument("--n", type=int, default=None, help="window count (pretrain kind)")
    sg.add_argument("--length", type=int, default=None)
    sg.add_argument("--future", type=int, default=None)
    sg.add_argument("--kind", choices=["pretrain", "search"], default=None)

    pt = add("pretrain", "self-supervised pre-training")
    pt.add_argument("--data", help="window corpus CSV; omit to synthesize")
    pt.add_argument("--n-windows", type=int, default=None)
    pt.add_argument("--preset", choices=["anomaly", "imputation", "classification", "search", "unified"], default=None)
    pt.add_argument("--epochs", type=int, default=None)
    pt.add_argument("--batch", type=int, default=None)
    pt.add_argument("--lr", type=float, default=None)
    pt.add_argument("--mask-ratio", type=float, default=None)
    pt.add_argument("--masking", choices=["hybrid", "block"], default=None)

    fc = add("finetune-classify", "fine-tune a classifier")
    fc.add_argument("--train", required=True)
    fc.add_argument("--test")
    fc.add_argument("--channels", type=int, required=True)
    fc.add_argument("--checkpoint", required=True)
    fc.add_argument("--d-prime", type=int, default=None)
    fc.add_argument("--expansion", type=int, default=None)
    fc.add_argument("--mask-ratio", default=None, help="float or 'none'")
    fc.add_argument("--activation", choices=["softmax", "sigmoid"], default=None)
    fc.add_argument("--head", choices=["projection", "avg-pool"], default=None)
    fc.add_argument("--epochs", type=int, default=None)
    fc.add_argument("--batch", type=int, default=None)
    fc.add_argument("--lr", type=float, default=None)

    im = add("impute", "fill missing values / run eval protocol")
    im.add_argument("--data", required=True)
    im.add_argument("--layout", choices=["wide", "long"], default=None)
    im.add_argument("--sentinel", default=None)
    im.add_argument("--checkpoint", required=True)
    im.add_argument("--mask-kind", choices=["block", "hybrid"], default=None,
                    help="evaluation mode: hide observed data at --ratio")
    im.add_argument("--ratio", type=float, default=None)

    de = add("detect", "anomaly scores for a series")
    de.add_argument("--data", required=True)
    de.add_argument("--layout", choices=["wide", "long"], default=None)
    de.add_argument("--sentinel", default=None)
    de.add_argument("--checkpoint", required=True)
    de.add_argument("--window", type=int, default=None, help="aggregation window (default 96)")
    de.add_argument("--tuning", help="labeled series CSV for head/window selection")

    em = add("embed", "embedding vectors / index for a corpus")
    em.add_argument("--data", required=True, help="window corpus CSV")
    em.add_argument("--checkpoint", required=True)
    em.add_argument("--view", choices=["time", "fft", "register"], default=None)
    em.add_argument("--index", help="also write a binary index here")

    sb = add("search-bench", "retrieval benchmark over strengths")
    sb.add_argument("--data", help="labeled window corpus CSV; omit to synthesize")
    sb.add_argument("--checkpoint", required=True)
    sb.add_argument("--task", choices=["family", "fine", "both"], default=None)
    sb.add_argument("--strength", default=None, help=f"comma list (default {DEFAULT_STRENGTHS})")
    sb.add_argument("--k", type=int, default=None)

    se = add("sensitivity", "embedding distortion sweeps")
    se.add_argument("--checkpoint", required=True)
    se.add_argument("--mask-levels", default=None, help="comma list of missing fractions")
    se.add_argument("--etas", default=None, help="comma list of noise levels")
    se.add_argument("--phases", default=None, help="comma list of phase differences")
    se.add_argument("--n-samples", type=int, default=None)
    return p


_COMMAND_DEFAULTS = {
    "synth-gen": {"n": 1680, "length": 512, "future": 8, "kind": "search"},
    "pretrain": {
        "data": None, "n_windows": 2000, "preset": "unified", "epochs": 20,
        "batch": 64, "lr": 1e-3, "mask_ratio": None, "masking": None,
    },
    "finetune-classify": {
        "train": None, "test": None, "channels": 1, "checkpoint": None,
        "d_prime": 1, "expansion": 1, "mask_ratio": "0.3", "activation": "softmax",
        "head": "projection", "epochs": 20, "batch": 16, "lr": 1e-3,
    },
    "impute": {"data": None, "layout": "wide", "sentinel": None, "checkpoint": None,
               "mask_kind": None, "ratio": None},
    "detect": {"data": None, "layout": "wide", "sentinel": None, "checkpoint": None,
               "window": None, "tuning": None},
    "embed": {"data": None, "checkpoint": None, "view": "register", "index": None},
    "search-bench": {"data": None, "checkpoint": None, "task": "both",
                     "strength": DEFAULT_STRENGTHS, "k": 3},
    "sensitivity": {"checkpoint": None, "mask_levels": "0.1,0.3,0.5",
                    "etas": "0.1,0.25,0.5", "phases": "1.0472,2.0944,3.1416",
                    "n_samples": 40},
}
_GLOBAL_DEFAULTS = {"seed": 0, "threads": None, "out": None}


def _resolve_config(args) -> dict:
    from .errors import ConfigError

    cmd = args.command
    cfg = dict(_GLOBAL_DEFAULTS)
    cfg.update(_COMMAND_DEFAULTS[cmd])
    cfg["model"] = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {args.config} is not valid JSON: {e}")
        for key, value in raw.items():
            if key == "model":
                for mk in value:
                    if mk not in _MODEL_KEYS:
                        raise ConfigError(f"unknown model config key: {mk!r}")
                cfg["model"].update(value)
            elif key in cfg:
                cfg[key] = value
            else:
                raise ConfigError(f"unknown config key: {key!r}")
    for key in list(cfg):
        if key == "model":
            continue
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    if cfg["seed"] is None:
        cfg["seed"] = 0
    if cfg["out"] is None:
        cfg["out"] = os.path.join("runs", cmd)
    return cfg


def _model_config(cfg):
    from .model import ModelConfig

    return ModelConfig(**cfg["model"])


def _write_manifest(out_dir, command, cfg, t0, artifacts):
    import numpy

    from . import __version__

    manifest = {
        "command": command,
        "config": {k: v for k, v in cfg.items()},
        "seed": cfg["seed"],
        "versions": {
            "tsduet": __version__,
            "numpy": numpy.__version__,
            "python": sys.version.split()[0],
        },
        "timings": {"wall_s": round(time.time() - t0, 3)},
        "artifacts": artifacts,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _floats(text):
    return [float(x) for x in str(text).split(",") if x.strip() != ""]


def _ints(text):
    return [int(x) for x in str(text).split(",") if x.strip() != ""]


# ------------------------------------------------------------------ commands


def _cmd_synth_gen(cfg, out):
    from . import report, synth
    from .data import write_window_corpus

    artifacts = []
    if cfg["kind"] == "search":
        samples, families, fines = synth.build_search_corpus(seed=cfg["seed"], length=cfg["length"])
        path = os.path.join(out, "corpus.csv")
        write_window_corpus(path, [s[:, 0] for s in samples], families, fines)
        preview = samples
    else:
        windows = synth.build_pretrain_corpus(
            cfg["n"], seed=cfg["seed"], length=cfg["length"], future=cfg["future"]
        )
        path = os.path.join(out, "corpus.csv")
        write_window_corpus(path, windows)
        preview = windows
    artifacts.append(path)
    fig = os.path.join(out, "corpus_preview.png")
    report.save_corpus_preview(preview, fig)
    artifacts.append(fig)
    return artifacts


def _cmd_pretrain(cfg, out):
    from . import report, synth, train
    from .data import read_window_corpus

    mcfg = _model_config(cfg)
    if cfg["data"]:
        windows, _, _ = read_window_corpus(cfg["data"])
    else:
        windows = synth.build_pretrain_corpus(
            cfg["n_windows"], seed=cfg["seed"], length=mcfg.seq_len, future=mcfg.pred_len
        )
    params, trace = train.pretrain(
        windows,
        mcfg,
        epochs=cfg["epochs"],
        batch_size=cfg["batch"],
        lr=cfg["lr"],
        seed=cfg["seed"],
        task=cfg["preset"],
        masking=cfg["masking"],
        mask_ratio=cfg["mask_ratio"],
    )
    ckpt = os.path.join(out, "checkpoint.bin")
    train.save_checkpoint(params, ckpt)
    trace_csv = os.path.join(out, "loss_trace.csv")
    report.write_csv(
        trace_csv,
        ["epoch", "l_time1", "l_time2", "l_fft", "l_sign", "l_pred", "total"],
        [[i + 1] + list(r.as_dict().values()) for i, r in enumerate(trace)],
    )
    artifacts = [ckpt, trace_csv]
    if trace:
        fig = os.path.join(out, "loss_curve.png")
        report.save_loss_curves(trace, fig)
        artifacts.append(fig)
    return artifacts


def _cmd_finetune_classify(cfg, out):
    import numpy as np

    from . import adapt, report
    from .data import read_labeled_samples
    from .model import load_checkpoint

    pre = load_checkpoint(cfg["checkpoint"])
    X_train, y_train = read_labeled_samples(cfg["train"], cfg["channels"])
    X_test = y_test = None
    if cfg["test"]:
        X_test, y_test = read_labeled_samples(cfg["test"], cfg["channels"])
    ratio = cfg["mask_ratio"]
    ratio = None if ratio in (None, "none", "None") else float(ratio)
    ft = adapt.FinetuneConfig(
        mask_ratio=ratio,
        channel_expansion=cfg["expansion"],
        d_prime=cfg["d_prime"],
        head_activation=cfg["activation"],
        head_style=cfg["head"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch"],
        lr=cfg["lr"],
        seed=cfg["seed"],
    )
    clf, rep = adapt.finetune_classifier(X_train, y_train, pre, ft, X_test, y_test)
    ck = os.path.join(out, "classifier.bin")
    adapt.save_classifier(clf, ck)
    rep_csv = os.path.join(out, "report.csv")
    train_acc = float(np.mean(clf.predict(X_train) == y_train))
    report.write_csv(
        rep_csv,
        ["metric", "value"],
        [
            ["train_accuracy", train_acc],
            ["test_accuracy", rep.test_accuracy if rep.test_accuracy is not None else ""],
            ["epochs_ran", rep.epochs_ran],
            ["best_epoch", rep.best_epoch],
            ["head_style", ft.head_style],
        ],
    )
    fig = os.path.join(out, "val_curve.png")
    report.save_training_curve(rep.val_trace, fig, "validation cross-entropy")
    return [ck, rep_csv, fig]


def _cmd_impute(cfg, out):
    from . import imputation, report
    from .data import DatasetHandle, read_series_csv, write_series_csv
    from .model import load_checkpoint
    from .preprocess import Series

    params = load_checkpoint(cfg["checkpoint"])
    handle = DatasetHandle(cfg["data"], layout=cfg["layout"], missing_sentinel=cfg["sentinel"])
    series = read_series_csv(handle)
    artifacts = []
    if cfg["mask_kind"] is None:
        completed = imputation.impute(series, params)
        path = os.path.join(out, "completed.csv")
        write_series_csv(path, Series(completed))
        artifacts.append(path)
        rows = []
    else:
        spec = imputation.EvalMaskSpec(cfg["mask_kind"], cfg["ratio"], seed=cfg["seed"])
        S, C = series.values.shape
        plan = imputation.generate_eval_mask(spec, S, C, params.cfg.patch_len)
        hidden = Series(series.values, ~plan.point_mask)
        rows = []
        completed = imputation.impute(hidden, params)
        rows.append({"dataset": os.path.basename(cfg["data"]), "kind": spec.kind,
                     "ratio": spec.ratio, "method": "model",
                     "mse": imputation.eval_mse_masked(series.values, completed, plan)})
        for method in imputation.BASELINE_METHODS:
            filled = imputation.baseline_interpolate(series.values, plan, method)
            rows.append({"dataset": os.path.basename(cfg["data"]), "kind": spec.kind,
                         "ratio": spec.ratio, "method": method,
                         "mse": imputation.eval_mse_masked(series.values, filled, plan)})
        rep_csv = os.path.join(out, "report.csv")
        report.write_csv(rep_csv, ["dataset", "kind", "ratio", "method", "mse"],
                         [[r["dataset"], r["kind"], r["ratio"], r["method"], r["mse"]] for r in rows])
        fig = os.path.join(out, "report.png")
        report.save_imputation_bars(rows, fig)
        artifacts += [rep_csv, fig]
    return artifacts


def _cmd_detect(cfg, out):
    from . import anomaly, report
    from .data import DatasetHandle, read_labeled_series, read_series_csv
    from .model import load_checkpoint

    params = load_checkpoint(cfg["checkpoint"])
    handle = DatasetHandle(cfg["data"], layout=cfg["layout"], missing_sentinel=cfg["sentinel"])
    series = read_series_csv(handle)
    selected = "ensemble"
    tuning = None
    if cfg["tuning"]:
        ts, labels = read_labeled_series(cfg["tuning"])
        tuning = [(ts.values, labels)]
    if cfg["window"] is not None:
        w = cfg["window"]
    elif tuning:
        usable = [c for c in anomaly.WINDOW_CANDIDATES if c < params.cfg.seq_len]
        w = anomaly.select_window(tuning, params, candidates=usable or [max(params.cfg.seq_len // 4, 1)])
    else:
        w = min(anomaly.DEFAULT_WINDOW, params.cfg.seq_len // 2)
    if tuning:
        selected = anomaly.triangulate(tuning, params, w).selected
    scores = anomaly.score_all(series.values, params, w)
    sel = scores[selected]
    csv_path = os.path.join(out, "scores.csv")
    report.write_csv(
        csv_path,
        ["t", "alpha_time", "alpha_fft", "alpha_pred", "alpha_ensemble", "alpha_selected"],
        [
            [t, scores["time"].alpha[t], scores["fft"].alpha[t], scores["pred"].alpha[t],
             scores["ensemble"].alpha[t], sel.alpha[t]]
            for t in range(series.values.shape[0])
        ],
    )
    fig = os.path.join(out, "scores.png")
    report.save_score_plot(series.values, scores, fig, selected=selected)
    meta = os.path.join(out, "selection.json")
    with open(meta, "w") as fh:
        json.dump({"selected_head": selected, "window": w}, fh, indent=2)
    return [csv_path, fig, meta]


def _cmd_embed(cfg, out):
    from . import report, search
    from .data import read_window_corpus
    from .model import load_checkpoint

    params = load_checkpoint(cfg["checkpoint"])
    windows, families, fines = read_window_corpus(cfg["data"])
    vecs = []
    for item in windows:
        ctx = item[0] if isinstance(item, tuple) else item
        vecs.append(search.embed_view(ctx.reshape(-1, 1), params, cfg["view"]))
    csv_path = os.path.join(out, "embeddings.csv")
    dim = vecs[0].size
    header = ["id", "family", "fine"] + [f"e{i}" for i in range(dim)]
    rows = []
    for i, v in enumerate(vecs):
        fam = families[i] if families else ""
        fine = fines[i] if fines else ""
        rows.append([i, fam, fine] + [repr(float(x)) for x in v])
    report.write_csv(csv_path, header, rows)
    artifacts = [csv_path]
    if cfg["index"]:
        records = [
            search.EmbeddingRecord(
                str(i), families[i] if families else "", fines[i] if fines else "", v
            )
            for i, v in enumerate(vecs)
        ]
        search.build_index(records).save(cfg["index"])
        artifacts.append(cfg["index"])
    return artifacts


def _cmd_search_bench(cfg, out):
    from . import report, search, synth
    from .data import read_window_corpus
    from .model import load_checkpoint

    params = load_checkpoint(cfg["checkpoint"])
    if cfg["data"]:
        windows, families, fines = read_window_corpus(cfg["data"])
        if families is None:
            from .errors import DataError

            raise DataError(f"{cfg['data']}: benchmark corpus needs family/fine labels")
        samples = [(w[0] if isinstance(w, tuple) else w).reshape(-1, 1) for w in windows]
    else:
        samples, families, fines = synth.build_search_corpus(seed=cfg["seed"], length=params.cfg.seq_len)
    embed = lambda x: search.embed_register(x, params)  # noqa: E731
    tasks = ["family", "fine"] if cfg["task"] == "both" else [cfg["task"]]
    rows = []
    for task in tasks:
        rows += search.run_benchmark(
            samples, families, fines, embed, task,
            s_grid=_ints(cfg["strength"]), k=cfg["k"], seed=cfg["seed"],
        )
    csv_path = os.path.join(out, "benchmark.csv")
    report.write_csv(
        csv_path,
        ["task", "s", "prec", "mrr", "ap", "ndcg", "self_top1"],
        [[r["task"], r["s"], r["prec"], r["mrr"], r["ap"], r["ndcg"], r["self_top1"]] for r in rows],
    )
    fig = os.path.join(out, "benchmark.png")
    report.save_benchmark_curves(rows, fig)
    return [csv_path, fig]


def _cmd_sensitivity(cfg, out):
    import numpy as np

    from . import report, synth
    from .model import load_checkpoint

    params = load_checkpoint(cfg["checkpoint"])
    S = params.cfg.seq_len
    n = cfg["n_samples"]
    rng = np.random.default_rng(cfg["seed"])
    rows = []
    base_samples = [
        synth.generate(synth.GeneratorSpec(
            "shape", shape="F2", freq=float(rng.integers(2, 9)),
            phase=float(rng.uniform(0, 2 * np.pi)), length=S, seed=cfg["seed"] * 131 + i,
        )).values
        for i in range(n)
    ]
    for view in ("time", "fft", "register"):
        embed = synth.model_embedder(params, view)
        for frac in _floats(cfg["mask_levels"]):
            res = synth.distortion_mask(embed, base_samples, frac, n_pairs=min(2000, n * (n - 1)),
                                        rng=np.random.default_rng(cfg["seed"] + 1))
            rows.append({"view": view, "perturbation": "mask", "level": frac, "delta": res.value})
        etas = _floats(cfg["etas"])
        groups = synth.noise_suite([0.0] + etas, length=S, seed=cfg["seed"])
        for eta in etas:
            res = synth.distortion_noise(embed, groups[0.0], groups[eta])
            rows.append({"view": view, "perturbation": "noise", "level": eta, "delta": res.value})
        for phi in _floats(cfg["phases"]):
            samples, phases = synth.phase_suite(freq=5.0, phases=[0.0, phi], length=S,
                                                seed=cfg["seed"])
            res = synth.distortion_phase(embed, samples, phases, phi, tol=1e-6)
            rows.append({"view": view, "perturbation": "phase", "level": phi, "delta": res.value})
    csv_path = os.path.join(out, "sensitivity.csv")
    report.write_csv(csv_path, ["view", "perturbation", "level", "delta"],
                     [[r["view"], r["perturbation"], r["level"], r["delta"]] for r in rows])
    fig = os.path.join(out, "sensitivity.png")
    report.save_sensitivity_curves(rows, fig)
    return [csv_path, fig]


_RUNNERS = {
    "synth-gen": _cmd_synth_gen,
    "pretrain": _cmd_pretrain,
    "finetune-classify": _cmd_finetune_classify,
    "impute": _cmd_impute,
    "detect": _cmd_detect,
    "embed": _cmd_embed,
    "search-bench": _cmd_search_bench,
    "sensitivity": _cmd_sensitivity,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    from .errors import CheckpointError, ConfigError, DataError, NumericsError

    t0 = time.time()
    try:
        cfg = _resolve_config(args)
        out = cfg["out"]
        os.makedirs(out, exist_ok=True)
        artifacts = _RUNNERS[args.command](cfg, out)
        manifest = _write_manifest(out, args.command, cfg, t0, artifacts)
        print(f"{args.command}: wrote {len(artifacts)} artifacts; manifest at {manifest}")
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericsError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
