"""Command-line entry point: ``spkinfo <subcommand> ...``.

Exit status: 0 success, 2 configuration error, 3 data error, 4 numerical
error. The worker count for parallel sweeps comes from ``SPKINFO_WORKERS``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import backend, baselines, data, entropy, experiment, quantizer, synth
from .errors import ConfigError, SpkInfoError
from .report import ReportTable, render


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text):
    return [x for x in text.split(",") if x]


def _fmt_arg(p, name="--format", dest="format"):
    p.add_argument(name, dest=dest, choices=["csv", "binary"], default=None,
                   help="file format (default: inferred from extension)")


def _print_json(obj):
    print(json.dumps(obj, sort_keys=True, indent=2))


def cmd_ingest(a):
    ds = data.load(a.input, a.format)
    data.save(ds, a.output, a.out_format)
    _print_json({"speakers": ds.n_speakers, "vectors": ds.n_vectors, "dim": ds.dim})


def cmd_split(a):
    ds = data.load(a.input, a.format)
    dev, meas = data.split_by_speaker(ds, a.dev_fraction, a.seed)
    data.save(dev, a.dev_out)
    data.save(meas, a.meas_out)
    _print_json({"dev_speakers": dev.n_speakers, "measurement_speakers": meas.n_speakers})


def cmd_quantize_train(a):
    ds = data.load(a.input, a.format)
    bank = quantizer.train_bank(ds, a.bits, a.representation, a.tol, a.max_iter)
    Path(a.output).write_text(bank.to_json() + "\n", encoding="utf-8")
    _print_json({"bits": bank.bits, "dim": bank.dim,
                 "mean_distortion": sum(q.distortion for q in bank.per_dim) / bank.dim})


def _load_bank(path, representation=None):
    bank = quantizer.QuantizerBank.from_json(Path(path).read_text(encoding="utf-8"))
    return bank.with_representation(representation) if representation else bank


def cmd_quantize_apply(a):
    ds = data.load(a.input, a.format)
    bank = _load_bank(a.bank, a.representation)
    data.save(bank.reconstruct_dataset(ds), a.output)


def cmd_measure(a):
    ds = data.load(a.input, a.format)
    if a.n_speakers or a.k_samples:
        ds = data.subsample(ds, a.n_speakers or ds.n_speakers,
                            a.k_samples or min(x.shape[0] for x in ds.speakers.values()), a.seed)
    out = {}
    bank = _load_bank(a.bank) if a.bank else None
    for m in a.measures:
        if m in ("mutual_info", "daugman") and bank is None:
            raise ConfigError(f"measure {m} needs --bank")
        if m == "mutual_info":
            out[m] = entropy.mutual_information(bank.quantize_dataset(ds)).to_dict()
        elif m == "daugman":
            if bank.bits != 1:
                raise ConfigError("daugman needs a 1-bit bank")
            est = baselines.hamming_dof(bank.quantize_dataset(ds), a.pairing)
            out[m] = {"p_hat": est.p_hat, "sigma2_hat": est.sigma2_hat, "dof": est.dof,
                      "pairs": est.n_pairs, "pairing": est.pairing}
        elif m == "adler":
            bits, eps = baselines.adler_information(ds, a.shrinkage, a.ridge)
            out[m] = {"value_bits": bits, "shrinkage": a.shrinkage, "ridge": eps}
        else:
            raise ConfigError(f"measure {m} is not available here; use 'eer' or 'run'")
    _print_json(out)


def cmd_backend_train(a):
    dev = data.load(a.input, a.format)
    bank = _load_bank(a.bank, a.representation) if a.bank else None
    model = backend.fit_backend(dev, a.lda_dim, a.plda_dim, a.iters, bank)
    model.save(a.output)
    _print_json({k: v for k, v in model.metadata.items() if k != "loglik"})


def cmd_eer(a):
    if a.scores:
        scores = backend.ScoreSet.from_csv(Path(a.scores).read_text(encoding="utf-8"))
    else:
        if not (a.model and a.input):
            raise ConfigError("eer needs --scores, or --model plus a measurement dataset")
        ds = data.load(a.input, a.format)
        model = backend.BackendModel.load(a.model)
        bank = _load_bank(a.bank, a.representation) if a.bank else None
        scores, _ = backend.build_trials(ds, model, bank, a.seed)
        if a.scores_out:
            Path(a.scores_out).write_text(scores.to_csv(), encoding="utf-8")
    out = {"eer": backend.compute_eer(scores), "genuine": int(scores.genuine.size),
           "impostor": int(scores.impostor.size)}
    if a.score_kl_bins:
        out["score_kl_bits"] = baselines.score_space_kl(scores.genuine, scores.impostor, a.score_kl_bins)
    _print_json(out)


def cmd_synth(a):
    if a.spec:
        spec = synth.PopulationSpec.from_dict(json.loads(Path(a.spec).read_text(encoding="utf-8")))
    else:
        spec = synth.PopulationSpec(a.m, a.between_std, a.within_std, a.n_speakers, a.k_samples, a.seed)
    data.save(synth.generate_population(spec), a.output, a.format)


def _apply_run_flags(doc, a):
    if a.input:
        doc["input"] = {"path": a.input, "format": a.format}
    for key in ("output_dir", "dev_fraction", "seed", "bits", "n_speakers", "k_samples", "measures",
                "representation"):
        v = getattr(a, key)
        if v is not None:
            doc[key] = v
    if a.verify is not None:
        doc.setdefault("verification", {})["enabled"] = a.verify
    return doc


def cmd_run(a):
    if a.config:
        cfg = experiment.ExperimentConfig.load(a.config)
    else:
        doc = _apply_run_flags({}, a)
        if "input" not in doc:
            doc["input"] = {"synthetic": json.loads(synth.PopulationSpec.standard().to_json())}
        cfg = experiment.ExperimentConfig.from_dict(doc)
    tables = experiment.run_experiment(cfg, workers=a.workers)
    for t in tables.values():
        sys.stdout.write(render(t, "markdown") + "\n")


def cmd_render(a):
    doc = json.loads(Path(a.input).read_text(encoding="utf-8"))
    if "tables" in doc:
        names = [a.table] if a.table else sorted(doc["tables"])
        missing = [n for n in names if n not in doc["tables"]]
        if missing:
            raise ConfigError(f"no table named {missing[0]!r}; have {sorted(doc['tables'])}")
        tables = [ReportTable.from_dict(doc["tables"][n]) for n in names]
    else:
        tables = [ReportTable.from_dict(doc)]
    sys.stdout.write("\n".join(render(t, a.format) for t in tables))


def build_parser():
    p = argparse.ArgumentParser(prog="spkinfo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="validate a dataset and convert between formats")
    s.add_argument("input")
    s.add_argument("output")
    _fmt_arg(s)
    _fmt_arg(s, "--out-format", "out_format")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("split", help="split speakers into development and measurement sets")
    s.add_argument("input")
    _fmt_arg(s)
    s.add_argument("--dev-fraction", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dev-out", required=True)
    s.add_argument("--meas-out", required=True)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("quantize-train", help="train per-dimension Lloyd-Max quantizers")
    s.add_argument("input")
    _fmt_arg(s)
    s.add_argument("--bits", type=int, required=True)
    s.add_argument("--representation", choices=quantizer.REPRESENTATIONS, default="quantum_value")
    s.add_argument("--tol", type=float, default=quantizer.DEFAULT_TOL)
    s.add_argument("--max-iter", type=int, default=quantizer.DEFAULT_MAX_ITER)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_quantize_train)

    s = sub.add_parser("quantize-apply", help="quantize a dataset and write the reconstructed values")
    s.add_argument("input")
    _fmt_arg(s)
    s.add_argument("--bank", required=True)
    s.add_argument("--representation", choices=quantizer.REPRESENTATIONS)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_quantize_apply)

    s = sub.add_parser("measure", help="compute information measures on one dataset")
    s.add_argument("input")
    _fmt_arg(s)
    s.add_argument("--bank")
    s.add_argument("--measures", type=_str_list, default=["mutual_info"])
    s.add_argument("--n-speakers", type=int)
    s.add_argument("--k-samples", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pairing", choices=baselines.PAIRINGS, default="between_speaker")
    s.add_argument("--shrinkage", type=float, default=0.5)
    s.add_argument("--ridge", type=float)
    s.set_defaults(func=cmd_measure)

    s = sub.add_parser("backend-train", help="fit whitening, LDA and PLDA on development data")
    s.add_argument("input")
    _fmt_arg(s)
    s.add_argument("--bank")
    s.add_argument("--representation", choices=quantizer.REPRESENTATIONS)
    s.add_argument("--lda-dim", type=int)
    s.add_argument("--plda-dim", type=int)
    s.add_argument("--iters", type=int, default=10)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_backend_train)

    s = sub.add_parser("eer", help="score trials and compute the equal error rate")
    s.add_argument("input", nargs="?")
    _fmt_arg(s)
    s.add_argument("--model")
    s.add_argument("--bank")
    s.add_argument("--representation", choices=quantizer.REPRESENTATIONS)
    s.add_argument("--scores", help="CSV of label,score instead of a model + dataset")
    s.add_argument("--scores-out")
    s.add_argument("--score-kl-bins", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_eer)

    s = sub.add_parser("synth", help="generate a synthetic Gaussian speaker population")
    s.add_argument("--spec", help="JSON population spec (overrides the flags below)")
    s.add_argument("--m", type=int, default=50)
    s.add_argument("--between-std", type=float, default=1.0)
    s.add_argument("--within-std", type=float, default=0.5)
    s.add_argument("--n-speakers", type=int, default=1000)
    s.add_argument("--k-samples", type=int, default=100)
    s.add_argument("--seed", type=int, default=42)
    _fmt_arg(s)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("run", help="run a full experiment")
    s.add_argument("--config", help="JSON experiment config (overrides all other flags)")
    s.add_argument("--input")
    _fmt_arg(s)
    s.add_argument("--output-dir")
    s.add_argument("--dev-fraction", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--bits", type=_int_list)
    s.add_argument("--n-speakers", type=_int_list)
    s.add_argument("--k-samples", type=_int_list)
    s.add_argument("--measures", type=_str_list)
    s.add_argument("--representation", choices=quantizer.REPRESENTATIONS)
    s.add_argument("--verify", action=argparse.BooleanOptionalAction, default=None,
                   help="also compute verification EER per quantization setting")
    s.add_argument("--workers", type=int, help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("render", help="render tables from results.json or a table JSON file")
    s.add_argument("input")
    s.add_argument("--table")
    s.add_argument("--format", choices=["csv", "markdown", "json"], default="markdown")
    s.set_defaults(func=cmd_render)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except SpkInfoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3 if isinstance(exc, OSError) else 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
