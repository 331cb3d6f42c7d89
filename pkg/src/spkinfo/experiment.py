"""Config-driven experiment runner producing the uniqueness, verification
and measure-comparison tables."""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import backend, baselines, data, entropy, quantizer, synth
from .errors import ConfigError, InsufficientDataError, SpkInfoError
from .report import Cell, ReportTable, render

log = logging.getLogger(__name__)

MEASURES = ("mutual_info", "daugman", "adler", "score_kl")
WORKERS_ENV = "SPKINFO_WORKERS"


@dataclass
class ExperimentConfig:
    input: dict
    output_dir: str = "results"
    dev_fraction: float = 0.2
    seed: int = 0
    bits: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    n_speakers: list = field(default_factory=list)
    k_samples: list = field(default_factory=list)
    measures: list = field(default_factory=lambda: ["mutual_info"])
    representation: str = "quantum_value"
    quantizer: dict = field(default_factory=lambda: {"tol": quantizer.DEFAULT_TOL,
                                                     "max_iter": quantizer.DEFAULT_MAX_ITER})
    backend: dict = field(default_factory=lambda: {"lda_dim": None, "plda_dim": None, "iters": 10})
    verification: dict = field(default_factory=lambda: {"enabled": False, "n_speakers": None})
    daugman: dict = field(default_factory=lambda: {"pairing": "between_speaker"})
    adler: dict = field(default_factory=lambda: {"shrinkage": 0.5, "ridge": None})
    score_kl: dict = field(default_factory=lambda: {"n_bins": 64})

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "input" not in doc:
            raise ConfigError("config needs an 'input' section")
        defaults = cls(input=doc["input"])
        merged = {}
        for k in known:
            base = getattr(defaults, k)
            v = doc.get(k, base)
            if isinstance(base, dict) and isinstance(v, dict) and k != "input":
                v = {**base, **v}
            merged[k] = v
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)

    def validate(self):
        if not self.bits or any(not isinstance(b, int) or not 1 <= b <= 8 for b in self.bits):
            raise ConfigError("bits must be a non-empty list of integers in 1..8")
        if not self.measures or any(m not in MEASURES for m in self.measures):
            raise ConfigError(f"measures must be a non-empty subset of {MEASURES}")
        if not 0.0 < self.dev_fraction < 1.0:
            raise ConfigError("dev_fraction must lie in (0, 1)")
        if self.representation not in quantizer.REPRESENTATIONS:
            raise ConfigError(f"representation must be one of {quantizer.REPRESENTATIONS}")
        if "synthetic" not in self.input and "path" not in self.input:
            raise ConfigError("input needs either 'path' or 'synthetic'")
        for name in ("n_speakers", "k_samples"):
            if any(not isinstance(x, int) or x < 1 for x in getattr(self, name)):
                raise ConfigError(f"{name} entries must be positive integers")

    def to_dict(self):
        return asdict(self)


class CellFailure(SpkInfoError):
    def __init__(self, where, cause):
        super().__init__(f"{where}: {cause}")
        self.where = where
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)


def _workers():
    try:
        return max(int(os.environ.get(WORKERS_ENV, "1")), 1)
    except ValueError:
        return 1


def _pmap(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def load_input(cfg):
    if "synthetic" in cfg.input:
        try:
            spec = synth.PopulationSpec.from_dict(cfg.input["synthetic"])
        except TypeError as exc:
            raise ConfigError(f"bad synthetic spec: {exc}") from exc
        return synth.generate_population(spec)
    return data.load(cfg.input["path"], cfg.input.get("format"))


def _guard(where, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except SpkInfoError as exc:
        raise CellFailure(where, exc) from exc


def _mi_tables(cfg, meas, banks, workers):
    ks = cfg.k_samples or [min(a.shape[0] for a in meas.speakers.values())]
    ns = cfg.n_speakers or [meas.n_speakers]
    sweep = [(n, k) for k in ks for n in ns]
    jobs = [(b, n, k) for b in cfg.bits for (n, k) in sweep]

    def one(job):
        b, n, k = job
        try:
            sub = data.subsample(meas, n, k, cfg.seed)
        except InsufficientDataError as exc:
            return job, None, exc.attainable
        est = _guard(f"mutual_info bits={b} n={n} k={k}", entropy.mutual_information,
                     banks[b].quantize_dataset(sub), k)
        return job, est, None

    results = {r[0]: r for r in _pmap(one, jobs, workers)}
    columns = [f"{k} ({n})" for (n, k) in sweep]
    mi_rows, detail = [], []
    for b in cfg.bits:
        cells = []
        for n, k in sweep:
            _, est, attainable = results[(b, n, k)]
            if est is None:
                cells.append(Cell(None, b, n, k, cfg.seed, f"insufficient data (max {attainable} speakers)"))
                continue
            cells.append(Cell(est.i_bits, b, n, k, cfg.seed))
            detail.append((b, n, k, est))
        mi_rows.append((str(b), cells))
    mi = ReportTable("mutual_info", "Uniqueness estimates I(S;V) by samples/speaker (speakers)",
                     "bits", columns, mi_rows)
    terms_rows = []
    for b, n, k, est in detail:
        cells = [Cell(v, b, n, k, cfg.seed) for v in (est.h_population, est.h_within, est.i_bits,
                                                      math.log2(n))]
        terms_rows.append((f"{b} / {k} ({n})", cells))
    terms = ReportTable("entropy_terms", "Entropy terms per configuration",
                        "bits / samples (speakers)", ["H(V)", "H(V|S)", "I(S;V)", "log2 n"], terms_rows)
    return [mi, terms]


def _verification(cfg, dev, meas, banks, workers):
    vcfg = cfg.verification
    n_ver = vcfg.get("n_speakers") or meas.n_speakers
    eligible = [s for s, a in meas.speakers.items() if a.shape[0] >= 2]
    n_ver = min(n_ver, len(eligible))
    k_ver = min(meas.speakers[s].shape[0] for s in eligible)
    ver = data.subsample(meas.select(eligible), n_ver, k_ver, cfg.seed)
    bk = cfg.backend
    settings = [None] + list(cfg.bits)

    def one(b):
        bank = None if b is None else banks[b]
        label = "float" if b is None else f"bits={b}"
        model = _guard(f"backend {label}", backend.fit_backend, dev, bk.get("lda_dim"),
                       bk.get("plda_dim"), bk.get("iters", 10), bank)
        scores, _ = _guard(f"trials {label}", backend.build_trials, ver, model, bank, cfg.seed)
        return scores, backend.compute_eer(scores)

    out = _pmap(one, settings, workers)
    cols = ["float"] + [str(b) for b in cfg.bits]
    cells = [Cell(100.0 * eer, b, n_ver, k_ver, cfg.seed) for b, (_, eer) in zip(settings, out)]
    table = ReportTable("eer", f"Verification EER (%) with {cfg.representation} representation",
                        "", cols, [("EER1", cells)], units="percent")
    return table, out[0][0]


def run_experiment(cfg: ExperimentConfig, workers=None, write=True):
    """Execute the configured experiment; returns ``{name: ReportTable}``.

    Output files are written to ``cfg.output_dir`` when ``write`` is true:
    ``results.json`` (all tables plus the resolved config) and one CSV and
    Markdown file per table.
    """
    workers = workers or _workers()
    ds = load_input(cfg)
    dev, meas = data.split_by_speaker(ds, cfg.dev_fraction, cfg.seed)
    log.info("dev %d speakers, measurement %d speakers", dev.n_speakers, meas.n_speakers)
    qcfg = cfg.quantizer
    bits_needed = set(cfg.bits) | ({1} if "daugman" in cfg.measures else set())

    def train(b):
        return b, _guard(f"quantizer bits={b}", quantizer.train_bank, dev, b, cfg.representation,
                         qcfg.get("tol", quantizer.DEFAULT_TOL),
                         qcfg.get("max_iter", quantizer.DEFAULT_MAX_ITER))

    tables: dict[str, ReportTable] = {}
    failures = []
    try:
        banks = dict(_pmap(train, sorted(bits_needed), workers))
        if "mutual_info" in cfg.measures:
            for t in _mi_tables(cfg, meas, banks, workers):
                tables[t.name] = t
        genuine_scores = None
        if cfg.verification.get("enabled") or "score_kl" in cfg.measures:
            eer_table, genuine_scores = _verification(cfg, dev, meas, banks, workers)
            if cfg.verification.get("enabled"):
                tables["eer"] = eer_table
        comparison = []
        source = cfg.input.get("path") or "synthetic"
        if "mutual_info" in cfg.measures:
            for b in cfg.bits:
                est = _guard(f"mutual_info bits={b} full", entropy.mutual_information,
                             banks[b].quantize_dataset(meas))
                comparison.append(("mutual_info", f"b={b}", Cell(est.i_bits, b, meas.n_speakers,
                                                                 est.k_samples, cfg.seed)))
        if "daugman" in cfg.measures:
            pairing = cfg.daugman.get("pairing", "between_speaker")
            dof = _guard("daugman bits=1", baselines.hamming_dof, banks[1].quantize_dataset(meas), pairing)
            cell = Cell(dof.dof, 1, meas.n_speakers, None, cfg.seed, f"pairing={pairing}")
            tables["daugman"] = ReportTable("daugman", "Hamming-distance degrees of freedom",
                                            "bits", ["DoF"], [("1", [cell])])
            comparison.append(("daugman", "b=1", cell))
        if "adler" in cfg.measures:
            lam = cfg.adler.get("shrinkage", 0.5)
            val, eps = _guard("adler", baselines.adler_information, meas, lam, cfg.adler.get("ridge"))
            comparison.append(("adler", "float", Cell(val, None, meas.n_speakers, None, cfg.seed,
                                                      f"shrinkage={lam} ridge={eps!r}")))
        if "score_kl" in cfg.measures:
            n_bins = cfg.score_kl.get("n_bins", 64)
            val = _guard("score_kl", baselines.score_space_kl, genuine_scores.genuine,
                         genuine_scores.impostor, n_bins)
            comparison.append(("score_kl", "float", Cell(val, None, None, None, cfg.seed,
                                                         f"n_bins={n_bins}")))
        tables["comparison"] = ReportTable(
            "comparison", f"Biometric information measures ({source})", "measure (configuration)",
            ["value_bits"], [(f"{m} ({conf})", [c]) for m, conf, c in comparison],
        )
    except CellFailure as exc:
        failures.append({"cell": exc.where, "error": type(exc.cause).__name__, "message": str(exc.cause)})
        if write:
            _write(cfg, tables, failures)
        raise
    if write:
        _write(cfg, tables, failures)
    return tables


def results_document(cfg, tables, failures=()):
    return {
        "config": cfg.to_dict(),
        "tables": {name: t.to_dict() for name, t in tables.items()},
        "failures": list(failures),
    }


def comparison_rows(cfg, table):
    """Flat ``{measure, dataset, bits_config, value_bits}`` records."""
    dataset = cfg.input.get("path") or "synthetic"
    rows = []
    for label, (cell,) in table.rows:
        measure, conf = label.split(" (", 1)
        rows.append({"measure": measure, "dataset": dataset, "bits_config": conf.rstrip(")"),
                     "value_bits": cell.value})
    return rows


def _write(cfg, tables, failures):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = results_document(cfg, tables, failures)
    (out / "results.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    if "comparison" in tables:
        (out / "comparison_rows.json").write_text(
            json.dumps(comparison_rows(cfg, tables["comparison"]), sort_keys=True, indent=2) + "\n",
            encoding="utf-8")
    for name, t in tables.items():
        (out / f"{name}.csv").write_text(render(t, "csv"), encoding="utf-8")
        (out / f"{name}.md").write_text(render(t, "markdown"), encoding="utf-8")
    if failures:
        (out / "failures.json").write_text(json.dumps(list(failures), indent=2) + "\n", encoding="utf-8")
