"""Exit criteria for the build, one test per criterion.

Each test prints a PASS/FAIL line (collected into the terminal summary by
``conftest.pytest_terminal_summary``) and enforces its runtime budget.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from conftest import random_qds
from eer_oracle import sweep_eer
from spkinfo import backend, baselines, data, entropy, synth
from spkinfo.baselines import GaussianModel
from spkinfo.experiment import ExperimentConfig, run_experiment
from spkinfo.quantizer import train_bank, train_lloyd_max

RESULTS = []


class Criterion:
    def __init__(self, number, title, budget_s):
        self.number, self.title, self.budget = number, title, budget_s
        self.details = []

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def note(self, text):
        self.details.append(text)

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        ok = exc_type is None and elapsed < self.budget
        detail = "; ".join(self.details)
        if exc_type is not None:
            detail = (detail + "; " if detail else "") + f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        RESULTS.append(f"[{'PASS' if ok else 'FAIL'}] {self.number:>2}. {self.title} "
                       f"({elapsed:.1f}s / {self.budget}s) {detail}")
        if exc_type is None:
            assert elapsed < self.budget, f"runtime {elapsed:.1f}s exceeds {self.budget}s"
        return False


@pytest.fixture(scope="module")
def standard_population():
    return synth.generate_population(synth.PopulationSpec.standard())


def test_01_entropy_oracle_equivalence():
    with Criterion(1, "entropy estimator == brute-force oracle (1e-9)", 10) as c:
        worst = 0.0
        for seed in range(100):
            qds = random_qds(np.random.default_rng(seed), max_m=4, max_bits=3, max_vectors=200, max_speakers=10)
            hv, hvs = synth.brute_force_entropy_oracle(qds)
            est = entropy.mutual_information(qds)
            for got, want in ((est.h_population, hv), (est.h_within, hvs), (est.i_bits, hv - hvs)):
                worst = max(worst, abs(got - want))
        c.note(f"max abs error {worst:.2e}")
        assert worst <= 1e-9


def test_02_gaussian_mi_oracle(standard_population):
    spec = synth.PopulationSpec.standard()
    with Criterion(2, "plug-in I(S;V) vs Gaussian integration oracle (0.02*m bits)", 120) as c:
        tol = 0.02 * spec.m
        gaps = []
        for bits in (1, 2, 3):
            bank = train_bank(standard_population, bits)
            est = entropy.mutual_information(bank.quantize_dataset(standard_population))
            oracle = synth.numeric_mi_oracle(spec, bank)
            gaps.append(est.i_bits - oracle)
            c.note(f"b={bits}: plug-in {est.i_bits:.2f} oracle {oracle:.2f}")
        assert max(abs(g) for g in gaps) <= tol


def test_03_daugman_calibration():
    with Criterion(3, "Hamming DoF on iid / duplicated / XOR-appended bits", 30) as c:
        X = synth.generate_iid_binary(5000, 64, 0.5, seed=2024)
        base = baselines.hamming_dof(X, "all_pairs").dof
        dup = baselines.hamming_dof(baselines.structured_dependency_transforms(X, "duplicate_halves"), "all_pairs").dof
        xor = baselines.hamming_dof(baselines.structured_dependency_transforms(X, "xor_append"), "all_pairs").dof
        c.note(f"iid {base:.2f}, duplicate {dup:.2f}, xor-append {xor:.2f}")
        assert 60.8 <= base <= 67.2
        assert 60.8 <= dup <= 67.2
        assert xor > 64


def test_04_dof_fixture():
    with Criterion(4, "p=0.5, var=0.25/249 -> DoF 249", 5) as c:
        exact = baselines.dof_from_moments(Fraction(1, 2), Fraction(1, 4) / 249)
        approx = baselines.dof_from_moments(0.5, 0.25 / 249)
        c.note(f"exact {exact}, float {approx!r}")
        assert exact == 249
        assert approx == pytest.approx(249, rel=1e-15)


def test_05_lloyd_max_fixtures(standard_population):
    with Criterion(5, "Lloyd-Max uniform/Gaussian fixtures and monotone MSE traces", 30) as c:
        grid = (np.arange(100_000) + 0.5) / 100_000
        uni = train_lloyd_max(grid, 2)
        gauss = train_lloyd_max(np.random.default_rng(7).standard_normal(1_000_000), 1)
        half_mean = math.sqrt(2 / math.pi)
        traces = [uni.trace, gauss.trace]
        _, X = standard_population.stacked()
        for bits in range(1, 6):
            traces += [q.trace for q in train_bank(X[:, :10], bits).per_dim]
        worst_rise = max(max(np.diff(t), default=0.0) for t in traces)
        c.note(f"uniform boundaries {np.round(uni.boundaries, 5).tolist()}, gaussian levels "
               f"{np.round(gauss.levels, 4).tolist()}, {len(traces)} traces, max MSE rise {worst_rise:.1e}")
        np.testing.assert_allclose(uni.boundaries, [0.25, 0.5, 0.75], atol=1e-3)
        np.testing.assert_allclose(gauss.levels, [-half_mean, half_mean], rtol=0.01)
        assert worst_rise <= 1e-12


def test_06_kl_monte_carlo():
    with Criterion(6, "closed-form Gaussian KL vs Monte-Carlo (1e6 draws, 2%)", 60) as c:
        rng = np.random.default_rng(99)
        worst = 0.0
        for _ in range(20):
            m = int(rng.integers(1, 6))
            models = []
            for _ in range(2):
                A = rng.normal(size=(m, m))
                models.append(GaussianModel(rng.normal(size=m), A @ A.T + 0.5 * np.eye(m)))
            p, q = models
            x = rng.multivariate_normal(p.mean, p.covariance, size=1_000_000)
            lp = stats.multivariate_normal(p.mean, p.covariance).logpdf(x)
            lq = stats.multivariate_normal(q.mean, q.covariance).logpdf(x)
            mc = float(np.mean(lp - lq)) / math.log(2)
            worst = max(worst, abs(baselines.kl_gaussian(p, q) - mc) / mc)
        c.note(f"max relative gap {worst:.4f}")
        assert worst <= 0.02


def test_07_gplda_recovery():
    with Criterion(7, "GPLDA recovers B = FF' (d=20, d_s=10, 500x20) within 10%", 120) as c:
        rng = np.random.default_rng(0)
        d, ds = 20, 10
        Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        F = Q[:, :ds] * (2.0 * 0.5 ** np.arange(ds))
        A = rng.normal(size=(d, d))
        W = A @ A.T / d + 0.5 * np.eye(d)
        pop = synth.generate_plda_population(F, W, 500, 20, seed=0)
        fit = backend.fit_gplda(list(pop.speakers.values()), ds, 100)
        B = F @ F.T
        rel = np.linalg.norm(fit.B - B) / np.linalg.norm(B)
        ll = np.array(fit.loglik)
        steps = np.diff(ll)
        c.note(f"relative error {rel:.4f}, min log-lik step {steps.min():.2e}")
        assert rel < 0.10
        assert np.all(steps >= -1e-6 * np.abs(ll[:-1]))


def test_08_quantization_robustness(standard_population):
    with Criterion(8, "EER(b=3) within 0.5 pp of float; EER(b=1) > float", 300) as c:
        dev, meas = data.split_by_speaker(standard_population, 0.8, 42)
        ver = data.subsample(meas, 200, 100, 42)
        eers = {}
        for bits in (None, 1, 3):
            bank = None if bits is None else train_bank(dev, bits)
            model = backend.fit_backend(dev, iters=10, bank=bank)
            scores, _ = backend.build_trials(ver, model, bank, seed=42)
            eers[bits] = 100 * backend.compute_eer(scores)
        c.note(f"EER% float {eers[None]:.4f}, b=1 {eers[1]:.4f}, b=3 {eers[3]:.4f}")
        assert abs(eers[3] - eers[None]) <= 0.5
        assert eers[1] > eers[None]


def test_09_sample_count_bias(standard_population):
    with Criterion(9, "I(k=10) > I(k=100) with ratio in [1.2, 5.0] for b=1..5", 180) as c:
        few = data.subsample(standard_population, 1000, 10, 42)
        ratios = {}
        for bits in range(1, 6):
            bank = train_bank(standard_population, bits)
            i_few = entropy.mutual_information(bank.quantize_dataset(few)).i_bits
            i_many = entropy.mutual_information(bank.quantize_dataset(standard_population)).i_bits
            ratios[bits] = (i_few, i_many, i_few / i_many)
        c.note(", ".join(f"b={b}: {f:.1f}/{m:.1f}={r:.3f}" for b, (f, m, r) in ratios.items()))
        assert all(f > m for f, m, _ in ratios.values())
        assert all(1.2 <= r <= 5.0 for _, _, r in ratios.values())


def test_10_eer_oracle():
    with Criterion(10, "compute_eer == exhaustive sweep oracle (1e-9)", 10) as c:
        rng = np.random.default_rng(10)
        fixtures = [([0.9, 0.8], [0.1, 0.2], 0.0), ([0.8, 0.4], [0.6, 0.2], 0.5),
                    ([0.1, 0.5, 0.9], [0.9, 0.5, 0.1], 0.5)]
        for g, i, want in fixtures:
            assert backend.compute_eer(g, i) == pytest.approx(want, abs=1e-9)
            assert sweep_eer(g, i) == pytest.approx(want, abs=1e-9)
        worst = 0.0
        for k in range(200):
            ng, ni = rng.integers(1, 60, size=2)
            if k % 2:
                g = rng.integers(0, 15, ng) / 3.0  # heavy ties
                i = rng.integers(0, 15, ni) / 3.0
            else:
                g = rng.normal(1.0, 1.0, ng)
                i = rng.normal(0.0, 1.0, ni)
            worst = max(worst, abs(backend.compute_eer(g, i) - sweep_eer(g, i)))
        c.note(f"max abs gap {worst:.1e} over 200 random sets")
        assert worst <= 1e-9


def test_11_end_to_end_determinism(tmp_path):
    with Criterion(11, "run twice with different worker counts -> identical JSON", 300) as c:
        cfg = ExperimentConfig.from_dict({
            "input": {"synthetic": {"m": 50, "between_std": 1.0, "within_std": 0.5, "n_speakers": 1000,
                                    "k_samples": 100, "seed": 42}},
            "output_dir": str(tmp_path / "run"),
            "dev_fraction": 0.2,
            "seed": 42,
            "bits": [1, 2, 3],
            "k_samples": [10, 100],
            "measures": ["mutual_info", "daugman", "adler", "score_kl"],
            "verification": {"enabled": True, "n_speakers": 200},
        })
        outputs = []
        for workers in (1, 4):
            run_experiment(cfg, workers=workers)
            outputs.append({p.name: p.read_bytes() for p in sorted((tmp_path / "run").glob("*.json"))})
        c.note(f"{len(outputs[0])} JSON files compared")
        assert outputs[0] == outputs[1]
