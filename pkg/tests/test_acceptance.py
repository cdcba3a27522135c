"""End-to-end acceptance checks.

Each test covers one acceptance criterion and emits a single
``[acceptance] criterion N: PASS/FAIL`` line on the terminal, bypassing
output capture so the lines survive into piped logs.
"""

import math
import time

import numpy as np
import pytest

from itect import baselines, corpus, ents, forest, pipeline, slamm, synth

GOLDEN_SERIES = np.array([4, 5, 4, 1, 1, 2, 1, 2], dtype=float)
GOLDEN_WAVELET = np.array([7, 2.8, 2, 0, -0.7, 2.1, -0.7, -0.7])
GOLDEN_DENOISED = np.array([7, 2.8, 2, 0, 0, 2.1, 0, 0])
GOLDEN_RECONSTRUCTION = np.array([4.5, 4.5, 4, 1, 1.5, 1.5, 1.5, 1.5])


def _emit(capsys, criterion, ok, detail=""):
    with capsys.disabled():
        status = "PASS" if ok else "FAIL"
        suffix = f" ({detail})" if detail else ""
        print(f"[acceptance] criterion {criterion}: {status}{suffix}")


class _Reporter:
    """Prints the criterion verdict even when an assertion fires."""

    def __init__(self, capsys, criterion):
        self.capsys = capsys
        self.criterion = criterion
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        _emit(self.capsys, self.criterion, exc_type is None, self.detail)
        return False


# -- criterion 1: golden wavelet walk-through --------------------------


def test_criterion_1_golden_wavelet(capsys):
    with _Reporter(capsys, 1):
        t0 = time.perf_counter()
        coeffs = ents.haar_forward(GOLDEN_SERIES)
        # Reference vectors round to one decimal except the leading
        # scale coefficient, printed as 7 though it is exactly
        # 20/sqrt(8) = 7.0711; it gets the matching wider bound.
        assert abs(coeffs.coeffs[0] - GOLDEN_WAVELET[0]) <= 0.075
        np.testing.assert_allclose(coeffs.coeffs[1:], GOLDEN_WAVELET[1:], atol=0.05)

        denoised = ents.denoise(coeffs, 0.75)
        assert abs(denoised.coeffs[0] - GOLDEN_DENOISED[0]) <= 0.075
        np.testing.assert_allclose(denoised.coeffs[1:], GOLDEN_DENOISED[1:], atol=0.05)

        recon = ents.haar_inverse(denoised)
        np.testing.assert_allclose(recon, GOLDEN_RECONSTRUCTION, atol=0.05)
        assert time.perf_counter() - t0 < 1.0


# -- criterion 2: index-selection golden vectors -----------------------


def test_criterion_2_index_selection(capsys):
    with _Reporter(capsys, 2):
        t0 = time.perf_counter()
        assert ents.select_chunk_indices(20, 8).tolist() == [0, 2, 5, 8, 10, 13, 16, 19]
        assert ents.select_chunk_indices(6, 8).tolist() == [0, 0, 1, 2, 2, 3, 4, 5]
        assert time.perf_counter() - t0 < 1.0


# -- criteria 3 & 5: full pipeline on the synthetic corpus -------------


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    """Generate the corpus, train both detectors, classify the test third."""
    root = tmp_path_factory.mktemp("corpus")
    t0 = time.perf_counter()

    parts = []
    for profile, count in (
        ("benign_like", 1000),
        ("polymorphic_like", 334),
        ("metamorphic_like", 333),
        ("packed_like", 333),
    ):
        parts.append(
            synth.synth_corpus(
                profile, count, (80 * 1024, 120 * 1024), seed=20240817,
                out_dir=root / profile,
            )
        )
    merged = corpus.CorpusManifest(
        entries=tuple(e for m in parts for e in m), split_pending=True
    )
    # train two thirds, held-out test third (no separate validation split;
    # calibration cross-validates inside the training set)
    manifest = corpus.split_manifest(
        merged, 2 / 3, seed=7, validation_fraction_of_rest=0.0
    )
    train = manifest.by_split("train")
    test = manifest.by_split("test")

    mal_sizes = [e.size_bytes for e in train if e.label == "malware"]
    ben_sizes = [e.size_bytes for e in train if e.label == "benign"]
    params = ents.EntsParams(
        chunk_size=256,
        alpha=ents.compute_alpha(mal_sizes, ben_sizes, 256),
        tau=0.5,
    )

    rows = np.array(
        [
            ents.entropy_profile(
                corpus.load_sample(e.path), params, source_digest=e.digest
            ).values
            for e in train
        ]
    )
    matrix = ents.FeatureMatrix(
        rows=rows,
        col_index=list(range(params.n_points)),
        labels=[e.label for e in train],
        digests=[e.digest for e in train],
    )
    pruned = ents.prune_correlated(matrix)
    trained = forest.calibrate_zero_fp(
        pruned.rows,
        [1 if l == "malware" else 0 for l in pruned.labels],
        forest.ForestConfig(trees=100, seed=0),
        folds=10,
        feature_cols=pruned.col_index,
    )

    def zoo(category):
        if category == "benign":
            entries = [e for e in train if e.label == "benign"]
        else:
            entries = [e for e in train if e.category == category]
        model = slamm.NgramModel.train(
            (corpus.load_sample(e.path) for e in entries), n=3, zoo_id=category
        )
        return model, model.histogram()

    malware_models = [zoo(c) for c in ("polymorphic", "metamorphic", "packed")]
    benign_model = zoo("benign")

    verdicts = [
        pipeline.itect_classify(
            corpus.load_sample(e.path), e.digest, trained, params,
            malware_models, benign_model,
        )
        for e in test
    ]
    elapsed = time.perf_counter() - t0
    return {
        "trained": trained,
        "verdicts": verdicts,
        "labels": {e.digest: e.label for e in test},
        "categories": {e.digest: e.category for e in test},
        "n_test": len(test),
        "elapsed": elapsed,
    }


def test_criterion_3_precision_and_accuracy(pipeline_run, capsys):
    with _Reporter(capsys, 3) as r:
        report = pipeline.evaluate(
            pipeline_run["verdicts"],
            pipeline_run["labels"],
            pipeline_run["categories"],
        )
        r.detail = (
            f"precision={report.precision:.3f} accuracy={report.accuracy:.3f} "
            f"elapsed={pipeline_run['elapsed']:.0f}s"
        )
        trained = pipeline_run["trained"]
        # zero validation false positives by construction of the cutoff
        assert trained.calibration["benign_validation_max"] < trained.cutoff
        assert report.precision == 1.0
        assert report.accuracy >= 0.85
        assert pipeline_run["elapsed"] < 900


def test_criterion_5_prevalence_sweep(pipeline_run, capsys):
    with _Reporter(capsys, 5) as r:
        t0 = time.perf_counter()
        labels = pipeline_run["labels"]
        benign = [v for v in pipeline_run["verdicts"] if labels[v.digest] == "benign"]
        malware = [v for v in pipeline_run["verdicts"] if labels[v.digest] == "malware"]
        fractions = [0.0, 0.1, 0.25, 0.4, 0.5]
        reports = pipeline.prevalence_sweep(
            benign, malware, labels, fractions, seed=13
        )
        # precision stays 1.0 wherever anything was flagged
        for rep in reports:
            if rep.tp + rep.fp > 0:
                assert rep.precision == 1.0

        at25 = reports[fractions.index(0.25)]
        at50 = reports[fractions.index(0.5)]
        n25 = at25.tp + at25.fn
        n50 = at50.tp + at50.fn
        p_fn = at25.fn_rate
        # accuracy at 0.5 implied by the per-file FN probability seen at
        # 0.25, within a 95% binomial interval for both finite samples
        expected = 1.0 - 0.5 * p_fn
        sigma = math.sqrt(max(p_fn * (1 - p_fn), 1 / n25) * (1 / n25 + 1 / n50))
        half_width = 1.96 * 0.5 * sigma + 1.0 / at50.total
        r.detail = (
            f"acc@0.5={at50.accuracy:.3f} expected={expected:.3f}±{half_width:.3f}"
        )
        assert abs(at50.accuracy - expected) <= half_width
        assert time.perf_counter() - t0 < 1200


# -- criterion 4: property suites --------------------------------------


def test_criterion_4_property_suites(capsys):
    with _Reporter(capsys, 4):
        rng = np.random.default_rng(99)

        # Haar round-trip and Parseval on 1,000 random vectors
        for _ in range(1000):
            n = 1 << int(rng.integers(1, 8))
            x = rng.uniform(-10, 10, n)
            c = ents.haar_forward(x)
            assert np.max(np.abs(ents.haar_inverse(c) - x)) <= 1e-9
            ex, ec = float((x**2).sum()), float((c.coeffs**2).sum())
            assert abs(ex - ec) <= 1e-9 * max(ex, 1.0)

        # kld(p, p) = 0 and kld >= 0 on 1,000 nested-support pairs
        for _ in range(1000):
            support = rng.choice(256, size=int(rng.integers(2, 30)), replace=False)
            q_mass = rng.dirichlet(np.ones(len(support)))
            keep = max(1, int(rng.integers(1, len(support) + 1)))
            p_mass = rng.dirichlet(np.ones(keep))
            q = slamm.NgramHistogram.from_masses(
                {bytes([int(s)]): m for s, m in zip(support, q_mass)}, 1
            )
            p = slamm.NgramHistogram.from_masses(
                {bytes([int(s)]): m for s, m in zip(support[:keep], p_mass)}, 1
            )
            assert slamm.kld(p, p) == pytest.approx(0.0, abs=1e-12)
            assert slamm.kld(p, q) >= -1e-12

        # n-gram conditional normalization on random corpora
        for seed in range(5):
            gen = np.random.default_rng(seed)
            docs = [
                gen.integers(0, 256, 2000).astype(np.uint8).tobytes()
                for _ in range(4)
            ]
            model = slamm.NgramModel.train(docs, n=3)
            for _ in range(50):
                ctx = gen.integers(0, 256, 2).astype(np.uint8).tobytes()
                assert model.conditional_distribution(ctx).sum() <= 1 + 1e-6

        # MSE and KLD match brute-force summation to 1e-12
        for _ in range(200):
            sup_q = rng.choice(256, size=int(rng.integers(1, 20)), replace=False)
            sup_p = rng.choice(256, size=int(rng.integers(1, 20)), replace=False)
            qd = {
                bytes([int(s)]): m
                for s, m in zip(sup_q, rng.dirichlet(np.ones(len(sup_q))))
            }
            pd = {
                bytes([int(s)]): m
                for s, m in zip(sup_p, rng.dirichlet(np.ones(len(sup_p))))
            }
            q = slamm.NgramHistogram.from_masses(qd, 1)
            p = slamm.NgramHistogram.from_masses(pd, 1)
            brute_mse = sum(
                (pd.get(g, 0.0) - qd[g]) ** 2 for g in qd
            ) / len(qd)
            assert slamm.mse(q, p) == pytest.approx(brute_mse, abs=1e-12)
            eps = 1e-10
            brute_kld = sum(
                m * math.log2(m / max(qd.get(g, 0.0), eps)) for g, m in pd.items()
            )
            assert slamm.kld(p, q) == pytest.approx(brute_kld, abs=1e-12)


# -- criterion 6: scalability ------------------------------------------


@pytest.fixture(scope="module")
def scaling_files():
    rng = np.random.default_rng(4242)
    files = []
    for i in range(1600):
        if i % 2 == 0:
            files.append(
                (b"scalability benchmark text body with low entropy " * 100)[
                    : 4096
                ]
            )
        else:
            files.append(rng.integers(0, 256, 4096).astype(np.uint8).tobytes())
    return files


def test_criterion_6_scalability(scaling_files, capsys):
    with _Reporter(capsys, 6) as r:
        files = scaling_files
        params = ents.EntsParams(chunk_size=256, alpha=4, tau=0.5)
        rows = np.array(
            [ents.entropy_profile(f, params).values for f in files[:60]]
        )
        labels = [0 if i % 2 == 0 else 1 for i in range(60)]
        trained = forest.calibrate_zero_fp(
            rows, labels, forest.ForestConfig(trees=20, seed=1), folds=3
        )
        mal = slamm.NgramModel.train(
            [f for f in files[:60][1::2]], n=3, zoo_id="m"
        )
        ben = slamm.NgramModel.train(
            [f for f in files[:60][0::2]], n=3, zoo_id="b"
        )
        malware_models = [(mal, mal.histogram())]
        benign_model = (ben, ben.histogram())

        def classify_time(n):
            best = math.inf
            for _ in range(3):
                t0 = time.perf_counter()
                for f in files[:n]:
                    pipeline.itect_classify(
                        f, "x", trained, params, malware_models, benign_model
                    )
                best = min(best, time.perf_counter() - t0)
            return best

        classify_time(50)  # warm-up
        t400, t800, t1600 = (classify_time(n) for n in (400, 800, 1600))
        # linear fit: time(k * n) <= 1.25 * k * time(n)
        assert t800 <= 1.25 * 2 * t400
        assert t1600 <= 1.25 * 2 * t800
        assert t1600 <= 1.25 * 4 * t400

        spec = baselines.CompressorSpec(algorithm_id="zlib", level=1)

        def ncd_time(n):
            subset = files[:n]
            t0 = time.perf_counter()
            baselines.similarity_rows(subset, subset, spec)
            return time.perf_counter() - t0

        n400, n800 = ncd_time(400), ncd_time(800)
        r.detail = (
            f"classify {t400:.2f}/{t800:.2f}/{t1600:.2f}s, "
            f"ncd {n400:.1f}/{n800:.1f}s"
        )
        # superlinear: at least 1.6x beyond the linear doubling
        assert n800 >= 1.6 * 2 * n400


# -- criterion 7: countermeasure calculator ----------------------------


def test_criterion_7_padding_identity(capsys):
    with _Reporter(capsys, 7):
        rng = np.random.default_rng(7)
        done = 0
        while done < 100:
            o, m, n = np.sort(rng.uniform(0.0, 8.0, 3))
            if m - o < 1e-3:
                continue
            pad = pipeline.padding_cost(float(n), float(m), float(o))
            assert abs((n + pad * o) / (pad + 1) - m) <= 1e-12
            done += 1
