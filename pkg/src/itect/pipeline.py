"""Combined detector, evaluation metrics, and experiment harness.

The combined verdict is the OR of the entropy-profile forest and the
n-gram zoo comparison. Files too small for a detector make that
detector abstain (a benign vote, flagged on the verdict), keeping the
precision-first behavior.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np

from . import ents, forest as forest_mod, slamm
from .errors import DataError


@dataclass
class Verdict:
    digest: str
    ents_verdict: bool
    ents_score: float
    slamm_verdict: slamm.SlammVerdict | None
    itect_verdict: bool
    ents_abstained: bool = False
    slamm_abstained: bool = False
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def slamm_overall(self) -> bool:
        return self.slamm_verdict.overall if self.slamm_verdict else False

    def to_json(self) -> str:
        d = {
            "digest": self.digest,
            "ents_verdict": self.ents_verdict,
            "ents_score": self.ents_score,
            "slamm": None,
            "itect_verdict": self.itect_verdict,
            "ents_abstained": self.ents_abstained,
            "slamm_abstained": self.slamm_abstained,
            "timings": self.timings,
        }
        if self.slamm_verdict is not None:
            d["slamm"] = {
                "cx": self.slamm_verdict.cx,
                "cd": self.slamm_verdict.cd,
                "cmse": self.slamm_verdict.cmse,
                "overall": self.slamm_verdict.overall,
                "diagnostics": self.slamm_verdict.diagnostics,
            }
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Verdict":
        d = json.loads(line)
        sv = None
        if d["slamm"] is not None:
            sv = slamm.SlammVerdict(
                cx=d["slamm"]["cx"],
                cd=d["slamm"]["cd"],
                cmse=d["slamm"]["cmse"],
                overall=d["slamm"]["overall"],
                diagnostics=d["slamm"]["diagnostics"],
            )
        return cls(
            digest=d["digest"],
            ents_verdict=d["ents_verdict"],
            ents_score=d["ents_score"],
            slamm_verdict=sv,
            itect_verdict=d["itect_verdict"],
            ents_abstained=d["ents_abstained"],
            slamm_abstained=d["slamm_abstained"],
            timings=d.get("timings", {}),
        )


@dataclass
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    fp_rate: float
    fn_rate: float
    wall_time: float = 0.0
    roc: list[tuple[float, float]] | None = None
    per_category: dict[str, dict[str, float]] | None = None
    external_engines: dict[str, dict[str, float]] | None = None

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)


def _metrics(tp: int, fp: int, tn: int, fn: int) -> dict[str, float]:
    total = tp + fp + tn + fn
    return {
        "accuracy": (tp + tn) / total if total else 0.0,
        "precision": tp / (tp + fp) if (tp + fp) else 1.0,
        "recall": tp / (tp + fn) if (tp + fn) else 0.0,
        "fp_rate": fp / (fp + tn) if (fp + tn) else 0.0,
        "fn_rate": fn / (fn + tp) if (fn + tp) else 0.0,
    }


def evaluate(
    verdicts: Sequence[Verdict],
    labels: dict[str, str],
    categories: dict[str, str] | None = None,
    wall_time: float = 0.0,
) -> EvalReport:
    """Confusion matrix and derived rates for a set of verdicts.

    ``labels`` maps digest -> "malware"/"benign". Precision defaults to
    1.0 when nothing was flagged.
    """
    tp = fp = tn = fn = 0
    per_cat: dict[str, list[int]] = {}
    for v in verdicts:
        if v.digest not in labels:
            raise DataError(f"no label for digest {v.digest}")
        truth = labels[v.digest] == "malware"
        pred = v.itect_verdict
        if truth and pred:
            tp += 1
        elif truth:
            fn += 1
        elif pred:
            fp += 1
        else:
            tn += 1
        if categories is not None:
            cat = categories.get(v.digest, "unknown")
            bucket = per_cat.setdefault(cat, [0, 0])
            bucket[0] += int(pred == truth)
            bucket[1] += 1
    per_category = None
    if categories is not None:
        per_category = {
            cat: {"accuracy": ok / n, "count": n} for cat, (ok, n) in sorted(per_cat.items())
        }
    m = _metrics(tp, fp, tn, fn)
    return EvalReport(
        tp=tp, fp=fp, tn=tn, fn=fn, wall_time=wall_time, per_category=per_category, **m
    )


def itect_classify(
    data: bytes,
    digest: str,
    trained_forest: forest_mod.TrainedForest,
    ents_params: ents.EntsParams,
    malware_models: Sequence[tuple[slamm.NgramModel, slamm.NgramHistogram]],
    benign_model: tuple[slamm.NgramModel, slamm.NgramHistogram],
) -> Verdict:
    """OR of the two detectors, with both sub-verdicts kept for audit."""
    timings: dict[str, float] = {}

    ents_abstained = len(data) < ents_params.chunk_size
    ents_score = 0.0
    ents_verdict = False
    t0 = time.perf_counter()
    if not ents_abstained:
        profile = ents.entropy_profile(data, ents_params, source_digest=digest)
        row = profile.values[trained_forest.feature_cols]
        ents_score = forest_mod.score(trained_forest, row)
        if trained_forest.cutoff is None:
            raise DataError("forest is not calibrated")
        ents_verdict = ents_score >= trained_forest.cutoff
    timings["ents"] = time.perf_counter() - t0

    n = benign_model[0].n
    slamm_abstained = len(data) < n
    sv = None
    t0 = time.perf_counter()
    if not slamm_abstained:
        sv = slamm.slamm_classify(data, malware_models, benign_model)
    timings["slamm"] = time.perf_counter() - t0

    return Verdict(
        digest=digest,
        ents_verdict=ents_verdict,
        ents_score=ents_score,
        slamm_verdict=sv,
        itect_verdict=ents_verdict or (sv.overall if sv else False),
        ents_abstained=ents_abstained,
        slamm_abstained=slamm_abstained,
        timings=timings,
    )


def padding_cost(n_entropy: float, m_entropy: float, o_entropy: float) -> float:
    """Low-entropy chunks needed per high-entropy chunk to look benign.

    ``n_entropy`` is the malware's average chunk entropy, ``m_entropy``
    the benign average, ``o_entropy`` the padding material's entropy;
    requires o <= m <= n. The returned ratio n_pad satisfies
    (N + n_pad * O) / (n_pad + 1) = M.
    """
    if not (o_entropy <= m_entropy <= n_entropy):
        raise DataError("entropies must satisfy O <= M <= N")
    if m_entropy == o_entropy:
        raise DataError("infeasible: padding entropy equals benign average")
    return (n_entropy - m_entropy) / (m_entropy - o_entropy)


def prevalence_sweep(
    benign_verdicts: Sequence[Verdict],
    malware_verdicts: Sequence[Verdict],
    labels: dict[str, str],
    malware_fractions: Sequence[float],
    seed: int,
    sample_size: int | None = None,
) -> list[EvalReport]:
    """Evaluate one model pair at varying malware prevalence.

    Verdicts are computed once by the caller; each prevalence point is
    a seeded without-replacement sample of the verdict pools, sized so
    the malware share of the sample equals the requested fraction.
    """
    if sample_size is None:
        sample_size = len(benign_verdicts)
    reports = []
    for frac in malware_fractions:
        if not 0 <= frac <= 0.5:
            raise DataError("malware fractions must lie in [0, 0.5]")
        n_mal = round(frac * sample_size)
        n_ben = sample_size - n_mal
        if n_ben > len(benign_verdicts) or n_mal > len(malware_verdicts):
            raise DataError("not enough verdicts for requested prevalence")
        rng = random.Random(f"{seed}:{frac}")
        sample = rng.sample(list(benign_verdicts), n_ben) + rng.sample(
            list(malware_verdicts), n_mal
        )
        reports.append(evaluate(sample, labels))
    return reports
