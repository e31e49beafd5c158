"""Pooled / per-attack EER and minimum normalized t-DCF.

Score polarity: higher means more bona fide.  At threshold ``t`` a bona fide
trial is missed when its score is ``<= t`` and a spoof is falsely accepted
when its score is ``> t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio_io import ProtocolParseError


class MetricError(ValueError):
    pass


class TdcfConfigError(MetricError):
    pass


@dataclass
class ScoreSet:
    utt_ids: list
    scores: np.ndarray
    is_bonafide: np.ndarray
    attack_ids: list

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.is_bonafide = np.asarray(self.is_bonafide, dtype=bool)
        n = self.scores.size
        if not (len(self.utt_ids) == n == self.is_bonafide.size == len(self.attack_ids)):
            raise MetricError("score set columns have different lengths")
        if not np.all(np.isfinite(self.scores)):
            raise MetricError("scores must be finite")

    @classmethod
    def from_records(cls, records, scores):
        """Join a protocol (list of TrialRecord) with a ``utt_id -> score`` map."""
        missing = [r.utt_id for r in records if r.utt_id not in scores]
        if missing:
            raise MetricError(f"{len(missing)} protocol trials have no score, e.g. {missing[:5]}")
        return cls(
            [r.utt_id for r in records],
            [scores[r.utt_id] for r in records],
            [r.is_bonafide for r in records],
            [r.attack_id for r in records],
        )

    def __len__(self):
        return self.scores.size

    @property
    def bonafide(self):
        return self.scores[self.is_bonafide]

    @property
    def spoof(self):
        return self.scores[~self.is_bonafide]

    def subset(self, mask):
        idx = np.flatnonzero(mask)
        return ScoreSet([self.utt_ids[i] for i in idx], self.scores[idx], self.is_bonafide[idx],
                        [self.attack_ids[i] for i in idx])

    def with_scores(self, scores):
        return ScoreSet(list(self.utt_ids), scores, self.is_bonafide.copy(), list(self.attack_ids))


@dataclass(frozen=True)
class TdcfCosts:
    """ASVspoof 2019 (legacy) tandem cost model with a fixed ASV operating point.

    The default ASV error rates are a synthetic operating point, not the
    official evaluation values.
    """

    pi_tar: float = 0.9405
    pi_non: float = 0.0095
    pi_spoof: float = 0.05
    c_miss_asv: float = 1.0
    c_fa_asv: float = 10.0
    c_miss_cm: float = 1.0
    c_fa_cm: float = 10.0
    p_fa_asv: float = 0.01
    p_miss_asv: float = 0.01
    p_miss_spoof_asv: float = 0.5

    def validate(self):
        priors = (self.pi_tar, self.pi_non, self.pi_spoof)
        if min(priors) < 0 or abs(sum(priors) - 1.0) > 1e-12:
            raise TdcfConfigError(f"priors must be nonnegative and sum to 1, got {priors}")
        if min(self.c_miss_asv, self.c_fa_asv, self.c_miss_cm, self.c_fa_cm) <= 0:
            raise TdcfConfigError("costs must be positive")
        for name in ("p_fa_asv", "p_miss_asv", "p_miss_spoof_asv"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise TdcfConfigError(f"{name}={v} is not a probability")

    def coefficients(self):
        self.validate()
        c1 = self.pi_tar * (self.c_miss_cm - self.c_miss_asv * self.p_miss_asv) - self.pi_non * self.c_fa_asv * self.p_fa_asv
        c2 = self.c_fa_cm * self.pi_spoof * (1.0 - self.p_miss_spoof_asv)
        if c1 <= 0 or c2 <= 0:
            raise TdcfConfigError(
                f"ASV operating point (P_fa={self.p_fa_asv}, P_miss={self.p_miss_asv}, "
                f"P_miss_spoof={self.p_miss_spoof_asv}) gives C1={c1:.6g}, C2={c2:.6g}; both must be positive"
            )
        return c1, c2


def _check(s):
    n_bona = int(s.is_bonafide.sum())
    if n_bona == 0 or n_bona == len(s):
        raise MetricError("metrics need at least one bona fide and one spoof trial")


def det_curve(s):
    """Operating points (thresholds, p_miss, p_fa).

    The first point is the accept-everything threshold ``-inf`` with
    (0, 1); then one point per distinct score in increasing order.
    """
    _check(s)
    order = np.argsort(s.scores, kind="mergesort")
    sc = s.scores[order]
    bona = s.is_bonafide[order]
    n_bona = bona.sum()
    n_spoof = bona.size - n_bona
    bona_le = np.cumsum(bona)
    spoof_le = np.cumsum(~bona)
    # last index of each run of equal scores
    last = np.flatnonzero(np.append(sc[1:] != sc[:-1], True))
    thresholds = np.concatenate([[-np.inf], sc[last]])
    p_miss = np.concatenate([[0.0], bona_le[last] / n_bona])
    p_fa = np.concatenate([[1.0], (n_spoof - spoof_le[last]) / n_spoof])
    return thresholds, p_miss, p_fa


def eer_from_curve(p_miss, p_fa):
    """EER by linear interpolation across the sign change of p_miss - p_fa."""
    d = p_miss - p_fa
    i = int(np.argmax(d >= 0))  # d ends at +1, so some index qualifies
    if d[i] == 0 or i == 0:
        return float(p_miss[i])
    d0, d1 = d[i - 1], d[i]
    t = -d0 / (d1 - d0)
    return float(p_miss[i - 1] + t * (p_miss[i] - p_miss[i - 1]))


def eer(s):
    _, p_miss, p_fa = det_curve(s)
    return eer_from_curve(p_miss, p_fa)


def min_tdcf(s, costs=TdcfCosts()):
    c1, c2 = costs.coefficients()
    _, p_miss, p_fa = det_curve(s)
    return float(np.min(c1 * p_miss + c2 * p_fa) / min(c1, c2))


@dataclass
class MetricReport:
    pooled_eer: float
    pooled_min_tdcf: float
    per_attack: dict = field(default_factory=dict)  # attack_id -> (eer, min_tdcf)
    n_bonafide: int = 0
    n_spoof: int = 0

    def to_text(self):
        lines = [
            f"pooled_eer = {self.pooled_eer!r}",
            f"pooled_min_tdcf = {self.pooled_min_tdcf!r}",
            f"n_bonafide = {self.n_bonafide}",
            f"n_spoof = {self.n_spoof}",
        ]
        for attack in sorted(self.per_attack):
            e, t = self.per_attack[attack]
            lines.append(f"attack.{attack}.eer = {e!r}")
            lines.append(f"attack.{attack}.min_tdcf = {t!r}")
        return "\n".join(lines) + "\n"

    def to_csv(self):
        rows = ["attack,eer,min_tdcf", f"pooled,{self.pooled_eer!r},{self.pooled_min_tdcf!r}"]
        rows += [f"{a},{self.per_attack[a][0]!r},{self.per_attack[a][1]!r}" for a in sorted(self.per_attack)]
        return "\n".join(rows) + "\n"


def per_attack_report(s, costs=TdcfCosts()):
    """Pooled metrics plus, per attack, that attack's spoofs against all bona fide trials."""
    report = MetricReport(eer(s), min_tdcf(s, costs), n_bonafide=int(s.is_bonafide.sum()),
                          n_spoof=int((~s.is_bonafide).sum()))
    attacks = sorted({a for a, b in zip(s.attack_ids, s.is_bonafide) if not b})
    for attack in attacks:
        mask = s.is_bonafide | np.array([a == attack for a in s.attack_ids])
        sub = s.subset(mask)
        report.per_attack[attack] = (eer(sub), min_tdcf(sub, costs))
    return report


# ---------------------------------------------------------------------------
# score files: "utt_id score" per line

def format_scores(utt_ids, scores):
    return "".join(f"{u} {float(v)!r}\n" for u, v in zip(utt_ids, scores))


def write_scores(path, utt_ids, scores):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_scores(utt_ids, scores))


def read_scores(path):
    """Returns an insertion-ordered ``utt_id -> score`` dict."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) != 2:
                raise ProtocolParseError(f"{path}:{lineno}: expected 'utt_id score'")
            if parts[0] in out:
                raise ProtocolParseError(f"{path}:{lineno}: duplicate utt_id {parts[0]!r}")
            out[parts[0]] = float(parts[1])
    return out
