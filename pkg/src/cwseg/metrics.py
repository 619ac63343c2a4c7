"""Word-level segmentation scoring and error-rate reduction."""

from __future__ import annotations

from dataclasses import dataclass


class AlignmentError(ValueError):
    """gold and predicted sentences do not cover the same characters."""

    def __init__(self, message, sentence=None):
        if sentence is not None:
            message = "sentence %d: %s" % (sentence, message)
        super().__init__(message)
        self.sentence = sentence


def _spans(words):
    spans = []
    pos = 0
    for w in words:
        end = pos + len(w)
        spans.append((pos, end))
        pos = end
    return spans


@dataclass(frozen=True)
class ScoreReport:
    gold_words: int
    pred_words: int
    correct_words: int

    @property
    def precision(self):
        return self.correct_words / self.pred_words if self.pred_words else 0.0

    @property
    def recall(self):
        return self.correct_words / self.gold_words if self.gold_words else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def score(gold, pred):
    """Corpus-level precision/recall/F1 over word spans.

    `gold` and `pred` are parallel lists of segmented sentences.  Counts
    aggregate over the whole corpus before any ratio is taken.  Sentences
    must cover identical character sequences.
    """
    if len(gold) != len(pred):
        raise AlignmentError(
            "corpus size mismatch: %d gold vs %d predicted sentences" % (len(gold), len(pred))
        )
    gold_n = pred_n = correct = 0
    for i, (g, p) in enumerate(zip(gold, pred), start=1):
        g_text = "".join(g)
        p_text = "".join(p)
        if g_text != p_text:
            raise AlignmentError("character sequences differ", sentence=i)
        g_spans = set(_spans(g))
        p_spans = _spans(p)
        gold_n += len(g)
        pred_n += len(p)
        correct += sum(1 for s in p_spans if s in g_spans)
    return ScoreReport(gold_n, pred_n, correct)


def error_rate_reduction(f_base, f_new):
    """Relative reduction of segmentation error, in percent.

    Both inputs are F scores on the 0..100 scale; a baseline of 100 has no
    error left to reduce.
    """
    if not (0.0 <= f_base <= 100.0 and 0.0 <= f_new <= 100.0):
        raise ValueError("F scores must lie in [0, 100]")
    if f_base == 100.0:
        raise ValueError("baseline F of 100 leaves no error to reduce")
    return 100.0 * (f_new - f_base) / (100.0 - f_base)


def format_report(report, tsv=False):
    p = 100.0 * report.precision
    r = 100.0 * report.recall
    f = 100.0 * report.f1
    if tsv:
        header = "precision\trecall\tf1\tgold_words\tpred_words\tcorrect_words"
        row = "%.1f\t%.1f\t%.1f\t%d\t%d\t%d" % (
            p, r, f, report.gold_words, report.pred_words, report.correct_words)
        return header + "\n" + row
    return (
        "P=%.1f R=%.1f F=%.1f (gold=%d pred=%d correct=%d)"
        % (p, r, f, report.gold_words, report.pred_words, report.correct_words)
    )
