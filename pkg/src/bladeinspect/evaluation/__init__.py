from .agreement import Agreement, fisher_ci, pearson_agreement, pearson_r
from .grounding import ComplianceRate, HallucinationRates, hallucination_rates, is_compliant, pcr, shares_ngram
from .judge import (
    JudgeError,
    JudgeParseError,
    JudgeRangeError,
    JudgeScores,
    judge_batch,
    judge_report,
    judge_rubric,
    parse_judge_reply,
)
from .recall import EquivalenceDictionary, EquivalenceError, RecallResult, per_class_recall
from .scores import EvalScores, RunDocument, csv_text
from .text_metrics import bleu4, lcs_length, rouge_l
