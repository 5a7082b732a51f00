from .align import (
    AlignmentSet,
    LexicalTable,
    align,
    grow_diag_final_and,
    read_pharaoh,
    train_aligner,
    write_pharaoh,
)
from .bleu import bleu
from .homograph import (
    HomographReport,
    SenseDictionary,
    TranslationPair,
    bootstrap_compare,
    sense_bucket_report,
    word_translation_f1,
)

__all__ = [
    "AlignmentSet",
    "HomographReport",
    "LexicalTable",
    "SenseDictionary",
    "TranslationPair",
    "align",
    "bleu",
    "bootstrap_compare",
    "grow_diag_final_and",
    "read_pharaoh",
    "sense_bucket_report",
    "train_aligner",
    "word_translation_f1",
    "write_pharaoh",
]
