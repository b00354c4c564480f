from ._finetune import (
    ALLOWED_FRACTIONS,
    DiceResult,
    FinetuneConfig,
    FinetuneRun,
    RunAggregate,
    SegmentationDataset,
    aggregate_runs,
    dice_score,
    evaluate_cases,
    finetune,
    load_segmentation_model,
    predict_volume,
    select_training_subset,
    summarize_dice,
    write_dice_table,
    write_runs_table,
)

__all__ = [
    "ALLOWED_FRACTIONS",
    "DiceResult",
    "FinetuneConfig",
    "FinetuneRun",
    "RunAggregate",
    "SegmentationDataset",
    "aggregate_runs",
    "dice_score",
    "evaluate_cases",
    "finetune",
    "load_segmentation_model",
    "predict_volume",
    "select_training_subset",
    "summarize_dice",
    "write_dice_table",
    "write_runs_table",
]
