from ._ablation import (
    DEFAULT_CELLS,
    TABLE_NAME,
    AblationCell,
    AblationRow,
    format_ablation_table,
    run_ablation,
    write_ablation_table,
)

__all__ = [
    "DEFAULT_CELLS",
    "TABLE_NAME",
    "AblationCell",
    "AblationRow",
    "format_ablation_table",
    "run_ablation",
    "write_ablation_table",
]
