from ._inspect import (
    TABLE_COLUMNS,
    TargetInspection,
    edge_map,
    inspect_targets,
    parse_crop_spec,
    parse_transform,
    plot_targets,
    write_edges,
    write_targets_table,
)

__all__ = [
    "TABLE_COLUMNS",
    "TargetInspection",
    "edge_map",
    "inspect_targets",
    "parse_crop_spec",
    "parse_transform",
    "plot_targets",
    "write_edges",
    "write_targets_table",
]
