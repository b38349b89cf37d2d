"""
Utilities module for cfhet
"""

from .file_handler import (
    ensure_directory,
    read_dataset,
    write_dataset,
    format_table,
    write_report,
    report_json,
    load_json_config,
    split_list,
)
from .random_streams import (
    TAG_Z,
    TAG_V,
    TAG_U,
    TAG_BOOTSTRAP,
    TAG_ORACLE,
    substream,
    resolve_seed,
)

__all__ = [
    'ensure_directory',
    'read_dataset',
    'write_dataset',
    'format_table',
    'write_report',
    'report_json',
    'load_json_config',
    'split_list',
    'TAG_Z',
    'TAG_V',
    'TAG_U',
    'TAG_BOOTSTRAP',
    'TAG_ORACLE',
    'substream',
    'resolve_seed',
]
