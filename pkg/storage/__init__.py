"""
Storage package: field containers and run artifacts
"""

from .field_io import field_slice_frame, read_field, write_field, write_field_slice
from .run_ledger import RunLedger, log_run_history, to_jsonable

__all__ = [
    'field_slice_frame',
    'read_field',
    'write_field',
    'write_field_slice',
    'RunLedger',
    'log_run_history',
    'to_jsonable'
]
