"""Python access to the mtkd transducer losses, sampling, schedules, archives and CLI."""

from ._core import (
    ArchiveError,
    BadMagicError,
    DimensionMismatchError,
    Error,
    TrailingDataError,
    TruncatedArchiveError,
    VersionMismatchError,
    brute_force_loss,
    collapsed_kd,
    final_loss,
    full_lattice_kd,
    nbest_kd,
    one_best_alignment,
    one_best_kd,
    read_archive,
    rnnt_loss,
    run,
    similarity_probs,
    tri_stage_lr,
    uniform_probs,
    wer_probs,
    write_archive,
)

__all__ = [
    "ArchiveError",
    "BadMagicError",
    "DimensionMismatchError",
    "Error",
    "TrailingDataError",
    "TruncatedArchiveError",
    "VersionMismatchError",
    "brute_force_loss",
    "collapsed_kd",
    "final_loss",
    "full_lattice_kd",
    "nbest_kd",
    "one_best_alignment",
    "one_best_kd",
    "read_archive",
    "rnnt_loss",
    "run",
    "similarity_probs",
    "tri_stage_lr",
    "uniform_probs",
    "wer_probs",
    "write_archive",
]
