"""Resolution of the output directory and its scratch sub-directory.

Every CLI command writes its reports into an explicit ``output_dir``.
Scratch files (Matrix Market dumps) go to ``<output_dir>/.sr_tmp`` unless
that cannot be created (read-only share), in which case a system temporary
directory is used.  The scratch directory is removed at interpreter exit
unless ``keep_tmp`` is set and it lives inside ``output_dir``.
"""
from __future__ import annotations

import atexit
import errno
import logging
import shutil
import tempfile
from pathlib import Path
from typing import Dict

logger = logging.getLogger(__name__)

__all__ = ["prepare_workspace", "TMP_DIRNAME"]

TMP_DIRNAME = ".sr_tmp"


def prepare_workspace(output_dir: str | Path, *, keep_tmp: bool = False) -> Dict[str, Path]:
    """Create ``output_dir`` and a scratch directory, registering cleanup.

    Returns
    -------
    dict with keys ``output_dir`` and ``tmp_dir``: absolute paths of the
    two directories.
    """
    out_path = Path(output_dir).expanduser().resolve()
    out_path.mkdir(parents=True, exist_ok=True)

    proposed_tmp = out_path / TMP_DIRNAME
    use_fallback = False
    try:
        proposed_tmp.mkdir(parents=True, exist_ok=True)
    except OSError as exc:  # permission denied, read-only FS
        if exc.errno not in (errno.EACCES, errno.EROFS):
            raise
        use_fallback = True

    if use_fallback:
        tmp_path = Path(tempfile.mkdtemp(prefix="stokesrec_tmp_"))
        logger.warning("Cannot create %s; using %s for scratch files", proposed_tmp, tmp_path)
    else:
        tmp_path = proposed_tmp

    should_cleanup = not keep_tmp or use_fallback

    def _cleanup() -> None:
        try:
            if should_cleanup and tmp_path.exists():
                shutil.rmtree(tmp_path, ignore_errors=True)
        except Exception:
            pass

    atexit.register(_cleanup)
    return {"output_dir": out_path, "tmp_dir": tmp_path}
