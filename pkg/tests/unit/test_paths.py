"""Test output directory preparation."""

from stokes_recon.paths import TMP_DIRNAME, prepare_workspace


def test_prepare_workspace_creates_directories(tmp_path):
    """Both directories exist and are returned as absolute paths."""
    workspace = prepare_workspace(tmp_path / "nested" / "out")
    assert set(workspace) == {"output_dir", "tmp_dir"}
    assert workspace["output_dir"].is_dir()
    assert workspace["output_dir"].is_absolute()
    assert workspace["tmp_dir"] == workspace["output_dir"] / TMP_DIRNAME
    assert workspace["tmp_dir"].is_dir()


def test_prepare_workspace_is_idempotent(tmp_path):
    """Preparing an existing directory keeps its contents."""
    first = prepare_workspace(tmp_path, keep_tmp=True)
    marker = first["output_dir"] / "report.md"
    marker.write_text("kept")
    second = prepare_workspace(tmp_path, keep_tmp=True)
    assert second == first
    assert marker.read_text() == "kept"


def test_prepare_workspace_expands_relative_paths(tmp_path, monkeypatch):
    """Relative output directories resolve against the working directory."""
    monkeypatch.chdir(tmp_path)
    workspace = prepare_workspace("results")
    assert workspace["output_dir"] == (tmp_path / "results").resolve()
