"""Shared fixtures: the acceptance suite runs a few heavy bundles once."""

from __future__ import annotations

from pathlib import Path

import pytest

from seqedit.config import RunConfig, load_config
from seqedit.harness import compare_regimes, fit_run, load_manifest, run_sequence

REPO_ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = REPO_ROOT / "configs"


def config_path(name: str) -> Path:
    return CONFIG_DIR / name


@pytest.fixture(scope="session")
def divergent_cfg() -> RunConfig:
    return load_config(config_path("divergent.toml"))


@pytest.fixture(scope="session")
def paired_bundle(tmp_path_factory, divergent_cfg):
    """Vanilla vs anchored paired runs of the default divergent config."""
    out = tmp_path_factory.mktemp("paired")
    comparison = compare_regimes(divergent_cfg, out / "cmp")
    return {
        "dir": out / "cmp",
        "comparison": comparison,
        "vanilla_fit": fit_run(out / "cmp" / "vanilla"),
        "nas_fit": fit_run(out / "cmp" / "nas"),
        "config": divergent_cfg,
    }


@pytest.fixture(scope="session")
def iso_long_bundle(tmp_path_factory):
    """3 seeds x 5000 edits, C = I, debug profile (constraint checked every edit)."""
    cfg = load_config(config_path("divergent_long.toml"))
    out = tmp_path_factory.mktemp("iso_long") / "run"
    manifest = run_sequence(cfg, out)
    return {"dir": out, "manifest": manifest, "config": cfg}


@pytest.fixture(scope="session")
def aniso_long_bundle(tmp_path_factory):
    """3 seeds x 5000 edits, anisotropic C with condition number 10."""
    cfg = load_config(config_path("anisotropic_long.toml"))
    out = tmp_path_factory.mktemp("aniso_long") / "run"
    manifest = run_sequence(cfg, out)
    return {"dir": out, "manifest": manifest, "config": cfg}
