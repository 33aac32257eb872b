import importlib.resources as resources
from types import SimpleNamespace

import pytest

from paramest.scenarios import load_scenario, run_scenario

SCENARIO_DIR = resources.files("paramest") / "scenarios"


@pytest.fixture(scope="session")
def bundled_runs(tmp_path_factory):
    """Every bundled scenario executed twice, with CSV bytes of both runs."""
    base = tmp_path_factory.mktemp("bundled")
    results = {}
    names = sorted(f.name for f in SCENARIO_DIR.iterdir() if f.name.endswith(".toml"))
    for name in names:
        sc = load_scenario(str(SCENARIO_DIR / name))
        report, columns = run_scenario(sc, out_dir=str(base / "first"))
        sc2 = load_scenario(str(SCENARIO_DIR / name))
        report2, _ = run_scenario(sc2, out_dir=str(base / "second"))
        results[sc.name] = SimpleNamespace(
            scenario=sc,
            report=report,
            columns=columns,
            csv_a=open(report.csv_path, "rb").read(),
            csv_b=open(report2.csv_path, "rb").read(),
        )
    return results
