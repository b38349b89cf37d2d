"""
Verification script for cfhet
Checks imports, configuration, presets and a small end-to-end fit
Run this after installation to verify everything is set up correctly.
"""

import sys
from pathlib import Path

# Add project root to path
project_root = Path(__file__).parent.absolute()
sys.path.insert(0, str(project_root))

errors = []
warnings = []
passed = []


def check(name, func):
    """Run a check and track results"""
    try:
        result = func()
        if result:
            passed.append(name)
            print(f"[OK] {name}: PASSED")
        else:
            warnings.append(name)
            print(f"[!] {name}: WARNING")
    except Exception as e:
        errors.append((name, str(e)))
        print(f"[FAIL] {name}: FAILED - {e}")


# Check 1: Third-party packages
def check_packages():
    missing = []
    for module in ("numpy", "scipy", "pandas", "tabulate", "tqdm", "dotenv"):
        try:
            __import__(module)
        except ImportError:
            missing.append(module)
    if missing:
        raise Exception(f"missing packages: {', '.join(missing)}")
    return True


# Check 2: Configuration File
def check_config():
    import config
    for name in ("RANK_TOLERANCE", "DEFAULT_REPLICATIONS", "SIMULATION_PRESETS", "LOG_FORMAT"):
        assert hasattr(config, name), f"config.{name} missing"
    return True


# Check 3: Estimation package
def check_modules():
    from estimation import cli, exceptions, models  # noqa: F401
    from estimation.services import baseline, control_function, inference, linalg, simulation, skedastic  # noqa: F401
    from estimation.commands import fit_commands, oracle_commands, simulate_commands  # noqa: F401
    from utils import read_dataset, substream  # noqa: F401
    return True


# Check 4: Simulation presets
def check_presets():
    from estimation.models import TableConfig
    presets = TableConfig.load_presets()
    expected = {"table1", "table2", "table3", "table4"}
    if set(presets) != expected:
        raise Exception(f"expected presets {sorted(expected)}, found {sorted(presets)}")
    return all(len(p.cells()) == 12 for p in presets.values())


# Check 5: CF with V alone reproduces 2SLS
def check_smoke_fit():
    from estimation.models import CfModel, McConfig
    from estimation.services.baseline import fit_2sls
    from estimation.services.control_function import fit_cf
    from estimation.services.simulation import simulate_dgp

    data = simulate_dgp(McConfig(n=500, replications=1, delta1=1.0, seed=1), 0)
    cf = fit_cf(data, CfModel.from_name("v", skedastic="unit"))
    tsls = fit_2sls(data)
    return abs(cf.alpha1 - tsls.alpha1) <= 1e-8 * max(1.0, abs(tsls.alpha1))


# Check 6: Command-line parser
def check_cli():
    from estimation.cli import build_parser
    parser = build_parser()
    args = parser.parse_args(["simulate", "--preset", "table1", "--replications", "2"])
    return args.command == "simulate"


def main():
    print("=" * 70)
    print("CFHET - SETUP VERIFICATION")
    print("=" * 70)
    print("This script verifies your installation is complete and ready to run.\n")

    check("Python Packages", check_packages)
    check("Configuration File", check_config)
    check("Estimation Modules", check_modules)
    check("Simulation Presets", check_presets)
    check("CF / 2SLS Smoke Fit", check_smoke_fit)
    check("Command Line", check_cli)

    print("\n" + "=" * 70)
    print("VERIFICATION SUMMARY")
    print("=" * 70)
    print(f"[OK] Passed: {len(passed)}")
    print(f"[!] Warnings: {len(warnings)}")
    print(f"[FAIL] Errors: {len(errors)}")
    print("=" * 70)

    if errors:
        print("\n[ERROR] ERRORS FOUND:")
        for name, error in errors:
            print(f"   {name}: {error}")
        print("\n[!] Please fix errors before running the toolkit.")
        return 1
    if warnings:
        print("\n[!] WARNINGS:")
        for warning in warnings:
            print(f"   {warning}")
        print("\n[OK] The toolkit should work, but review warnings.")
        return 0
    print("\n[SUCCESS] ALL CHECKS PASSED!")
    print("\n[INFO] Try:")
    print("   python run.py simulate --preset table1 --replications 10")
    print("   python run.py bias-oracle --delta2 0.2 --draws 1000000")
    return 0


if __name__ == "__main__":
    sys.exit(main())
