"""Command-line front end.

    ugc-equilibria solve    --config game.json [--out result.json] [--all]
    ugc-equilibria verify   --config game.json --profile result.json
    ugc-equilibria curve    --config game.json --out curve.csv [--grid 4096]
    ugc-equilibria dynamics --config game.json --out trajectory.csv [--epsilon 1e-8]
    ugc-equilibria oracle   --config game.json [--step 0.05]

Exit codes: 0 certified result, 1 no equilibrium, 2 bad config or usage,
3 certification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import fullinfo, partialinfo, verify
from .core import ActionProfile, ConfigError, GameConfig, Mechanism, TypeDistribution, validate_profile
from .plotting import render_curve_svg

EXIT_OK, EXIT_NONE, EXIT_CONFIG, EXIT_UNCERTIFIED = 0, 1, 2, 3
_KNOWN_FIELDS = {"mechanism", "N", "R", "K", "c", "types", "distribution", "sort"}


def config_from_dict(doc) -> GameConfig:
    """Build a GameConfig from a parsed JSON document, raising ConfigError on bad fields."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    unknown = set(doc) - _KNOWN_FIELDS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    for name in ("mechanism", "N", "R", "c"):
        if name not in doc:
            raise ConfigError(name, "missing")

    types = doc.get("types")
    if types is not None:
        if not isinstance(types, list):
            raise ConfigError("types", "must be a list of numbers")
        try:
            types = [float(q) for q in types]
        except (TypeError, ValueError):
            raise ConfigError("types", "must be a list of numbers") from None
        if doc.get("sort", False):
            types.sort(reverse=True)

    dist = doc.get("distribution")
    if dist is not None:
        if not isinstance(dist, dict) or dist.get("kind") not in ("uniform", "piecewise"):
            raise ConfigError("distribution", 'kind must be "uniform" or "piecewise"')
        if dist["kind"] == "uniform":
            dist = TypeDistribution.uniform()
        else:
            try:
                dist = TypeDistribution.piecewise(dist.get("knots"))
            except ConfigError:
                raise
            except (TypeError, ValueError) as err:
                raise ConfigError("distribution", f"bad knots: {err}") from None

    mech = doc["mechanism"]
    if isinstance(mech, str) and mech in Mechanism.__members__:
        mech = Mechanism[mech]
    return GameConfig(mech, doc["N"], doc["R"], doc["c"], top_k=doc.get("K"),
                      types=types, distribution=dist)


def parse_config(path) -> GameConfig:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError("--config", f"cannot read {path}: {err.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError("<root>", f"malformed JSON: {err}") from None
    return config_from_dict(doc)


def _dump(doc, out):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _warn(msg):
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# partial-information helpers
# ---------------------------------------------------------------------------

def _solve_partial(cfg, args):
    if cfg.mechanism is Mechanism.M6:
        return partialinfo.calibrate_beta(cfg, args.grid)
    if cfg.mechanism is Mechanism.M7:
        return partialinfo.solve_m7(cfg, args.mc_samples, args.seed)
    return partialinfo.solve_m5(cfg)


def _mc_report(strategy, cfg, args):
    return verify.mc_symmetric_check(strategy, cfg, samples=args.mc_samples, seed=args.seed)


def _strategy_from_doc(doc, cfg, args):
    if cfg.mechanism is Mechanism.M6:
        if "segments" not in doc:
            raise ConfigError("--profile", "expected a strategy document with segments")
        return partialinfo.strategy_from_segments(cfg, doc["segments"], args.grid, doc.get("flags", ()))
    if "threshold" not in doc:
        raise ConfigError("--profile", "expected a document with a threshold")
    return partialinfo.CutoffEquilibrium(cfg.mechanism, float(doc["threshold"]), float("nan"))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_solve(cfg, args) -> int:
    if cfg.mechanism.full_information:
        try:
            if cfg.mechanism is Mechanism.M2:
                outcome = fullinfo.solve_m2(cfg, confirm=args.confirm, step=args.step)
            else:
                outcome = fullinfo.solve(cfg, all_equilibria=args.all)
        except fullinfo.EquilibriumSearchError as err:
            _warn(f"certification failed: {err}")
            return EXIT_UNCERTIFIED
        doc = {"config": cfg.to_dict(), "result": outcome.to_dict()}
        _dump(doc, args.out)
        return EXIT_NONE if outcome.verdict is fullinfo.Verdict.NONE else EXIT_OK

    strategy = _solve_partial(cfg, args)
    report = _mc_report(strategy, cfg, args)
    result = strategy.to_dict()
    doc = {"config": cfg.to_dict(), "result": result, "certificate": report.to_dict()}
    _dump(doc, args.out)
    if isinstance(strategy, partialinfo.SymmetricStrategy) and strategy.invariant_violations():
        _warn("strategy invariants violated: " + "; ".join(strategy.invariant_violations()))
        return EXIT_UNCERTIFIED
    if not report.is_equilibrium:
        _warn(f"Monte Carlo check found a profitable deviation: gain {report.gain:.3g}")
        return EXIT_UNCERTIFIED
    return EXIT_OK


def _read_profiles(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError("--profile", f"cannot read a JSON profile from {path}: {err}") from None
    if isinstance(doc, dict) and "result" in doc:
        doc = doc["result"]
    return doc


def cmd_verify(cfg, args) -> int:
    if args.profile is None:
        raise ConfigError("--profile", "required for verify")
    doc = _read_profiles(args.profile)
    if not cfg.mechanism.full_information:
        if not isinstance(doc, dict):
            raise ConfigError("--profile", "expected a strategy document")
        report = _mc_report(_strategy_from_doc(doc, cfg, args), cfg, args)
        _dump({"reports": [report.to_dict()]}, args.out)
        return EXIT_OK if report.is_equilibrium else EXIT_UNCERTIFIED

    if isinstance(doc, dict):
        doc = doc.get("profiles", [])
    if doc and not isinstance(doc[0], list):
        doc = [doc]
    reports = []
    for actions in doc:
        try:
            profile = ActionProfile(tuple(float(a) for a in actions))
        except (TypeError, ValueError):
            raise ConfigError("--profile", "profiles must be lists of numbers") from None
        check = validate_profile(profile, cfg)
        if not check.ok:
            raise ConfigError("--profile", f"invalid profile {list(actions)}: {check.violations}")
        reports.append(verify.verify_pne(profile, cfg, args.tol))
    if not reports:
        raise ConfigError("--profile", "no profiles to verify")
    _dump({"reports": [r.to_dict() for r in reports]}, args.out)
    return EXIT_OK if all(r.is_equilibrium for r in reports) else EXIT_UNCERTIFIED


def cmd_curve(cfg, args) -> int:
    if cfg.mechanism is not Mechanism.M6:
        raise ConfigError("mechanism", "curve needs an M6 config")
    if args.out is None:
        raise ConfigError("--out", "curve needs an output CSV path")
    strategy = partialinfo.calibrate_beta(cfg, args.grid)
    xs, values, kinds = strategy.grid
    out = Path(args.out)
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "beta_star", "segment_kind"])
        for x, v, k in zip(xs, values, kinds):
            writer.writerow([repr(float(x)), repr(float(v)), k])
    svg = render_curve_svg(xs, values, kinds, out.with_suffix(".svg"),
                           title=f"N={cfg.n_users}, K={cfg.top_k}, R={cfg.reward:g}, c={cfg.cost:g}")
    for flag in strategy.flags:
        _warn(f"note: {flag}")
    _warn(f"wrote {out} and {svg}")
    bad = strategy.invariant_violations()
    if bad:
        _warn("strategy invariants violated: " + "; ".join(bad))
        return EXIT_UNCERTIFIED
    return EXIT_OK


def cmd_dynamics(cfg, args) -> int:
    if cfg.mechanism is not Mechanism.M4:
        raise ConfigError("mechanism", "dynamics needs an M4 config")
    if cfg.n_users == 1:
        _warn("a single user has no best response against an empty field")
        return EXIT_NONE
    try:
        result = fullinfo.perturbed_dynamics(cfg, epsilon=args.epsilon, max_iters=args.max_iters)
    except ValueError as err:
        raise ConfigError("--epsilon", str(err)) from None
    header = ["iteration"] + [f"x{i}" for i in range(cfg.n_users)]
    rows = [[str(it)] + [repr(float(v)) for v in x] for it, x in enumerate(result.history)]
    text = "\n".join(",".join(r) for r in [header] + rows) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    _warn(f"converged={result.converged} iterations={result.iterations} damping={result.damping}")
    return EXIT_OK if result.converged else EXIT_UNCERTIFIED


def cmd_oracle(cfg, args) -> int:
    mech = cfg.mechanism
    if mech.full_information and mech.binary:
        try:
            profiles = verify.enumerate_binary_equilibria(cfg)
        except ValueError as err:
            raise ConfigError("N", str(err)) from None
        _dump({"config": cfg.to_dict(), "method": "subset-enum",
               "equilibria": [list(p.actions) for p in profiles]}, args.out)
        return EXIT_OK if profiles else EXIT_NONE
    if mech.full_information:
        try:
            scan = verify.grid_nonexistence_scan(cfg, step=args.step)
        except ValueError as err:
            raise ConfigError("N", str(err)) from None
        _dump({"config": cfg.to_dict(), "method": "grid", "scan": scan.to_dict()}, args.out)
        return EXIT_NONE if scan.no_equilibrium else EXIT_OK
    strategy = _solve_partial(cfg, args)
    report = _mc_report(strategy, cfg, args)
    _dump({"config": cfg.to_dict(), "method": "monte-carlo", "report": report.to_dict()}, args.out)
    return EXIT_OK if report.is_equilibrium else EXIT_UNCERTIFIED


COMMANDS = {
    "solve": cmd_solve,
    "verify": cmd_verify,
    "curve": cmd_curve,
    "dynamics": cmd_dynamics,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ugc-equilibria",
        description="Solve and certify pure Nash equilibria of content-reward mechanisms.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON game config")
    parser.add_argument("--out", help="output path (JSON or CSV); stdout if omitted")
    parser.add_argument("--seed", type=int, default=0, help="Monte Carlo seed")
    parser.add_argument("--mc-samples", type=int, default=200_000)
    parser.add_argument("--tol", type=float, default=None, help="deviation-gain tolerance")
    parser.add_argument("--all", action="store_true", help="list every equilibrium found")
    parser.add_argument("--grid", type=int, default=4096, help="curve grid resolution")
    parser.add_argument("--profile", help="JSON profile or solve output, for verify")
    parser.add_argument("--step", type=float, default=0.05, help="grid step of the scan oracle")
    parser.add_argument("--epsilon", type=float, default=1e-8, help="action floor for dynamics")
    parser.add_argument("--max-iters", type=int, default=10_000)
    parser.add_argument("--confirm", action="store_true", help="attach a grid scan to M2 verdicts")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.mc_samples < 2:
            raise ConfigError("--mc-samples", "must be at least 2")
        cfg = parse_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as err:
        _warn(f"config error: {err}")
        return EXIT_CONFIG
    except OSError as err:
        _warn(f"i/o error: {err}")
        return EXIT_CONFIG
    except ValueError as err:
        # solver preconditions such as the marginal regions R <= Kc
        _warn(f"rejected: {err}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
