"""Command-line entry point: ``elasticlave {run,compare,verify,report}``.

Exit codes: 0 ok, 1 workload abort / property violation / checksum
divergence, 2 usage or configuration error.  The seed falls back to the
``ELCLAVE_SEED`` environment variable, then 0.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import fields, replace

from .core import Config
from .errors import WorkloadAbort
from .verifier import (
    SCENARIOS, ExplorationError, ProgramError, check_random_walk, check_spatial_emulation,
    explore, mutant_config, parse_program, scenario,
)
from .workloads import (
    BACKENDS, DATA_PATTERNS, PATTERNS, SYNC_PATTERNS, WorkloadSpec, load_spec_text,
    reports_to_csv, run_workload,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DEFAULT_SUITES = "properties,emulation,invariants"
SUITES = ("properties", "emulation", "invariants") + tuple(SCENARIOS)
REPORT_L = (1, 16, 512, 4096)

_SPEC_KEYS = {f.name for f in fields(WorkloadSpec)}
_MACHINE_KEYS = {"pmp_total", "strict_transfer_map"}
_CLI_KEYS = {"format", "jobs", "max_depth"}
_INT_KEYS = {"L", "rounds", "contention", "seed", "pmp_total", "jobs", "max_depth"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x, 0) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key=value file; flags override it")
    common.add_argument("--seed", type=int, help="all randomness derives from this (default $ELCLAVE_SEED or 0)")
    common.add_argument("--pmp-total", type=int, help="PMP entries in the simulated monitor (default 16)")
    common.add_argument("--strict-transfer-map", action="store_true", default=None,
                        help="transfer also requires the target to map the region")
    common.add_argument("--format", choices=("json", "csv", "table"),
                        help="output format (default: table on a terminal, json otherwise)")

    workload = _Parser(add_help=False)
    workload.add_argument("--pattern", help=f"one of {', '.join(PATTERNS)}")
    workload.add_argument("--L", type=_int_list, help="payload size in words (compare/report accept a list)")
    workload.add_argument("--rounds", type=int)
    workload.add_argument("--contention", type=int, help="ticks the lock holder spends in its critical section")

    parser = _Parser(prog="elasticlave", description="Enclave memory-sharing model and evaluation harness.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    run = sub.add_parser("run", parents=[common, workload], help="run one workload on one backend")
    run.add_argument("--backend", help=f"one of {', '.join(BACKENDS)}")

    sub.add_parser("compare", parents=[common, workload], help="run a workload on every backend")

    verify = sub.add_parser("verify", parents=[common], help="run verifier suites")
    verify.add_argument("--suite", default=None,
                        help=f"comma-separated suites from {', '.join(SUITES)} (default {DEFAULT_SUITES})")
    verify.add_argument("--program", action="append", default=[], help="extra program file to explore")
    verify.add_argument("--jobs", type=int, help="worker processes for exploration")
    verify.add_argument("--max-depth", type=int, help="override every program's depth bound")
    verify.add_argument("--mutant", action="store_true", help="disable the lock check in change")

    report = sub.add_parser("report", parents=[common, workload], help="sharing-overhead sweep over patterns and backends")
    report.add_argument("--backend", help="restrict to one backend")
    return parser


def _settings(args: argparse.Namespace) -> dict:
    """Merge config file, environment and flags; flags win."""
    merged: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = load_spec_text(fh.read())
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        except ValueError as exc:
            raise UsageError(f"config: {exc}") from None
        unknown = set(raw) - _SPEC_KEYS - _MACHINE_KEYS - _CLI_KEYS
        if unknown:
            raise UsageError(f"config: unknown keys {', '.join(sorted(unknown))}")
        for key, value in raw.items():
            if key in _INT_KEYS:
                try:
                    merged[key] = int(value, 0)
                except ValueError:
                    raise UsageError(f"config: {key} must be an integer, got {value!r}") from None
            elif key == "strict_transfer_map":
                merged[key] = _bool(value)
            else:
                merged[key] = value
        if "L" in merged:
            merged["L"] = [merged["L"]]
    if "seed" not in merged and os.environ.get("ELCLAVE_SEED"):
        try:
            merged["seed"] = int(os.environ["ELCLAVE_SEED"], 0)
        except ValueError:
            raise UsageError("ELCLAVE_SEED must be an integer") from None
    for key in ("seed", "pmp_total", "strict_transfer_map", "format", "pattern", "L", "rounds",
                "contention", "backend", "jobs", "max_depth"):
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _machine(cfg: dict) -> Config:
    base = Config()
    if "pmp_total" in cfg:
        if cfg["pmp_total"] < 2:
            raise UsageError("--pmp-total must be at least 2")
        base = replace(base, pmp_total=cfg["pmp_total"])
    if cfg.get("strict_transfer_map"):
        base = replace(base, strict_transfer_map=True)
    return base


def _spec(cfg: dict, L: int, **override) -> WorkloadSpec:
    values = {k: cfg[k] for k in ("pattern", "rounds", "contention", "seed", "backend") if k in cfg}
    values.update(override)
    try:
        return WorkloadSpec(L=L, **values)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _format(cfg: dict) -> str:
    return cfg.get("format") or ("table" if sys.stdout.isatty() else "json")


def _table(rows: list[dict]) -> str:
    if not rows:
        return ""
    header: list[str] = []
    for row in rows:
        header += [k for k in row if k not in header]
    cells = [[_cell(row.get(h, "")) for h in header] for row in rows]
    widths = [max(len(h), *(len(c[i]) for c in cells)) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in cells]
    return "\n".join(line.rstrip() for line in lines) + "\n"


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def _emit_reports(reports, fmt: str, extra_rows: list[dict] | None = None) -> None:
    if fmt == "json":
        payload = [r.to_dict() for r in reports]
        if extra_rows is not None:
            payload = {"reports": payload, "summary": extra_rows}
        elif len(payload) == 1:
            payload = payload[0]
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    elif fmt == "csv":
        sys.stdout.write(reports_to_csv(reports))
        if extra_rows:
            sys.stdout.write("\n" + _csv(extra_rows))
    else:
        sys.stdout.write(_table([r.csv_row() for r in reports]))
        if extra_rows:
            sys.stdout.write("\n" + _table(extra_rows))


def _csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def cmd_run(cfg: dict) -> int:
    Ls = cfg.get("L", [16])
    if len(Ls) != 1:
        raise UsageError("run takes a single --L")
    spec = _spec(cfg, Ls[0])
    try:
        report = run_workload(spec, _machine(cfg))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _emit_reports([report], _format(cfg))
    return EXIT_OK


def _compare_one(cfg: dict, L: int, machine: Config):
    base = _spec(cfg, L)
    backends = [b for b in BACKENDS if not (base.pattern in SYNC_PATTERNS and b == "elasticlave_nolock")]
    reports = [run_workload(replace(base, backend=b), machine) for b in backends]
    by = {r.spec.backend: r for r in reports}
    full, sp = by["elasticlave"], by["spatial"]
    instr = full.counters.instructions
    row = {
        "pattern": base.pattern, "L": L, "rounds": base.rounds,
        "spatial_copies": sp.counters.copies,
        "elasticlave_copies": full.counters.copies,
        "elasticlave_instructions": instr,
        "spatial_copies_per_instr": sp.counters.copies / instr if instr else 0.0,
        "checksums_equal": len({r.checksum for r in reports}) == 1,
    }
    if "elasticlave_nolock" in by:
        row["nolock_copies"] = by["elasticlave_nolock"].counters.copies
    return reports, row


def cmd_compare(cfg: dict) -> int:
    machine = _machine(cfg)
    all_reports, rows = [], []
    for L in cfg.get("L", [16]):
        reports, row = _compare_one(cfg, L, machine)
        all_reports += reports
        rows.append(row)
    _emit_reports(all_reports, _format(cfg), rows)
    bad = [r for r in rows if not r["checksums_equal"]]
    for r in bad:
        print(f"checksum divergence: {r['pattern']} L={r['L']}", file=sys.stderr)
    return EXIT_FAIL if bad else EXIT_OK


def cmd_report(cfg: dict) -> int:
    machine = _machine(cfg)
    patterns = [cfg["pattern"]] if "pattern" in cfg else list(DATA_PATTERNS)
    backends = [cfg["backend"]] if "backend" in cfg else list(BACKENDS)
    reports = []
    for pattern in patterns:
        for L in cfg.get("L", list(REPORT_L)):
            for backend in backends:
                reports.append(run_workload(_spec(cfg, L, pattern=pattern, backend=backend), machine))
    _emit_reports(reports, _format(cfg))
    return EXIT_OK


def _run_suite(name: str, cfg: dict, machine: Config) -> dict:
    seed = cfg.get("seed", 0)
    if name == "emulation":
        bad = [r for s in range(100) if not (r := check_spatial_emulation(seed + s, 200)).ok]
        return {"suite": name, "status": "fail" if bad else "pass", "checked": 100,
                "failures": [m for r in bad for m in r.mismatches[:3]]}
    if name == "invariants":
        problems = [p for s in range(50) for p in check_random_walk(seed + s, 50, machine)]
        return {"suite": name, "status": "fail" if problems else "pass", "checked": 50,
                "failures": problems[:10]}
    names = list(SCENARIOS) if name == "properties" else [name]
    verdicts = []
    for n in names:
        prog = scenario(n) if n in SCENARIOS else _load_program(n)
        if cfg.get("max_depth") is not None:
            prog.max_depth = cfg["max_depth"]
        verdicts.append(explore(prog, machine, jobs=cfg.get("jobs") or 1))
    status = "fail" if any(v.status == "fail" for v in verdicts) else "pass"
    return {"suite": name, "status": status, "verdicts": [v.to_dict() for v in verdicts]}


def _load_program(path: str):
    try:
        with open(path) as fh:
            return parse_program(fh.read(), name=path)
    except OSError as exc:
        raise UsageError(f"cannot read program: {exc}") from None


def cmd_verify(cfg: dict, args: argparse.Namespace) -> int:
    raw = DEFAULT_SUITES if args.suite is None else args.suite
    suites = [s.strip() for s in raw.split(",") if s.strip()]
    for s in suites:
        if s not in SUITES:
            raise UsageError(f"unknown suite {s!r}; choose from {', '.join(SUITES)}")
    programs = list(args.program)
    if not suites and not programs:
        raise UsageError("empty suite list")
    machine = _machine(cfg)
    if args.mutant:
        machine = mutant_config(machine)
    try:
        results = [_run_suite(s, cfg, machine) for s in suites]
        results += [_run_suite(p, cfg, machine) for p in programs]
    except (ProgramError, ExplorationError) as exc:
        raise UsageError(str(exc)) from None
    fmt = _format(cfg)
    if fmt == "json":
        sys.stdout.write(json.dumps(results, indent=2, sort_keys=True) + "\n")
    else:
        rows = []
        for r in results:
            for v in r.get("verdicts", [{}]):
                rows.append({"suite": r["suite"], "program": v.get("name", ""), "status": v.get("status", r["status"]),
                             "states": v.get("states_explored", r.get("checked", "")),
                             "violations": len(v.get("violations", r.get("failures", [])))})
        sys.stdout.write(_csv(rows) if fmt == "csv" else _table(rows))
        for r in results:
            for v in r.get("verdicts", []):
                for viol in v["violations"][:1]:
                    print(f"# {v['name']}: {viol['invariant']}: {viol['detail']}", file=sys.stderr)
                    print("\n".join(viol["trace"]), file=sys.stderr)
    return EXIT_FAIL if any(r["status"] == "fail" for r in results) else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _settings(args)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "compare":
            return cmd_compare(cfg)
        if args.command == "report":
            return cmd_report(cfg)
        return cmd_verify(cfg, args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except WorkloadAbort as exc:
        print(f"workload aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
