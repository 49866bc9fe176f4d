"""Batch experiment runner: simulate | exponents | verify | certify | transfer-scan | parseval.

Configuration comes from an optional JSON document plus command-line
overrides.  Every output file embeds the resolved scientific configuration,
and identical configurations produce byte-identical outputs regardless of
thread count (results are gathered in deterministic order).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import resolvent as res
from . import transfer, walk
from .substitution import (
    FIBONACCI,
    THUE_MORSE,
    CoinAngles,
    ResourceCapError,
    SubshiftWindow,
    SubstitutionRule,
    fixed_point_prefix,
)

SEQUENCE_CHOICES = "thue-morse | fibonacci | periodic:<q> | constant | shift | identity"

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_BAD_ARGS = 2
EXIT_RESOURCE = 3


@dataclass
class ExperimentConfig:
    theta: float = math.pi / 3
    phi: float = math.pi / 5
    sequence: str = "thue-morse"
    offset: int = 0
    p_values: list[float] = field(default_factory=lambda: [2.0, 4.0])
    L_start: float = 25.0
    L_ratio: float = 2.0
    L_count: int = 5
    l_max: int | None = None
    tail_tol: float = 1e-8
    moment_tail_tol: float = 1e-12
    solver_tol: float = 1e-10
    parseval_tail_tol: float = 1e-14
    parseval_nodes: int | None = None
    certificate_nodes: int = 33
    scan_max_span: int = 4096
    scan_offsets: list[int] = field(default_factory=lambda: list(range(8)))
    scan_epsilons: list[float] = field(default_factory=lambda: [0.1, 0.05, 0.02, 0.01])
    scan_z_samples: int = 16
    annulus_L_factor: float = 4.0
    parseval_targets: list[int] = field(default_factory=lambda: [0, 1, 2, 5])
    parseval_L: list[float] = field(default_factory=lambda: [5.0, 10.0, 20.0])
    corrupt_coin_site: int | None = None

    def validate(self) -> None:
        kind, q = parse_sequence(self.sequence)
        if self.offset < 0:
            raise ValueError("offset must be nonnegative")
        if self.L_count < 1 or self.L_start <= 0 or self.L_ratio <= 1:
            raise ValueError("L grid needs L_start > 0, L_ratio > 1, L_count >= 1")
        if any(p <= 0 for p in self.p_values):
            raise ValueError("p values must be positive")
        if kind in ("thue-morse", "fibonacci", "periodic"):
            CoinAngles(self.theta, self.phi)  # both strictly inside (0, pi/2)
        elif kind == "constant":
            if not 0.0 <= self.phi < math.pi / 2:
                raise ValueError("constant sequence needs phi in [0, pi/2)")

    def L_values(self) -> list[float]:
        return [self.L_start * self.L_ratio ** k for k in range(self.L_count)]

    def resolved(self) -> dict:
        """Scientific parameters only; execution details (threads, paths) are
        excluded so outputs are comparable across runs."""
        out = dataclasses.asdict(self)
        return {k: out[k] for k in sorted(out)}


def parse_sequence(spec: str) -> tuple[str, int]:
    if spec in ("thue-morse", "fibonacci", "constant", "shift", "identity"):
        return spec, 0
    if spec.startswith("periodic:"):
        try:
            q = int(spec.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad periodic sequence spec {spec!r}") from None
        if q < 1:
            raise ValueError("periodic period must be >= 1")
        return "periodic", q
    raise ValueError(f"unknown sequence {spec!r} (choices: {SEQUENCE_CHOICES})")


def pattern_window(cfg: ExperimentConfig, n_lo: int, n_hi: int) -> SubshiftWindow | None:
    """Coin symbol window over [n_lo, n_hi]; None when no coins act.

    For substitution sequences the experiment offset anchors the left edge of
    the window inside the one-sided fixed point: the coin at site n reads
    symbol ``offset + (n - n_lo)``.
    """
    kind, q = parse_sequence(cfg.sequence)
    span = n_hi - n_lo + 1
    if kind in ("thue-morse", "fibonacci"):
        rule = THUE_MORSE if kind == "thue-morse" else FIBONACCI
        prefix = fixed_point_prefix(rule, cfg.offset + span)
        symbols = prefix[cfg.offset: cfg.offset + span]
    elif kind == "periodic":
        tile = fixed_point_prefix(THUE_MORSE, q)[:q]
        reps = -(-span // q) + 1
        symbols = (tile * reps)[cfg.offset % q: cfg.offset % q + span]
    elif kind == "constant":
        symbols = "0" * span
    else:
        return None
    return SubshiftWindow(offset=-n_lo, n_min=n_lo, n_max=n_hi, symbols=symbols)


def make_bank(cfg: ExperimentConfig, radius: int) -> walk.CoinBank | None:
    """Coin bank on [-radius, radius] for the configured sequence; None for
    the identity-operator baseline."""
    kind, _ = parse_sequence(cfg.sequence)
    if kind == "identity":
        return None
    if kind == "shift":
        return walk.constant_rotation_bank(-radius, radius, 0.0)
    if kind == "constant":
        return walk.constant_rotation_bank(-radius, radius, cfg.phi)
    window = pattern_window(cfg, -radius, radius)
    return walk.build_coins(window, CoinAngles(cfg.theta, cfg.phi))


def _corrupt(bank: walk.CoinBank, site: int) -> walk.CoinBank:
    """Test hook: scale one coin entry so the bank is no longer unitary."""
    mats = bank.matrices.copy()
    i = min(max(site - bank.n_min, 0), len(mats) - 1)
    mats[i, 0, 0] *= 1.01
    return walk.CoinBank.from_matrices(bank.n_min, mats, validate=False)


# ---------------------------------------------------------------------------
# output helpers

def _fmt(x: Any) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence[Any]],
              cfg: ExperimentConfig) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("# config: " + json.dumps(cfg.resolved(), sort_keys=True,
                                           separators=(",", ":")) + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_json(path: Path, payload: dict, cfg: ExperimentConfig) -> None:
    doc = dict(payload)
    doc["config"] = cfg.resolved()
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _parallel_map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    kind, _ = parse_sequence(cfg.sequence)
    l_max = cfg.l_max if cfg.l_max is not None else 32

    if kind == "identity":
        profiles = walk.identity_profiles(l_max)
    else:
        bank = make_bank(cfg, l_max + 1)
        profiles = walk.evolve(walk.WalkState.delta_plus(), bank, l_max)
    rows = []
    for p in profiles:
        for i, n in enumerate(range(p.n_min, p.n_max + 1)):
            rows.append((p.ell, n, float(p.a_plus[i]), float(p.a_minus[i]),
                         float(p.a_plus[i] + p.a_minus[i])))
    write_csv(out / "profiles.csv", ["ell", "n", "a_plus", "a_minus", "a_total"], rows, cfg)

    # time-averaged tables for the L values the evolution can certify
    L_ok = [L for L in cfg.L_values() if walk.required_l_max(L, cfg.tail_tol) <= l_max]
    skipped = [L for L in cfg.L_values() if L not in L_ok]
    if skipped:
        needed = max(walk.required_l_max(L, cfg.tail_tol) for L in skipped)
        print(f"simulate: skipping time averages for L in {skipped}: "
              f"need l_max >= {needed}", file=sys.stderr)
    avg_rows = []
    for L in L_ok:
        tap = walk.time_averaged_profile(profiles, L, tail_tol=cfg.tail_tol)
        for i, n in enumerate(range(tap.n_min, tap.n_max + 1)):
            avg_rows.append((float(L), n, float(tap.a[i])))
    write_csv(out / "time_averaged.csv", ["L", "n", "a_tilde"], avg_rows, cfg)
    return EXIT_OK


def cmd_exponents(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    if cfg.L_count < 5:
        raise ValueError("exponent estimation needs an L grid with >= 5 points")
    kind, _ = parse_sequence(cfg.sequence)
    L_values = cfg.L_values()

    if kind == "identity":
        moments = np.ones((len(cfg.p_values), len(L_values)))
    else:
        l_max = walk.required_l_max(max(L_values), cfg.moment_tail_tol)
        bank = make_bank(cfg, l_max + 1)
        moments = walk.moment_series(bank, cfg.p_values, L_values,
                                     tail_tol=cfg.moment_tail_tol)

    reports = []
    csv_rows = []
    for i, p in enumerate(cfg.p_values):
        slope, lo, hi = walk.fit_loglog_slope(L_values, moments[i], p)
        reports.append({
            "p": p, "slope": slope, "slope_local_min": lo, "slope_local_max": hi,
            "moments": [{"L": L, "moment": float(m), "log_moment": math.log(m)}
                        for L, m in zip(L_values, moments[i])],
        })
        for L, m in zip(L_values, moments[i]):
            csv_rows.append((float(L), p, float(m), math.log(m)))
    write_json(out / "exponents.json", {"reports": reports}, cfg)
    write_csv(out / "moments.csv", ["L", "p", "moment", "log_moment"], csv_rows, cfg)
    return EXIT_OK


def _verify_checks(cfg: ExperimentConfig, threads: int) -> list[dict]:
    angles = CoinAngles(cfg.theta, cfg.phi)
    checks: list[dict] = []

    def add(name: str, value: float, threshold: float, passed: bool | None = None) -> None:
        ok = (value <= threshold) if passed is None else passed
        checks.append({"name": name, "value": float(value),
                       "threshold": float(threshold), "passed": bool(ok)})

    # unitarity of the configured bank (the corruption hook lands here)
    bank = make_bank(cfg, 64)
    if bank is not None and cfg.corrupt_coin_site is not None:
        bank = _corrupt(bank, cfg.corrupt_coin_site)
    if bank is not None:
        add("coin_unitarity_defect", bank.max_unitarity_defect(), walk.UNITARITY_TOL)

    # the remaining checks exercise the method itself on the reference subshift
    resid = transfer.check_commutation_identity(angles)
    add("commutation_residual_0110", resid["residual_0110"], 1e-12)
    add("commutation_residual_1001", resid["residual_1001"], 1e-12)

    plateau_small = transfer.uniform_bound_scan(angles, 8, cfg.scan_offsets)
    plateau_large = transfer.uniform_bound_scan(angles, cfg.scan_max_span, cfg.scan_offsets)
    add("uniform_bound_plateau_gap", abs(plateau_large - plateau_small), 1e-9)

    coarse = transfer.window_bound_scan(angles, 0.1, cfg.scan_z_samples)
    fine = transfer.window_bound_scan(angles, 0.01, cfg.scan_z_samples)
    add("window_bound_ratio", fine.max_norm / coarse.max_norm, 1.5)

    tm_cfg = dataclasses.replace(cfg, sequence="thue-morse", corrupt_coin_site=None)
    pr_radius = max(res.parseval_radius(n, L, cfg.parseval_tail_tol, cfg.solver_tol)
                    for n in (0, 2) for L in (5.0, 10.0))
    tm_bank = make_bank(tm_cfg, pr_radius)
    reports = _parallel_map(
        lambda nl: res.parseval_check(tm_bank, nl[0], nl[1],
                                      tail_tol=cfg.parseval_tail_tol,
                                      solver_tol=cfg.solver_tol),
        [(n, L) for n in (0, 2) for L in (5.0, 10.0)], threads)
    add("parseval_max_rel_diff", max(r.rel_diff for r in reports), 1e-6)

    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(3):
        eta = rng.uniform(1 / 20, math.log(2.0))
        z = complex(np.exp(eta) * np.exp(1j * rng.uniform(0, 2 * math.pi)))
        n_l = math.ceil((math.log(1e10) + math.log(1 / (1 - 1 / abs(z)))) / math.log(abs(z))) + 2
        radius = max(n_l + 1, res.truncation_radius(z, 12, cfg.solver_tol))
        b = make_bank(tm_cfg, radius)
        direct = res.resolvent_vector(b, z)
        series = res.neumann_oracle(b, z, n_l).state
        diffs = [abs(direct.amplitudes_at(n)[0] - series.amplitudes_at(n)[0])
                 + abs(direct.amplitudes_at(n)[1] - series.amplitudes_at(n)[1])
                 for n in range(-12, 13)]
        worst = max(worst, max(diffs))
    add("resolvent_oracle_max_diff", worst, 1e-8)

    z0 = complex(np.exp(1 / 10) * 1j)
    radius = res.truncation_radius(z0, 12, cfg.solver_tol)
    b = make_bank(tm_cfg, radius)
    window = pattern_window(tm_cfg, -radius, radius)
    state = res.resolvent_vector(b, z0)
    recursion = transfer.verify_eigenrecursion(state, window, angles, z0, excluded={-1})
    add("eigenrecursion_residual", recursion, 1e-8)

    return checks


def cmd_verify(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    checks = _verify_checks(cfg, threads)
    all_passed = all(c["passed"] for c in checks)
    write_json(out / "verify.json", {"checks": checks, "all_passed": all_passed}, cfg)
    if not all_passed:
        failed = [c["name"] for c in checks if not c["passed"]]
        print(f"verify: FAILED checks: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY_FAILED
    return EXIT_OK


def cmd_certify(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    kind, _ = parse_sequence(cfg.sequence)
    if kind == "identity":
        raise ValueError("certify needs a coined walk (identity operator has no coins)")
    L_values = cfg.L_values()
    for p in cfg.p_values:
        if p <= 1:
            print(f"certify: p = {p} gives a degenerate bound (constant in L); "
                  "moments are >= 1 trivially", file=sys.stderr)
    radius = res.certificate_radius(L_values, cfg.moment_tail_tol, cfg.solver_tol)
    bank = make_bank(cfg, radius)
    reports = res.moment_certificates(bank, cfg.p_values, L_values,
                                      window_nodes=cfg.certificate_nodes,
                                      tail_tol=cfg.moment_tail_tol,
                                      solver_tol=cfg.solver_tol, threads=threads)
    write_json(out / "certificate.json",
               {"reports": [r.to_json() for r in reports]}, cfg)
    rows = []
    for rep in reports:
        for r in rep.rows:
            rows.append((r.L, rep.p, r.restricted_sum, r.sum_left, r.sum_right,
                         r.bound, r.functional, r.moment,
                         r.positivity_ok, r.ordering_ok))
    write_csv(out / "certificate.csv",
              ["L", "p", "restricted_sum", "sum_left", "sum_right", "bound",
               "functional", "moment", "positivity_ok", "ordering_ok"], rows, cfg)
    if not all(rep.all_ok for rep in reports):
        print("certify: lower-bound ordering or positivity failed", file=sys.stderr)
        return EXIT_VERIFY_FAILED
    return EXIT_OK


def cmd_transfer_scan(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    angles = CoinAngles(cfg.theta, cfg.phi)
    spans = sorted({8, 64, 512, cfg.scan_max_span})
    uniform = [{"max_span": s,
                "max_norm": transfer.uniform_bound_scan(angles, s, cfg.scan_offsets)}
               for s in spans]
    window = [transfer.window_bound_scan(angles, eps, cfg.scan_z_samples).to_json()
              for eps in cfg.scan_epsilons]

    # resolvent mass on the annulus eps^{-1}/2 < |n| < eps^{-1}, with the scale
    # coupling L = annulus_L_factor / eps
    kind, _ = parse_sequence(cfg.sequence)
    annulus = []
    if kind != "identity":
        for eps in cfg.scan_epsilons:
            L = cfg.annulus_L_factor / eps
            radius = (math.ceil(1.0 / eps) - 1
                      + math.ceil(L * math.log(1.0 / cfg.solver_tol)) + 8)
            bank = make_bank(cfg, radius)
            floor_val = res.resolvent_window_scan(bank, eps, L,
                                                  solver_tol=cfg.solver_tol)
            annulus.append({"epsilon": eps, "L": L, "min_sq_element": floor_val})

    write_json(out / "transfer_scan.json",
               {"uniform": uniform, "window": window, "annulus": annulus}, cfg)
    rows = [("uniform", float(u["max_span"]), u["max_norm"]) for u in uniform]
    rows += [("window", w["epsilon"], w["max_norm"]) for w in window]
    rows += [("annulus", a["epsilon"], a["min_sq_element"]) for a in annulus]
    write_csv(out / "transfer_scan.csv", ["scan", "parameter", "value"], rows, cfg)
    return EXIT_OK


def cmd_parseval(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    kind, _ = parse_sequence(cfg.sequence)
    if kind == "identity":
        raise ValueError("parseval needs a coined walk (identity operator has no coins)")
    pairs = [(n, L) for n in cfg.parseval_targets for L in cfg.parseval_L]
    radius = max(res.parseval_radius(n, L, cfg.parseval_tail_tol, cfg.solver_tol)
                 for n, L in pairs)
    bank = make_bank(cfg, radius)
    reports = _parallel_map(
        lambda nl: res.parseval_check(bank, nl[0], nl[1],
                                      tail_tol=cfg.parseval_tail_tol,
                                      node_count=cfg.parseval_nodes,
                                      solver_tol=cfg.solver_tol),
        pairs, threads)
    write_json(out / "parseval.json", {"reports": [r.to_json() for r in reports]}, cfg)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "exponents": cmd_exponents,
    "verify": cmd_verify,
    "certify": cmd_certify,
    "transfer-scan": cmd_transfer_scan,
    "parseval": cmd_parseval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qwlab",
                                     description="coined-walk numerical laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument("--theta", type=float, default=None)
        p.add_argument("--phi", type=float, default=None)
        p.add_argument("--sequence", type=str, default=None, help=SEQUENCE_CHOICES)
        p.add_argument("--offset", type=int, default=None)
        p.add_argument("--p", type=str, default=None, help="comma-separated moment orders")
        p.add_argument("--L-start", type=float, default=None)
        p.add_argument("--L-ratio", type=float, default=None)
        p.add_argument("--L-count", type=int, default=None)
        p.add_argument("--l-max", type=int, default=None)
        p.add_argument("--out", type=str, default="qwlab-out")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--corrupt-coin-site", type=int, default=None,
                       help=argparse.SUPPRESS)
    return parser


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config is not None:
        with open(args.config) as fh:
            data = json.load(fh)
        unknown = set(data) - _CONFIG_FIELDS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key, value in data.items():
            setattr(cfg, key, value)
    overrides = {
        "theta": args.theta, "phi": args.phi, "sequence": args.sequence,
        "offset": args.offset, "L_start": args.L_start, "L_ratio": args.L_ratio,
        "L_count": args.L_count, "l_max": args.l_max,
        "corrupt_coin_site": args.corrupt_coin_site,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.p is not None:
        cfg.p_values = [float(tok) for tok in args.p.split(",") if tok]
    cfg.validate()
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, max(1, args.threads))
    except ResourceCapError as exc:
        print(f"qwlab: resource cap: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"qwlab: {exc}", file=sys.stderr)
        return EXIT_BAD_ARGS


def entry_point() -> None:
    sys.exit(main())
