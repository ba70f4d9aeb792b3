"""Command-line front end.

Subcommands: synth (write a synthetic replay artifact), replay (decode an
artifact and print/write the trace), clustered-sim (stride error statistics),
memcalc (KV budget arithmetic from a JSON config), sweep (cadence, mask
ablation, or noise stress grids as CSV), and balance (feed a gradient log
through the loss balancer).

Seeds resolve in order: explicit --seed flag, then the PDT_SEED environment
variable, then a per-command default.  Exit codes: 0 success, 2 invalid
input or configuration, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from typing import Sequence

from .analytics import ClusterSimConfig, format_sim_transcript, simulate_clustered_rollback
from .balancer import read_gradient_log, run_balancer
from .cadence import CadenceConfig
from .decode import DecodeConfig, run_parallel
from .errors import ArtifactFormatError, CapacityError, ConfigError, PdtError, ShapeError, StateError
from .memmodel import KIB, MIB, MemoryConfig, kv_budget, pressure_check
from .replay import SynthSpec, read_artifact, synthesize_artifact, write_artifact
from .sweeps import cadence_sweep, mask_ablation, noise_stress

_VALIDATION_ERRORS = (ConfigError, ShapeError, ArtifactFormatError, StateError, ValueError, KeyError)


def _seed_or_none(value: int | None) -> int | None:
    if value is not None:
        return value
    env = os.environ.get("PDT_SEED")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError as exc:
        raise ConfigError(f"PDT_SEED must be an integer, got {env!r}") from exc


def _resolve_seed(value: int | None, default: int = 0) -> int:
    resolved = _seed_or_none(value)
    return default if resolved is None else resolved


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(",") if p != "")
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(p) for p in text.split(",") if p != "")
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}") from exc


def _plant(text: str) -> tuple[int, int]:
    try:
        stream, pos = text.split(":")
        return int(stream), int(pos)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected STREAM:POS, got {text!r}") from exc


def _bytes_human(n: int) -> str:
    if n % MIB == 0:
        return f"{n} B ({n // MIB} MiB)"
    if n % KIB == 0:
        return f"{n} B ({n // KIB} KiB)"
    return f"{n} B"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdtcoord")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="write a deterministic synthetic replay artifact")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--streams", type=int, default=3)
    p_synth.add_argument("--length", type=int, default=96)
    p_synth.add_argument("--vocab", type=int, default=32)
    p_synth.add_argument("--d", type=int, default=16)
    p_synth.add_argument("--d-note", type=int, default=8)
    p_synth.add_argument("--gamma", type=float, default=-4.0)
    p_synth.add_argument("--tau", type=float, default=0.5)
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.add_argument(
        "--plant",
        type=_plant,
        action="append",
        default=[],
        metavar="STREAM:POS",
        help="force the agreement score below tau at this frame (repeatable)",
    )

    p_replay = sub.add_parser("replay", help="decode an artifact and report the trace")
    p_replay.add_argument("--artifact", required=True)
    p_replay.add_argument("--out", default=None, help="write the full trace to this path")
    p_replay.add_argument("--workers", type=int, default=1)
    p_replay.add_argument("--stride-b", type=int, default=32)
    p_replay.add_argument("--horizon-l", type=int, default=32)
    p_replay.add_argument("--tau", type=float, default=None)
    p_replay.add_argument("--read-delta", type=int, default=0)
    p_replay.add_argument("--cadence-mode", choices=["deterministic", "stochastic", "adaptive"], default="deterministic")
    p_replay.add_argument("--interval-m", type=int, default=4)
    p_replay.add_argument("--gate-override", type=float, default=None)
    p_replay.add_argument("--regen-mode", choices=["skip_ahead", "reconsume"], default="skip_ahead")
    p_replay.add_argument("--agreement-mode", choices=["artifact", "live"], default="artifact")
    p_replay.add_argument("--noise-scale", type=float, default=0.0)
    p_replay.add_argument("--seed", type=int, default=None)

    p_sim = sub.add_parser("clustered-sim", help="stride failure statistics for bursty errors")
    p_sim.add_argument("--L", "--horizon-l", dest="horizon_l", type=int, default=32)
    p_sim.add_argument("--rho", type=float, default=0.5)
    p_sim.add_argument("--q-token", "--q_token", dest="q_token", type=float, default=0.0033)
    p_sim.add_argument("--trials", type=int, default=10000)
    p_sim.add_argument("--seed", type=int, default=None)

    p_mem = sub.add_parser("memcalc", help="exact KV budget from a JSON config")
    p_mem.add_argument("--config", required=True, help="JSON file whose keys mirror MemoryConfig fields")
    p_mem.add_argument("--m-peak", type=int, default=None, help="override peak bytes for the pressure check")

    p_sweep = sub.add_parser("sweep", help="run a configuration grid and emit CSV")
    p_sweep.add_argument("--kind", choices=["cadence", "mask-ablation", "noise-stress"], required=True)
    p_sweep.add_argument("--artifact", required=True)
    p_sweep.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p_sweep.add_argument("--intervals", type=_int_list, default=(2, 4, 8))
    p_sweep.add_argument("--strides", type=_int_list, default=(8, 16))
    p_sweep.add_argument("--scales", type=_float_list, default=(0.0, 0.05, 0.2))
    p_sweep.add_argument("--masked-strides", type=_int_list, default=None)
    p_sweep.add_argument("--alpha", type=float, default=None, help="recorded in the CSV header, not interpreted")
    p_sweep.add_argument("--beta", type=float, default=None, help="recorded in the CSV header, not interpreted")
    p_sweep.add_argument("--seed", type=int, default=None)

    p_bal = sub.add_parser("balance", help="replay a gradient log through the loss balancer")
    p_bal.add_argument("--log", required=True, help="text log: step g_ce g_kl loss_ce loss_kl")
    p_bal.add_argument("--update-interval", type=int, default=1)
    return parser


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec(
        n_streams=args.streams,
        length=args.length,
        vocab_size=args.vocab,
        d=args.d,
        d_note=args.d_note,
        gamma=args.gamma,
        tau=args.tau,
        seed=_resolve_seed(args.seed),
        planted_divergences=tuple(args.plant),
    )
    artifact = synthesize_artifact(spec)
    write_artifact(artifact, args.out)
    print(f"wrote {args.out}: streams={artifact.n_streams} length={spec.length} "
          f"vocab={artifact.vocab_size} d={artifact.d} d_note={artifact.d_note} seed={artifact.seed}")
    return 0


def _decode_config(args: argparse.Namespace) -> DecodeConfig:
    return DecodeConfig(
        stride_b=args.stride_b,
        horizon_l=args.horizon_l,
        tau=args.tau,
        read_delta=args.read_delta,
        cadence=CadenceConfig(mode=args.cadence_mode, interval_m=args.interval_m),
        gate_override=args.gate_override,
        agreement_mode=args.agreement_mode,
        regen_mode=args.regen_mode,
        note_noise_scale=args.noise_scale,
        seed=_seed_or_none(args.seed),
    )


def _cmd_replay(args: argparse.Namespace) -> int:
    artifact = read_artifact(args.artifact)
    trace = run_parallel(artifact, _decode_config(args), workers=args.workers)
    if args.out:
        trace.write(args.out)
    for k, log in enumerate(trace.token_logs):
        print(f"stream {k}: committed {trace.committed[k]} of {len(log)} tokens")
    print(f"rollbacks: {len(trace.rollback_events())}  forced_commits: {trace.forced_commits}")
    print(f"trace_hash: {trace.trace_hash()}")
    return 0


def _cmd_clustered_sim(args: argparse.Namespace) -> int:
    config = ClusterSimConfig(
        horizon_l=args.horizon_l,
        rho_c=args.rho,
        q_token=args.q_token,
        trials=args.trials,
        seed=_resolve_seed(args.seed, default=2),
    )
    print(format_sim_transcript(simulate_clustered_rollback(config)))
    return 0


def _cmd_memcalc(args: argparse.Namespace) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("memcalc config must be a JSON object")
    known = {f.name for f in dataclasses.fields(MemoryConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown memcalc config keys: {sorted(unknown)}")
    if "tokens_per_stream" in raw:
        raw["tokens_per_stream"] = tuple(raw["tokens_per_stream"])
    config = MemoryConfig(**raw)
    budget = kv_budget(config)
    print(f"per_token_per_layer:  {_bytes_human(budget.per_token_per_layer)}")
    print(f"per_token_all_layers: {_bytes_human(budget.per_token_all_layers)}")
    print(f"surface_total:        {_bytes_human(budget.surface_total)}")
    print(f"bus_total:            {_bytes_human(budget.bus_total)}")
    print(f"grand_total:          {_bytes_human(budget.grand_total)}")
    if config.gpu_budget_bytes > 0:
        report = pressure_check(config, args.m_peak)
        print(f"pressure: {report.status} (peak {_bytes_human(report.m_peak)}, "
              f"headroom {report.headroom} B, utilization {report.utilization:.3f})")
    return 0


def _write_rows(rows: Sequence[object], out_path: str | None, header_comment: str | None) -> None:
    if not rows:
        raise ConfigError("sweep produced no rows")
    fieldnames = [f.name for f in dataclasses.fields(rows[0])]
    fh = open(out_path, "w", newline="", encoding="utf-8") if out_path else sys.stdout
    try:
        if header_comment:
            fh.write(header_comment + "\n")
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(dataclasses.asdict(row))
    finally:
        if out_path:
            fh.close()


def _cmd_sweep(args: argparse.Namespace) -> int:
    artifact = read_artifact(args.artifact)
    config = DecodeConfig(stride_b=8, horizon_l=32, seed=_seed_or_none(args.seed))
    if args.kind == "cadence":
        rows: Sequence[object] = cadence_sweep(artifact, config, args.intervals, args.strides)
    elif args.kind == "mask-ablation":
        rows = mask_ablation(artifact, config, args.masked_strides)
    else:
        rows = noise_stress(artifact, dataclasses.replace(config, agreement_mode="live"), args.scales)
    comment = None
    if args.alpha is not None or args.beta is not None:
        comment = f"# alpha={args.alpha} beta={args.beta}"
    _write_rows(rows, args.out, comment)
    return 0


def _cmd_balance(args: argparse.Namespace) -> int:
    with open(args.log, "r", encoding="utf-8") as fh:
        records = read_gradient_log(fh)
    for report in run_balancer(records, update_interval=args.update_interval):
        flags = ",".join(f.name for f in report.flags) or "-"
        print(f"step {report.step}: lambda_ce={report.lambda_ce:.4f} "
              f"lambda_kl={report.lambda_kl:.4f} flags={flags}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "replay": _cmd_replay,
    "clustered-sim": _cmd_clustered_sim,
    "memcalc": _cmd_memcalc,
    "sweep": _cmd_sweep,
    "balance": _cmd_balance,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CapacityError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1
    except PdtError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
