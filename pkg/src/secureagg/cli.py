"""Command-line front door: inspect parameters, run sessions, bench, audit, train.

Reads an optional flat key=value config file, applies command-line overrides,
validates the resulting session configuration, and writes JSON or CSV reports.
Exit code 0 means all requested work completed; any failure writes a report
with a machine-readable ``error`` field and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness, protocol, shprg

_CONFIG_KEYS = {
    "setting": str,
    "n_clients": int,
    "model_size": int,
    "epochs": int,
    "tau": int,
    "w": int,
    "p": int,
    "m_min": float,
    "m_max": float,
    "leader": int,
    "seed": int,
}

_DEFAULTS = {
    "setting": "A",
    "n_clients": 10,
    "model_size": 1000,
    "epochs": 5,
    "tau": 100,
    "w": 16,
    "p": None,
    "m_min": -1.0,
    "m_max": 1.0,
    "leader": 0,
    "seed": 0,
}


def read_config_file(path: str) -> dict:
    """Flat key=value lines; '#' starts a comment."""
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _CONFIG_KEYS[key](val)
    return values


def _resolve(args: argparse.Namespace) -> dict:
    resolved = dict(_DEFAULTS)
    if getattr(args, "config", None):
        resolved.update(read_config_file(args.config))
    for key in _CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
    return resolved


def _session_config(resolved: dict) -> protocol.SessionConfig:
    return protocol.make_session_config(
        n_clients=resolved["n_clients"],
        model_size=resolved["model_size"],
        epochs=resolved["epochs"],
        tau=resolved["tau"],
        setting=resolved["setting"],
        w=resolved["w"],
        m_min=resolved["m_min"],
        m_max=resolved["m_max"],
        p=resolved["p"],
        leader=resolved["leader"],
        crs_seed=resolved["seed"],
    )


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def parse_collude(expr: str) -> list:
    """--collude "server,3,5" -> ["server", 3, 5]."""
    parts = [p.strip() for p in expr.split(",") if p.strip()]
    return [p if p == "server" else int(p) for p in parts]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_params(args: argparse.Namespace) -> str:
    resolved = _resolve(args)
    config = _session_config(resolved)
    config.validate(min_parties=1)
    sp = config.shprg_params
    rp = config.ring_params
    info = shprg.SETTINGS.get(sp.setting_label or "", None)
    max_for_p = (sp.p - 1) // ((1 << config.w) - 1)
    payload = {
        "setting": sp.setting_label,
        "mask_generator": {
            "mu": sp.mu,
            "p": sp.p,
            "q": sp.q,
            "log2_p": sp.p.bit_length() - 1,
            "log2_q": sp.q.bit_length() - 1,
            "security_bits": info.security_bits if info else None,
        },
        "ring": {
            "n": rp.n,
            "log2_q": rp.q.bit_length(),
            "primes": list(rp.primes),
            "t": rp.t,
            "delta": rp.delta,
        },
        "derived": {
            "ciphertexts_per_agreement_run": config.ciphertexts_per_client,
            "max_clients_for_p": max_for_p,
            "max_clients_setting": info.max_clients if info else max_for_p,
            "mask_bytes_per_entry": config.mask_width,
            "rounds_for_T_epochs": f"T + 3*ceil(T/{config.tau})",
        },
        "session": {
            "n_clients": config.n_clients,
            "model_size": config.model_size,
            "epochs": config.epochs,
            "tau": config.tau,
            "w": config.w,
            "clip_range": [config.m_min, config.m_max],
        },
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def cmd_run(args: argparse.Namespace) -> str:
    resolved = _resolve(args)
    config = _session_config(resolved)
    source = harness.SyntheticUpdateSource(
        config.n_clients, config.model_size, seed=resolved["seed"]
    )
    report, transcript = harness.run_session(config, source, master_seed=resolved["seed"])
    if getattr(args, "transcript_out", None):
        transcript.dump(args.transcript_out)
    return report.to_json(exclude_timings=args.exclude_timings)


def cmd_bench(args: argparse.Namespace) -> str:
    resolved = _resolve(args)
    settings = args.settings.split(",") if args.settings else ["A", "B", "C", "D"]
    sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else [10_000, 100_000, 1_000_000]
    rows = harness.bench(
        settings=settings,
        sizes=sizes,
        n_clients=resolved["n_clients"],
        tau=resolved["tau"],
        repeats=args.repeats,
        seed=resolved["seed"],
    )
    return harness.bench_to_csv(rows)


def cmd_audit(args: argparse.Namespace) -> str:
    resolved = _resolve(args)
    config = _session_config(resolved)
    source = harness.SyntheticUpdateSource(
        config.n_clients, config.model_size, seed=resolved["seed"]
    )
    _, transcript = harness.run_session(config, source, master_seed=resolved["seed"])
    colluders = parse_collude(args.collude) if args.collude else []
    return harness.audit_colluding_view(transcript, colluders).to_json()


def cmd_train(args: argparse.Namespace) -> str:
    resolved = _resolve(args)
    tc = harness.TrainerConfig(
        n_clients=resolved["n_clients"],
        epochs=resolved["epochs"],
        tau=min(resolved["tau"], resolved["epochs"]) if resolved["tau"] else resolved["epochs"],
        setting=resolved["setting"],
        data_seed=resolved["seed"] + 1234,
    )
    plain = harness.toy_fedavg(tc, "plain", master_seed=resolved["seed"])
    secure = harness.toy_fedavg(tc, "secure", master_seed=resolved["seed"])
    lines = ["epoch,plain_accuracy,secure_accuracy"]
    for i, (a, b) in enumerate(zip(plain, secure)):
        lines.append(f"{i},{a:.6f},{b:.6f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="secureagg",
        description="Masked secure aggregation: parameter inspection, simulated sessions, benchmarks, audits, toy training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", help="write the report here instead of stdout")
        p.add_argument("--seed", type=int, help="master seed (default 0)")
        p.add_argument("--setting", choices=sorted(shprg.SETTINGS), help="mask-generator setting")
        p.add_argument("--n-clients", dest="n_clients", type=int)
        p.add_argument("--model-size", dest="model_size", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--tau", type=int)
        p.add_argument("--w", type=int, help="quantization bit width")
        p.add_argument("--p", type=int, help="mask modulus override (power of two)")
        p.add_argument("--m-min", dest="m_min", type=float)
        p.add_argument("--m-max", dest="m_max", type=float)
        p.add_argument("--leader", type=int)

    p_params = sub.add_parser("params", help="print resolved and derived parameters")
    add_common(p_params)
    p_params.set_defaults(fn=cmd_params)

    p_run = sub.add_parser("run", help="run one simulated session, emit the report JSON")
    add_common(p_run)
    p_run.add_argument("--transcript-out", help="also dump the binary transcript log here")
    p_run.add_argument(
        "--exclude-timings", action="store_true", help="omit wall-clock fields from the report"
    )
    p_run.set_defaults(fn=cmd_run)

    p_bench = sub.add_parser("bench", help="timing grid over settings and model sizes (CSV)")
    add_common(p_bench)
    p_bench.add_argument("--settings", help="comma list, e.g. A,B")
    p_bench.add_argument("--sizes", help="comma list of model sizes")
    p_bench.add_argument("--repeats", type=int, help="timing repeats per cell (default: auto)")
    p_bench.set_defaults(fn=cmd_bench)

    p_audit = sub.add_parser("audit", help="run a session and audit a colluder view (JSON)")
    add_common(p_audit)
    p_audit.add_argument("--collude", help='coalition, e.g. "server,3,5"')
    p_audit.set_defaults(fn=cmd_audit)

    p_train = sub.add_parser("train", help="toy federated averaging, plain vs secure (CSV)")
    add_common(p_train)
    p_train.set_defaults(fn=cmd_train)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        output = args.fn(args)
    except (ValueError, protocol.ProtocolError) as exc:
        error = {
            "error": {
                "message": str(exc),
                "phase": getattr(exc, "phase", ""),
                "type": type(exc).__name__,
            }
        }
        _emit(json.dumps(error, indent=2), getattr(args, "out", None))
        return 2
    _emit(output, getattr(args, "out", None))
    return 0


if __name__ == "__main__":
    sys.exit(main())
