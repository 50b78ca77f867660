"""Operator command line: run servers, drive scripted sessions, manage
briefcases and agents. Every failure exits nonzero with one machine-readable
JSON error line on stderr."""

from __future__ import annotations

import argparse
import sys

from . import frames
from .auth import TokenTable
from .bserver import ServiceHost
from .config import load_config, parse_agent_specs
from .errors import ServiceError
from .model import canonical_json
from .netio import FrameClient, FrameServer, TcpTransport
from .tradeserver import TradeServer, TradeServerFrontend, run_session

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ROLLED_BACK = 2
EXIT_DIVERGED = 3


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ServiceError as exc:
        print(canonical_json({"code": exc.code, "message": exc.message}), file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(canonical_json({"code": "IO_ERROR", "message": str(exc)}), file=sys.stderr)
        return EXIT_ERROR
    except KeyboardInterrupt:
        return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tradecase")
    sub = parser.add_subparsers(required=True)

    p = sub.add_parser("briefcase-server", help="run a briefcase server until interrupted")
    p.add_argument("--config")
    p.add_argument("--listen")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--tokens")
    p.set_defaults(fn=cmd_briefcase_server)

    p = sub.add_parser("trade-server", help="run the agent trade server")
    p.add_argument("--config")
    p.add_argument("--listen")
    p.add_argument("--venues", type=int)
    p.add_argument("--instruments", help="comma separated list")
    p.add_argument("--seed", type=int)
    p.add_argument("--ticks", type=int, help="batch mode: run this many ticks and exit")
    p.add_argument("--kill-policy", dest="kill_policy", choices=["OWNER_OR_BROKER", "BROKER_ONLY"])
    p.add_argument("--agents", help="template:k=v,k=v;template:... registered at start")
    p.add_argument("--session-log", dest="session_log")
    p.add_argument("--tokens")
    p.add_argument("--serve", action="store_true", help="serve frames instead of exiting after the ticks")
    p.set_defaults(fn=cmd_trade_server)

    p = sub.add_parser("migrate", help="migrate a live environment between servers")
    p.add_argument("briefcase_id")
    p.add_argument("--source", required=True, help="server currently hosting the environment")
    p.add_argument("--dest", required=True)
    p.add_argument("--token", required=True)
    p.set_defaults(fn=cmd_migrate)

    p = sub.add_parser("deploy-agent", help="register a trading agent on a trade server")
    p.add_argument("--server", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--params", default="", help="k=v,k=v")
    p.add_argument("--cash", type=int, default=1_000_000)
    p.add_argument("--agent-id", dest="agent_id")
    p.add_argument("--token", required=True)
    p.set_defaults(fn=cmd_deploy_agent)

    p = sub.add_parser("kill", help="remove an agent entirely, cancelling its orders")
    p.add_argument("--server", required=True)
    p.add_argument("--agent", required=True)
    p.add_argument("--token", required=True)
    p.set_defaults(fn=cmd_kill)

    p = sub.add_parser("replay", help="recompute a session log and compare fill logs")
    p.add_argument("session_log")
    p.set_defaults(fn=cmd_replay)
    return parser


def _overrides(args, keys: list[str]) -> dict:
    return {key: getattr(args, key, None) for key in keys}


def cmd_briefcase_server(args) -> int:
    config = load_config(args.config, _overrides(args, ["listen", "data_dir", "tokens"]))
    tokens = TokenTable.from_file(config.tokens) if config.tokens else TokenTable()
    host = ServiceHost(config.listen, config.data_dir, tokens=tokens,
                       transport=TcpTransport(), lock_lease=config.lock_lease)
    host.recover()
    server = FrameServer(config.listen, host.handle_frame)
    print(canonical_json({"listening": server.addr, "node_id": config.listen}))
    server.serve_forever()
    return EXIT_OK


def cmd_trade_server(args) -> int:
    overrides = _overrides(args, ["listen", "venues", "seed", "ticks", "kill_policy",
                                  "agents", "session_log", "tokens"])
    if args.instruments:
        overrides["instruments"] = [x.strip() for x in args.instruments.split(",") if x.strip()]
    config = load_config(args.config, overrides)
    tokens = TokenTable.from_file(config.tokens) if config.tokens else TokenTable()
    registrations = parse_agent_specs(config.agents, owner_id="operator") if config.agents else []

    if config.ticks > 0 and not args.serve:
        server = run_session(
            seed=config.seed, venues=config.venue_ids(), instruments=config.instruments,
            ticks=config.ticks, registrations=registrations,
            bucket_capacity=config.bucket_capacity, bucket_refill=config.bucket_refill,
            kill_policy=config.kill_policy, tokens=tokens,
        )
        if config.session_log:
            server.write_session_log(config.session_log, server.session_header(config.ticks, registrations))
        print(canonical_json({"ticks": server.tick, "fills": len(server.fill_log),
                              "session_log": config.session_log}))
        return EXIT_OK

    server = TradeServer(seed=config.seed, venues=config.venue_ids(),
                         instruments=config.instruments,
                         bucket_capacity=config.bucket_capacity,
                         bucket_refill=config.bucket_refill,
                         kill_policy=config.kill_policy, tokens=tokens)
    for reg in registrations:
        server.register_agent(reg["owner_id"], reg["code_ref"], reg["params"],
                              reg["cash"], agent_id=reg["agent_id"])
    frontend = TradeServerFrontend(server)
    net = FrameServer(config.listen, frontend.handle_frame)
    print(canonical_json({"listening": net.addr}))
    net.serve_forever()
    return EXIT_OK


def cmd_migrate(args) -> int:
    with FrameClient(args.source) as client:
        reply = frames.raise_if_error(client.request(frames.MIGRATE, {
            "briefcase_id": args.briefcase_id,
            "destination": args.dest,
            "token": args.token,
        }))
    result = reply["payload"]
    print(canonical_json(result))
    return EXIT_OK if result.get("result") == "COMPLETED" else EXIT_ROLLED_BACK


def cmd_deploy_agent(args) -> int:
    params = {}
    for pair in (args.params or "").split(","):
        if not pair.strip():
            continue
        key, sep, value = pair.partition("=")
        if not sep:
            raise ServiceError("BAD_REQUEST", f"bad param {pair!r}")
        params[key.strip()] = value.strip()
    with FrameClient(args.server) as client:
        reply = frames.raise_if_error(client.request(frames.REGISTER, {
            "token": args.token, "code_ref": args.template,
            "params": params, "cash": args.cash, "agent_id": args.agent_id,
        }))
    print(canonical_json(reply["payload"]))
    return EXIT_OK


def cmd_kill(args) -> int:
    with FrameClient(args.server) as client:
        reply = frames.raise_if_error(client.request(frames.KILL, {
            "token": args.token, "agent_id": args.agent,
        }))
    print(canonical_json(reply["payload"]))
    return EXIT_OK


def cmd_replay(args) -> int:
    from .tradeserver import replay_session

    verdict, recorded, recomputed = replay_session(args.session_log)
    print(canonical_json({"verdict": verdict, "recorded_fills": recorded,
                          "recomputed_fills": recomputed}))
    return EXIT_OK if verdict == "IDENTICAL" else EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
