import json
from pathlib import Path

import pytest

from harness import TOKENS
from tradecase.auth import TokenTable
from tradecase.bserver import ServiceHost
from tradecase.cli import EXIT_DIVERGED, EXIT_ERROR, EXIT_OK, EXIT_ROLLED_BACK, main
from tradecase.model import LifecycleState, Privilege
from tradecase.netio import FrameServer, TcpTransport
from tradecase.runtime import USER
from tradecase.tradeserver import TradeServer, TradeServerFrontend

GOLDEN = Path(__file__).parent / "golden"

AGENTS = ("maker:instrument=STK,base_price=100,seed=m1;"
          "greedy:instrument=STK,target_qty=25;"
          "value:instrument=STK,fair_value=100,band=1,clip=3")


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestReplay:
    def test_batch_session_then_replay_identical(self, tmp_path, capsys):
        log = str(tmp_path / "session.jsonl")
        code, out, _ = run_cli(capsys, "trade-server", "--seed", "7", "--ticks", "40",
                               "--venues", "2", "--instruments", "STK",
                               "--agents", AGENTS, "--session-log", log)
        assert code == EXIT_OK
        assert json.loads(out)["fills"] > 0

        code, out, _ = run_cli(capsys, "replay", log)
        assert code == EXIT_OK
        assert json.loads(out)["verdict"] == "IDENTICAL"

    def test_tampered_log_diverges(self, tmp_path, capsys):
        log = str(tmp_path / "session.jsonl")
        run_cli(capsys, "trade-server", "--seed", "3", "--ticks", "30",
                "--agents", AGENTS, "--session-log", log)
        lines = Path(log).read_text().splitlines()
        fills = [i for i, line in enumerate(lines) if '"type":"FILL"' in line]
        assert fills
        lines[fills[0]] = lines[fills[0]].replace('"qty":', '"qty":9', 1)
        Path(log).write_text("\n".join(lines) + "\n")
        code, out, _ = run_cli(capsys, "replay", log)
        assert code == EXIT_DIVERGED
        assert json.loads(out)["verdict"] == "DIVERGED"

    def test_missing_log_is_machine_readable_error(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "replay", str(tmp_path / "nope.jsonl"))
        assert code == EXIT_ERROR
        assert json.loads(err)["code"] == "IO_ERROR"


@pytest.fixture
def trade_server_tcp():
    server = TradeServer(venues=["V1"], instruments=["STK"], tokens=TOKENS)
    front = TradeServerFrontend(server)
    net = FrameServer("127.0.0.1:0", front.handle_frame).start()
    yield server, net.addr
    net.shutdown()


class TestAgentCommands:
    def test_deploy_then_kill(self, trade_server_tcp, capsys):
        server, addr = trade_server_tcp
        code, out, _ = run_cli(capsys, "deploy-agent", "--server", addr,
                               "--template", "idle", "--token", "tok-alice",
                               "--cash", "5000", "--agent-id", "bot1")
        assert code == EXIT_OK
        assert json.loads(out)["agent_id"] == "bot1"
        assert "bot1" in server.agents

        code, out, _ = run_cli(capsys, "kill", "--server", addr,
                               "--agent", "bot1", "--token", "tok-alice")
        assert code == EXIT_OK
        report = json.loads(out)
        assert report["agent_id"] == "bot1" and report["cancelled_orders"] == []
        assert "bot1" not in server.agents

    def test_kill_with_bad_token_matches_golden_error(self, trade_server_tcp, capsys):
        server, addr = trade_server_tcp
        code, _, err = run_cli(capsys, "kill", "--server", addr,
                               "--agent", "whatever", "--token", "tok-invalid")
        assert code == EXIT_ERROR
        assert err == (GOLDEN / "cli_unauthorized.txt").read_text()

    def test_deploy_unknown_template(self, trade_server_tcp, capsys):
        server, addr = trade_server_tcp
        code, _, err = run_cli(capsys, "deploy-agent", "--server", addr,
                               "--template", "wizard", "--token", "tok-alice")
        assert code == EXIT_ERROR
        assert json.loads(err)["code"] == "UNKNOWN_CODE_REF"


def _start_host(tmp_path, tag):
    holder = {}
    net = FrameServer("127.0.0.1:0", lambda f: holder["host"].handle_frame(f))
    host = ServiceHost(net.addr, str(tmp_path / tag), tokens=TOKENS, transport=TcpTransport(),
                       rpc_timeout=1.0)
    holder["host"] = host
    net.start()
    return host, net


class TestMigrateCommand:
    def test_migrate_completes_and_reports(self, tmp_path, capsys):
        host_a, net_a = _start_host(tmp_path, "A")
        host_b, net_b = _start_host(tmp_path, "B")
        try:
            bid = host_a.create_briefcase("alice", "bc-cli")
            host_a.open_environment(bid)
            env = host_a.environment(bid)
            cid = env.load_component("notepad@1", True, True, frozenset(), USER)
            env.send_message(USER, cid, b"take me along")

            code, out, _ = run_cli(capsys, "migrate", bid, "--source", net_a.addr,
                                   "--dest", net_b.addr, "--token", "tok-alice")
            assert code == EXIT_OK
            assert json.loads(out)["result"] == "COMPLETED"
            assert host_b.environment(bid).components[cid].instance.note == b"take me along"
            assert bid not in host_a.environments
        finally:
            net_a.shutdown()
            net_b.shutdown()

    def test_migrate_to_unreachable_rolls_back(self, tmp_path, capsys):
        host_a, net_a = _start_host(tmp_path, "A")
        try:
            bid = host_a.create_briefcase("alice", "bc-cli2")
            host_a.open_environment(bid)
            env = host_a.environment(bid)
            cid = env.load_component("notepad@1", True, True, frozenset(), USER)

            code, out, _ = run_cli(capsys, "migrate", bid, "--source", net_a.addr,
                                   "--dest", "127.0.0.1:1", "--token", "tok-alice")
            assert code == EXIT_ROLLED_BACK
            assert json.loads(out)["result"] == "ROLLED_BACK"
            assert env.state_of(cid) == LifecycleState.ACTIVE
        finally:
            net_a.shutdown()


class TestConfigFile:
    def test_config_file_with_flag_override(self, tmp_path, capsys):
        config = tmp_path / "server.conf"
        config.write_text("seed=5\nticks=10\nagents=maker:instrument=STK,base_price=100,seed=c\n")
        log = str(tmp_path / "s.jsonl")
        code, out, _ = run_cli(capsys, "trade-server", "--config", str(config),
                               "--ticks", "12", "--session-log", log)
        assert code == EXIT_OK
        assert json.loads(out)["ticks"] == 12  # flag wins over file

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        config = tmp_path / "server.conf"
        config.write_text("sedd=5\n")
        code, _, err = run_cli(capsys, "trade-server", "--config", str(config), "--ticks", "1")
        assert code == EXIT_ERROR
        assert json.loads(err)["code"] == "BAD_REQUEST"
