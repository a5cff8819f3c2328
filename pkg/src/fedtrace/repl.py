"""Line-oriented debugging REPL over a recorded telemetry store.

Commands map one-to-one onto debugger and localization operations; output
is stable and parseable so scripted sessions can assert on it. Unknown
commands print help and leave the session untouched.
"""

from __future__ import annotations

import shlex
import sys
from typing import IO

from .debugger import (
    Breakpoint,
    BreakpointRegistry,
    DebugCursor,
    DebugSession,
    Granularity,
    SessionClosedError,
    StateView,
)
from .faultloc import LocalizationConfig, SelectionConfig, localize, select_test_inputs
from .seeding import derive_seed
from .telemetry import TelemetryStore

HELP = """commands:
  break <round> [client]   set a breakpoint (idempotent)
  run                      open a session at the first breakpoint (round 0 if none)
  next | back              step a round, or a client at client granularity
  stepin | stepout         switch round <-> client granularity
  inspect                  print the current state view
  localize [--threshold T] [--kappa K] [--eta E] [--seed S]
                           accuse a faulty client at the current round
  fix <ids> --from <round> [--mode reaggregate|retrain]
                           write a corrected timeline branch and adopt it
  resume                   replay to the latest round and close the session
  quit                     leave the repl"""

PROMPT = "(fedtrace) "


class DebugRepl:
    def __init__(self, store: TelemetryStore):
        self.store = store
        self.breakpoints = BreakpointRegistry()
        self.session: DebugSession | None = None
        self.done = False

    # each handler returns the text to print

    def handle(self, line: str) -> str:
        try:
            parts = shlex.split(line)
        except ValueError as exc:
            return f"parse error: {exc}"
        if not parts:
            return ""
        cmd, *args = parts
        handler = getattr(self, f"_cmd_{cmd}", None)
        if handler is None:
            return f"unknown command: {cmd}\n{HELP}"
        try:
            return handler(args)
        except SessionClosedError:
            return "error: session is closed; use run to open a new one"
        except (ValueError, KeyError, RuntimeError) as exc:
            return f"error: {exc}"

    def _need_session(self) -> DebugSession:
        if self.session is None or self.session.closed:
            raise RuntimeError("no open session; use run first")
        return self.session

    def _format_view(self, view: StateView) -> str:
        c = view.cursor
        lines = [
            f"round {c.round_index} granularity={c.granularity.value}"
            + (f" position={c.client_position}/{len(view.participant_ids)}"
               if c.granularity == Granularity.CLIENT else "")
        ]
        lines.append("participants " + ",".join(str(p) for p in view.participant_ids))
        for cid in view.participant_ids:
            m = view.metrics[cid]
            lines.append(
                f"client {cid} loss={m.training_loss:.6f} "
                f"response_time={m.response_time:.4f}s examples={m.dataset_size}"
            )
        lines.append(f"partial_global digest={view.partial_global.digest()[:16]}")
        return "\n".join(lines)

    # -- commands --------------------------------------------------------

    def _cmd_help(self, args) -> str:
        return HELP

    def _cmd_break(self, args) -> str:
        if not args:
            return "usage: break <round> [client]"
        round_id = int(args[0])
        client_id = int(args[1]) if len(args) > 1 else None
        bp_id = self.breakpoints.add(Breakpoint(round_id, client_id))
        at = f"round {round_id}" + (f" client {client_id}" if client_id is not None else "")
        return f"breakpoint {bp_id} set at {at}"

    def _cmd_run(self, args) -> str:
        committed = self.store.round_ids()
        if not committed:
            return "error: store has no committed rounds"
        hit: tuple[int, Breakpoint] | None = None
        for rid in committed:
            record = self.store.load_round(rid)
            hits = self.breakpoints.hits(record)
            if hits:
                hit = hits[0]
                break
        if hit is None:
            cursor = DebugCursor(committed[0], Granularity.ROUND, None)
            header = f"no breakpoint hit; opened session at round {committed[0]}"
        else:
            bp_id, bp = hit
            if bp.client_id is None:
                cursor = DebugCursor(bp.round_id, Granularity.ROUND, None)
            else:
                record = self.store.load_round(bp.round_id)
                pos = record.participant_ids.index(bp.client_id) + 1
                cursor = DebugCursor(bp.round_id, Granularity.CLIENT, pos)
            header = f"hit breakpoint {bp_id} at round {bp.round_id}"
        self.session = DebugSession(self.store, cursor)
        return header + "\n" + self._format_view(self.session.state_view())

    def _step(self, name: str) -> str:
        session = self._need_session()
        result = getattr(session, name)()
        text = self._format_view(result.view)
        if not result.moved:
            text = f"boundary: {result.note}\n" + text
        return text

    def _cmd_next(self, args) -> str:
        return self._step("step_next")

    def _cmd_back(self, args) -> str:
        return self._step("step_back")

    def _cmd_stepin(self, args) -> str:
        return self._step("step_in")

    def _cmd_stepout(self, args) -> str:
        return self._step("step_out")

    def _cmd_inspect(self, args) -> str:
        return self._format_view(self._need_session().state_view())

    def _cmd_localize(self, args) -> str:
        session = self._need_session()
        opts = _parse_options(args)
        record = self.store.load_round(session.cursor.round_index)
        clients = dict(record.client_snapshots)
        arch = next(iter(clients.values())).arch
        seed = int(opts.get("seed", derive_seed("repl", record.round_id)))
        suite = select_test_inputs(
            clients,
            SelectionConfig(
                shape=(arch.input_dim,),
                kappa=int(opts.get("kappa", 10)),
                eta=int(opts["eta"]) if "eta" in opts else None,
                seed=seed,
            ),
        )
        report = localize(
            clients,
            suite,
            LocalizationConfig(activation_threshold=float(opts.get("threshold", 0.003))),
        )
        lines = [
            f"input {v.input_index}: accused={v.accused} "
            f"common={v.max_common_activations} tie={'yes' if v.tie else 'no'}"
            for v in report.per_input
        ]
        lines.append(f"verdict: client {report.verdict}")
        if suite.exhausted:
            lines.append(f"warning: suite exhausted after {suite.attempts} candidates")
        return "\n".join(lines)

    def _cmd_fix(self, args) -> str:
        session = self._need_session()
        ids = []
        rest = list(args)
        while rest and not rest[0].startswith("--"):
            ids.extend(int(part) for part in rest.pop(0).split(","))
        opts = _parse_options(rest)
        if not ids or "from" not in opts:
            return "usage: fix <client_ids> --from <round> [--mode reaggregate|retrain]"
        summary = session.fix_and_replay(
            ids, int(opts["from"]), mode=opts.get("mode", "reaggregate")
        )
        lines = [
            f"branch {summary.branch} created (mode={summary.mode}, "
            f"rounds {summary.rounds[0]}..{summary.rounds[-1]})",
            f"adopted head digest={summary.head_digest[:16]} barred={list(summary.barred)}",
        ]
        if summary.carried_forward_rounds:
            lines.append(
                "warning: rounds carried forward (all participants faulty): "
                + ",".join(str(r) for r in summary.carried_forward_rounds)
            )
        lines.append("session closed")
        return "\n".join(lines)

    def _cmd_resume(self, args) -> str:
        session = self._need_session()
        summary = session.resume()
        first, last = summary.replayed_rounds[0], summary.replayed_rounds[-1]
        return f"replayed rounds {first}..{last}; caught up; session closed"

    def _cmd_quit(self, args) -> str:
        self.done = True
        return "bye"


def _parse_options(args: list[str]) -> dict[str, str]:
    opts: dict[str, str] = {}
    i = 0
    while i < len(args):
        arg = args[i]
        if arg.startswith("--"):
            key = arg[2:]
            if i + 1 < len(args) and not args[i + 1].startswith("--"):
                opts[key] = args[i + 1]
                i += 2
            else:
                opts[key] = "true"
                i += 1
        else:
            raise ValueError(f"unexpected argument {arg}")
    return opts


def run_repl(store: TelemetryStore, stdin: IO[str] = sys.stdin, stdout: IO[str] = sys.stdout) -> int:
    repl = DebugRepl(store)
    interactive = stdin.isatty()
    while not repl.done:
        if interactive:
            stdout.write(PROMPT)
            stdout.flush()
        line = stdin.readline()
        if not line:
            break
        output = repl.handle(line.strip())
        if output:
            stdout.write(output + "\n")
    return 0
