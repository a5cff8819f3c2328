/**
 * Pure HTML renderers over the view model.
 *
 * Values print through String(...) with no reformatting, so what the user
 * reads is exactly what the server sent. Rendering the same state twice
 * yields identical markup.
 */

import type { DashboardState, SessionPanel } from "./state.js";
import { timeline } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function show(value: unknown): string {
  return escapeHtml(String(value));
}

export function renderTimeline(state: DashboardState): string {
  const entries = timeline(state);
  const cells = entries.map((entry) => {
    const classes = ["round"];
    if (entry.hasBreakpoint) classes.push("breakpoint");
    if (entry.branchMarkers.length) classes.push("branched");
    if (state.session && state.session.state.cursor.round === entry.round.round_id) {
      classes.push("cursor");
    }
    const loss =
      entry.round.mean_training_loss === null ? "-" : show(entry.round.mean_training_loss);
    const markers = entry.branchMarkers.length
      ? `<span class="branch-markers">${entry.branchMarkers.map(show).join(",")}</span>`
      : "";
    return (
      `<li class="${classes.join(" ")}" data-round="${entry.round.round_id}">` +
      `<span class="round-id">R${entry.round.round_id}</span>` +
      `<span class="loss">loss ${loss}</span>` +
      `<span class="participants">${show(entry.round.num_participants)} clients</span>` +
      markers +
      `</li>`
    );
  });
  return (
    `<div class="timeline" data-head="${show(state.head)}">` +
    `<span class="head-pointer">head: ${show(state.head)}</span>` +
    `<ul>${cells.join("")}</ul></div>`
  );
}

function renderMetricsTable(panel: SessionPanel): string {
  const rows = panel.state.participants.map((cid) => {
    const m = panel.state.metrics[String(cid)];
    return (
      `<tr data-client="${cid}">` +
      `<td>${cid}</td>` +
      `<td>${show(m.training_loss)}</td>` +
      `<td>${show(m.response_time)}</td>` +
      `<td>${show(m.dataset_size)}</td>` +
      `<td>${show(m.learning_rate)}</td>` +
      `<td>${show(m.epochs)}</td>` +
      `</tr>`
    );
  });
  return (
    `<table class="metrics"><thead><tr>` +
    `<th>client</th><th>training loss</th><th>response time</th>` +
    `<th>examples</th><th>lr</th><th>epochs</th>` +
    `</tr></thead><tbody>${rows.join("")}</tbody></table>`
  );
}

function renderLocalization(panel: SessionPanel): string {
  if (!panel.localization) return "";
  const rows = panel.localization.per_input.map(
    (v) =>
      `<tr><td>${show(v.input_index)}</td><td>${show(v.accused)}</td>` +
      `<td>${show(v.max_common_activations)}</td><td>${v.tie ? "tie" : ""}</td></tr>`,
  );
  return (
    `<div class="localization">` +
    `<h3>localization (threshold ${show(panel.localization.threshold)}, ` +
    `${show(panel.localization.suite_size)} inputs)</h3>` +
    `<table><thead><tr><th>input</th><th>accused</th><th>common</th><th></th></tr></thead>` +
    `<tbody>${rows.join("")}</tbody></table>` +
    `<p class="verdict">verdict: client ${show(panel.localization.verdict)}</p>` +
    `</div>`
  );
}

function renderFix(panel: SessionPanel): string {
  if (!panel.fix) return "";
  return (
    `<div class="fix-summary">fix applied: branch ${show(panel.fix.branch)} ` +
    `(${show(panel.fix.mode)}) from round ${show(panel.fix.from_round)}, ` +
    `head ${show(panel.fix.head_digest)}, barred ${panel.fix.barred.map(show).join(",")}</div>`
  );
}

export function renderSession(state: DashboardState): string {
  const panel = state.session;
  if (!panel) {
    return `<div class="session empty">no debug session</div>`;
  }
  const cursor = panel.state.cursor;
  const position =
    cursor.granularity === "client"
      ? ` position ${show(cursor.client_position)}/${panel.state.participants.length}`
      : "";
  const disabled = state.pendingAction || panel.closed ? " disabled" : "";
  const controls = (["next", "back", "in", "out"] as const)
    .map((d) => `<button class="step" data-direction="${d}"${disabled}>step ${d}</button>`)
    .concat([
      `<button class="resume"${disabled}>resume</button>`,
      `<button class="localize"${disabled}>localize</button>`,
      `<button class="fix"${disabled}>fix…</button>`,
    ])
    .join("");
  const confirm = state.pendingFix
    ? `<div class="confirm-fix">remove clients ${state.pendingFix.faulty.map(show).join(",")} ` +
      `from round ${show(state.pendingFix.fromRound)}? ` +
      `<button class="confirm">confirm</button><button class="cancel">cancel</button></div>`
    : "";
  return (
    `<div class="session${panel.closed ? " closed" : ""}" data-session="${panel.sessionId}">` +
    `<h2>session ${panel.sessionId} / round ${show(cursor.round)} ` +
    `(${show(cursor.granularity)}${position})</h2>` +
    `<p class="partial-global">partial global ${show(panel.state.partial_global.digest)}</p>` +
    (panel.note ? `<p class="note">${show(panel.note)}</p>` : "") +
    `<div class="controls">${controls}</div>` +
    confirm +
    renderMetricsTable(panel) +
    renderLocalization(panel) +
    renderFix(panel) +
    `</div>`
  );
}

export function renderApp(state: DashboardState): string {
  return renderTimeline(state) + renderSession(state);
}
