/** Browser bootstrap: bind the controller to the page and delegate clicks. */

import { ApiClient } from "./api.js";
import { Dashboard } from "./app.js";
import type { StepDirection } from "./types.js";

function bootstrap(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const api = new ApiClient("", (url, init) => fetch(url, init));
  const dashboard = new Dashboard(api, (html) => {
    root.innerHTML = html;
  });

  root.addEventListener("click", (raw) => {
    const target = raw.target as HTMLElement;
    const round = target.closest<HTMLElement>(".round");
    if (round && raw.shiftKey) {
      void dashboard.setBreakpoint(Number(round.dataset.round));
      return;
    }
    if (round) {
      void dashboard.openSession(Number(round.dataset.round));
      return;
    }
    if (target.matches("button.step")) {
      void dashboard.step(target.dataset.direction as StepDirection);
    } else if (target.matches("button.resume")) {
      void dashboard.resume();
    } else if (target.matches("button.localize")) {
      void dashboard.localize();
    } else if (target.matches("button.fix")) {
      const session = dashboard.state.session;
      const verdict = session?.localization?.verdict;
      if (verdict !== undefined && session) {
        dashboard.requestFix([verdict], session.state.cursor.round);
      }
    } else if (target.matches("button.confirm")) {
      void dashboard.confirmFix();
    } else if (target.matches("button.cancel")) {
      dashboard.cancelFix();
    }
  });

  const wsUrl = `ws://${location.host}/events?replay=1`;
  void dashboard.start((url) => {
    const ws = new WebSocket(url.startsWith("ws") ? url : wsUrl);
    const adapter = {
      onmessage: null as ((event: { data: string }) => void) | null,
      onclose: null as (() => void) | null,
      close: () => ws.close(),
    };
    ws.onmessage = (ev) => adapter.onmessage?.({ data: String(ev.data) });
    ws.onclose = () => adapter.onclose?.();
    return adapter;
  }, wsUrl);
}

bootstrap();
