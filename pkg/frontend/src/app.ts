/**
 * Dashboard controller: the actions the UI buttons invoke.
 *
 * Every action follows the same discipline: set the pending flag, call the
 * API, apply the confirmed response (or the resulting event) to the view
 * model, re-render. No state changes before server confirmation.
 */

import { ApiClient } from "./api.js";
import { EventFeed, SocketFactory } from "./events.js";
import {
  DashboardState,
  applyEvent,
  initialState,
  loadRounds,
} from "./state.js";
import { renderApp } from "./render.js";
import type { ApiEvent, SessionStateBody, StepDirection } from "./types.js";

export class Dashboard {
  state: DashboardState = initialState();
  private feed: EventFeed | null = null;

  constructor(
    private api: ApiClient,
    private onRender: (html: string) => void = () => {},
  ) {}

  render(): string {
    const html = renderApp(this.state);
    this.onRender(html);
    return html;
  }

  private update(mutate: (state: DashboardState) => DashboardState): void {
    this.state = mutate(this.state);
    this.render();
  }

  /** Initial load plus live event stream. */
  async start(socketFactory?: SocketFactory, eventsUrl = "/events?replay=0"): Promise<void> {
    const body = await this.api.getRounds();
    this.update((s) => loadRounds(s, body));
    if (socketFactory) {
      this.feed = new EventFeed(eventsUrl, socketFactory, (event) => this.handleEvent(event));
      this.feed.connect();
    }
  }

  handleEvent(event: ApiEvent): void {
    this.update((s) => applyEvent(s, event));
  }

  private async confirmed<T>(action: () => Promise<T>): Promise<T> {
    this.update((s) => ({ ...s, pendingAction: true }));
    try {
      return await action();
    } finally {
      this.update((s) => ({ ...s, pendingAction: false }));
    }
  }

  async setBreakpoint(roundId: number, clientId?: number): Promise<void> {
    await this.confirmed(() => this.api.setBreakpoint(roundId, clientId));
    this.update((s) => ({
      ...s,
      breakpoints: s.breakpoints.some(
        (b) => b.round_id === roundId && b.client_id === (clientId ?? null),
      )
        ? s.breakpoints
        : [...s.breakpoints, { round_id: roundId, client_id: clientId ?? null }],
    }));
  }

  async openSession(roundId: number): Promise<void> {
    const body = await this.confirmed(() => this.api.openSession(roundId));
    this.applySessionState(body.session_id, body.state, null);
  }

  private applySessionState(
    sessionId: number,
    state: SessionStateBody,
    note: string | null,
  ): void {
    this.update((s) => ({
      ...s,
      session: {
        sessionId,
        state,
        note,
        closed: s.session?.sessionId === sessionId ? s.session.closed : false,
        localization: s.session?.sessionId === sessionId ? s.session.localization : null,
        fix: s.session?.sessionId === sessionId ? s.session.fix : null,
      },
    }));
  }

  async step(direction: StepDirection): Promise<void> {
    const session = this.state.session;
    if (!session || session.closed) return;
    const body = await this.confirmed(() => this.api.step(session.sessionId, direction));
    this.applySessionState(session.sessionId, body.state, body.note);
  }

  async resume(): Promise<void> {
    const session = this.state.session;
    if (!session || session.closed) return;
    await this.confirmed(() => this.api.resume(session.sessionId));
    this.update((s) => ({
      ...s,
      session: s.session ? { ...s.session, closed: true, note: "resumed; session closed" } : null,
    }));
  }

  async localize(options: { threshold?: number; kappa?: number; eta?: number; seed?: number } = {}): Promise<void> {
    const session = this.state.session;
    if (!session || session.closed) return;
    const body = await this.confirmed(() => this.api.localize(session.sessionId, options));
    this.update((s) => ({
      ...s,
      session: s.session ? { ...s.session, localization: body } : null,
    }));
  }

  /** Fix is two-step: request shows a confirmation, confirm issues the call. */
  requestFix(faulty: number[], fromRound: number): void {
    this.update((s) => ({ ...s, pendingFix: { faulty, fromRound } }));
  }

  cancelFix(): void {
    this.update((s) => ({ ...s, pendingFix: null }));
  }

  async confirmFix(mode: "reaggregate" | "retrain" = "reaggregate"): Promise<void> {
    const session = this.state.session;
    const pending = this.state.pendingFix;
    if (!session || !pending) return;
    const body = await this.confirmed(() =>
      this.api.fix(session.sessionId, pending.faulty, pending.fromRound, mode),
    );
    this.update((s) =>
      applyEvent(
        { ...s, pendingFix: null, lastSeq: s.lastSeq === null ? null : s.lastSeq },
        // the response body doubles as the FIX_APPLIED payload; reuse the
        // reducer so direct responses and streamed events render identically
        { kind: "FIX_APPLIED", seq: (s.lastSeq ?? -1) + 1, payload: body as unknown as Record<string, unknown> },
      ),
    );
  }

  stop(): void {
    this.feed?.close();
  }
}
