/**
 * WebSocket event feed with an injectable socket factory.
 *
 * Events are handed to the listener in arrival order; the per-connection
 * sequence numbers are checked and gaps reported (the server guarantees a
 * strictly increasing stream per connection).
 */

import type { ApiEvent } from "./types.js";

export interface SocketLike {
  onmessage: ((event: { data: string }) => void) | null;
  onclose: (() => void) | null;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export class EventFeed {
  private socket: SocketLike | null = null;
  private expectedSeq = 0;

  constructor(
    private url: string,
    private factory: SocketFactory,
    private onEvent: (event: ApiEvent) => void,
    private onGap: (expected: number, got: number) => void = () => {},
  ) {}

  connect(): void {
    this.socket = this.factory(this.url);
    this.socket.onmessage = (message) => {
      const event = JSON.parse(message.data) as ApiEvent;
      if (event.seq !== this.expectedSeq) {
        this.onGap(this.expectedSeq, event.seq);
      }
      this.expectedSeq = event.seq + 1;
      this.onEvent(event);
    };
  }

  close(): void {
    this.socket?.close();
    this.socket = null;
  }
}
