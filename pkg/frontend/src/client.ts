/**
 * WebSocket client for the session host. Owns the socket, the sequence
 * counter, and the heartbeat echo; all interpretation of what arrives
 * is delegated to the reducer in state.ts.
 *
 * The socket constructor is injectable so tests can drive the exact
 * same code from node with the `ws` package.
 */

import { decodeMessage, encodeMessage, ProtocolError, SessionMessage } from "./protocol.js";
import {
  actionForKey,
  ConsoleState,
  initialState,
  markClosed,
  noteOwnGaze,
  reduce,
} from "./state.js";

export interface WireSocket {
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  send(data: string): void;
  close(): void;
}

export type SocketFactory = (url: string) => WireSocket;

export interface ClientOptions {
  url: string;
  selfId: string;
  socketFactory?: SocketFactory;
  nowUs?: () => number;
}

type Listener = (state: ConsoleState) => void;

const browserFactory: SocketFactory = (url) =>
  new WebSocket(url) as unknown as WireSocket;

export class ConsoleClient {
  state: ConsoleState;
  /** Every decoded message, in arrival order, for replay checks. */
  readonly transcript: SessionMessage[] = [];

  private ws: WireSocket | null = null;
  private seq = 0;
  private listeners: Listener[] = [];
  private readonly url: string;
  private readonly makeSocket: SocketFactory;
  private readonly nowUs: () => number;

  constructor(opts: ClientOptions) {
    this.url = opts.url;
    this.makeSocket = opts.socketFactory ?? browserFactory;
    this.nowUs = opts.nowUs ?? (() => Date.now() * 1000);
    this.state = initialState(opts.selfId);
  }

  onChange(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private setState(next: ConsoleState) {
    if (next === this.state) return;
    this.state = next;
    for (const listener of this.listeners) listener(next);
  }

  private sendMessage(kind: SessionMessage["kind"], payload: Record<string, unknown>) {
    if (this.ws === null) return;
    this.seq += 1;
    this.ws.send(
      encodeMessage({
        kind,
        seq: this.seq,
        sender: this.state.selfId,
        sentUs: this.nowUs(),
        payload,
      }),
    );
  }

  /** Open the socket and join; resolves once the host says WELCOME. */
  connect(): Promise<void> {
    return new Promise((resolve, reject) => {
      const ws = this.makeSocket(this.url);
      this.ws = ws;
      let settled = false;
      const fail = (err: Error) => {
        if (!settled) {
          settled = true;
          reject(err);
        }
      };
      ws.onopen = () => this.sendMessage("JOIN", {});
      ws.onerror = () => fail(new Error("websocket error before join"));
      ws.onclose = () => {
        this.setState(markClosed(this.state));
        fail(new Error("connection closed before join"));
      };
      ws.onmessage = (ev) => {
        let msg: SessionMessage;
        try {
          msg = decodeMessage(typeof ev.data === "string" ? ev.data : String(ev.data));
        } catch (err) {
          if (err instanceof ProtocolError) return; // not ours to crash on
          throw err;
        }
        this.transcript.push(msg);
        if (msg.kind === "HEARTBEAT") {
          this.sendMessage("HEARTBEAT", {});
        }
        if (!settled && msg.kind === "ERROR") {
          const reason = msg.payload.message;
          fail(new Error(typeof reason === "string" ? reason : "join rejected"));
        }
        this.setState(reduce(this.state, msg));
        if (!settled && msg.kind === "WELCOME") {
          settled = true;
          resolve();
        }
      };
    });
  }

  gazeAt(target: string | null) {
    this.sendMessage("GAZE", { target, at_us: this.nowUs() });
    this.setState(noteOwnGaze(this.state, target));
  }

  gazeAtSlot(index: number) {
    const target = this.state.slots[index];
    if (target !== undefined) this.gazeAt(target);
  }

  /** Returns true when the key meant something and was acted on. */
  handleKey(key: string): boolean {
    const action = actionForKey(this.state, key);
    if (action === null) return false;
    this.gazeAt(action.gaze);
    return true;
  }

  leave() {
    this.sendMessage("LEAVE", {});
    this.close();
  }

  close() {
    this.ws?.close();
  }
}
