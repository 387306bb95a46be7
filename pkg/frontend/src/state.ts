/**
 * Console state as a pure reducer over decoded server messages. No DOM,
 * no sockets, no clocks in here: given the same message sequence the
 * state (and the recorded badge transitions) is identical, which is
 * what the replay tests lean on.
 *
 * Badges are driven entirely by the server's EVENT feed. The console
 * never infers mutual gaze from relayed GAZE messages; those only feed
 * the "who is facing whom" hints.
 */

import type { SessionMessage } from "./protocol.js";

export type Pair = readonly [string, string];

export interface ExclusionTransition {
  tUs: number;
  kind: "start" | "end";
}

export interface ContactTransition {
  tUs: number;
  kind: "open" | "close";
  peer: string;
}

export interface ConsoleState {
  selfId: string;
  joined: boolean;
  closed: boolean;
  ring: readonly string[];
  ringVersion: number;
  slots: readonly string[];
  gazeTarget: string | null;
  facing: Readonly<Record<string, string | null>>;
  openPairs: readonly Pair[];
  excluded: boolean;
  lastError: string | null;
  lastEventUs: number;
  exclusionTransitions: readonly ExclusionTransition[];
  contactTransitions: readonly ContactTransition[];
}

export function initialState(selfId: string): ConsoleState {
  return {
    selfId,
    joined: false,
    closed: false,
    ring: [],
    ringVersion: 0,
    slots: [],
    gazeTarget: null,
    facing: {},
    openPairs: [],
    excluded: false,
    lastError: null,
    lastEventUs: 0,
    exclusionTransitions: [],
    contactTransitions: [],
  };
}

function samePair(p: Pair, a: string, b: string): boolean {
  return p[0] === a && p[1] === b;
}

function applyEvent(state: ConsoleState, line: Record<string, unknown>): ConsoleState {
  const tUs = typeof line.t_us === "number" ? line.t_us : 0;
  const type = line.type;
  const a = typeof line.a === "string" ? line.a : "";
  const next = { ...state, lastEventUs: tUs };
  if (type === "open" || type === "close") {
    const b = typeof line.b === "string" ? line.b : "";
    if (!a || !b) return state;
    if (type === "open") {
      if (next.openPairs.some((p) => samePair(p, a, b))) return state;
      next.openPairs = [...next.openPairs, [a, b] as const];
    } else {
      next.openPairs = next.openPairs.filter((p) => !samePair(p, a, b));
    }
    if (a === state.selfId || b === state.selfId) {
      const peer = a === state.selfId ? b : a;
      next.contactTransitions = [
        ...next.contactTransitions,
        { tUs, kind: type, peer },
      ];
    }
    return next;
  }
  if (type === "exclusion_start" || type === "exclusion_end") {
    if (a !== state.selfId) return next; // someone else's badge
    next.excluded = type === "exclusion_start";
    next.exclusionTransitions = [
      ...next.exclusionTransitions,
      { tUs, kind: type === "exclusion_start" ? "start" : "end" },
    ];
    return next;
  }
  return state;
}

function applyMembership(state: ConsoleState, msg: SessionMessage): ConsoleState {
  const ring = msg.payload.ring as { order?: unknown; version?: unknown } | undefined;
  const order = Array.isArray(ring?.order) ? (ring!.order as string[]) : state.ring;
  const version = typeof ring?.version === "number" ? ring!.version : state.ringVersion;
  const slots = Array.isArray(msg.payload.slots)
    ? (msg.payload.slots as string[])
    : state.slots;
  const facing: Record<string, string | null> = {};
  for (const [who, target] of Object.entries(state.facing)) {
    if (order.includes(who) && (target === null || order.includes(target))) {
      facing[who] = target;
    }
  }
  return {
    ...state,
    joined: true,
    ring: order,
    ringVersion: version,
    slots,
    facing,
  };
}

export function reduce(state: ConsoleState, msg: SessionMessage): ConsoleState {
  switch (msg.kind) {
    case "WELCOME":
    case "RING_UPDATE":
      return applyMembership(state, msg);
    case "EVENT":
      return applyEvent(state, msg.payload);
    case "GAZE": {
      const target = msg.payload.target;
      return {
        ...state,
        facing: {
          ...state.facing,
          [msg.sender]: typeof target === "string" ? target : null,
        },
      };
    }
    case "ERROR": {
      const message = msg.payload.message;
      return {
        ...state,
        lastError: typeof message === "string" ? message : "unknown error",
      };
    }
    default:
      return state;
  }
}

/** Note our own steering locally (the server echoes it to the others). */
export function noteOwnGaze(state: ConsoleState, target: string | null): ConsoleState {
  return {
    ...state,
    gazeTarget: target,
    facing: { ...state.facing, [state.selfId]: target },
  };
}

export function markClosed(state: ConsoleState): ConsoleState {
  return { ...state, closed: true };
}

// -- selectors -----------------------------------------------------------

/** Peers currently in an eye-contact episode with us. */
export function contactPeers(state: ConsoleState): string[] {
  const peers: string[] = [];
  for (const [a, b] of state.openPairs) {
    if (a === state.selfId) peers.push(b);
    else if (b === state.selfId) peers.push(a);
  }
  return peers.sort();
}

export type KeyAction = { gaze: string | null } | null;

/**
 * Map a key to a gaze action: digits 1..9 pick the matching slot, 0 or
 * Escape avert. Anything else (including digits past the slot count)
 * is no action.
 */
export function actionForKey(state: ConsoleState, key: string): KeyAction {
  if (key === "0" || key === "Escape") return { gaze: null };
  if (/^[1-9]$/.test(key)) {
    const target = state.slots[Number(key) - 1];
    return target === undefined ? null : { gaze: target };
  }
  return null;
}
