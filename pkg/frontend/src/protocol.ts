/**
 * Wire envelope shared with the session host: one JSON object per
 * message, canonical field order (kind, seq, sender, sent_us, payload),
 * newline-terminated. Encoding here must match the host byte for byte
 * so logs and transcripts line up across languages.
 */

export const KINDS = [
  "JOIN",
  "WELCOME",
  "RING_UPDATE",
  "GAZE",
  "FRAME_STUB",
  "HEARTBEAT",
  "LEAVE",
  "EVENT",
  "ERROR",
] as const;

export type Kind = (typeof KINDS)[number];

export interface SessionMessage {
  kind: Kind;
  seq: number;
  sender: string;
  sentUs: number;
  payload: Record<string, unknown>;
}

export class ProtocolError extends Error {}

export function encodeMessage(m: SessionMessage): string {
  if (!KINDS.includes(m.kind)) {
    throw new ProtocolError(`unknown kind ${JSON.stringify(m.kind)}`);
  }
  if (!Number.isInteger(m.seq) || m.seq < 0) {
    throw new ProtocolError(`seq must be a non-negative integer, got ${m.seq}`);
  }
  if (!m.sender) {
    throw new ProtocolError("sender must be a non-empty string");
  }
  if (!Number.isInteger(m.sentUs)) {
    throw new ProtocolError(`sent_us must be an integer, got ${m.sentUs}`);
  }
  // Property order in a literal is preserved by JSON.stringify, which
  // is what keeps this canonical.
  return (
    JSON.stringify({
      kind: m.kind,
      seq: m.seq,
      sender: m.sender,
      sent_us: m.sentUs,
      payload: m.payload,
    }) + "\n"
  );
}

export function decodeMessage(data: string): SessionMessage {
  const line = data.endsWith("\n") ? data.slice(0, -1) : data;
  if (line.includes("\n")) {
    throw new ProtocolError("expected a single message line");
  }
  let obj: unknown;
  try {
    obj = JSON.parse(line);
  } catch (err) {
    throw new ProtocolError(`invalid JSON: ${(err as Error).message}`);
  }
  if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
    throw new ProtocolError("message must be a JSON object");
  }
  const rec = obj as Record<string, unknown>;
  const fields = ["kind", "seq", "sender", "sent_us", "payload"];
  const keys = Object.keys(rec).sort();
  if (keys.length !== fields.length || !fields.every((f) => f in rec)) {
    throw new ProtocolError(`expected fields ${fields.join(", ")}, got ${keys.join(", ")}`);
  }
  const kind = rec.kind;
  if (typeof kind !== "string" || !(KINDS as readonly string[]).includes(kind)) {
    throw new ProtocolError(`unknown kind ${JSON.stringify(kind)}`);
  }
  if (typeof rec.seq !== "number" || !Number.isInteger(rec.seq) || rec.seq < 0) {
    throw new ProtocolError(`seq must be a non-negative integer, got ${rec.seq}`);
  }
  if (typeof rec.sender !== "string" || rec.sender === "") {
    throw new ProtocolError("sender must be a non-empty string");
  }
  if (typeof rec.sent_us !== "number" || !Number.isInteger(rec.sent_us)) {
    throw new ProtocolError(`sent_us must be an integer, got ${rec.sent_us}`);
  }
  if (typeof rec.payload !== "object" || rec.payload === null || Array.isArray(rec.payload)) {
    throw new ProtocolError("payload must be an object");
  }
  return {
    kind: kind as Kind,
    seq: rec.seq,
    sender: rec.sender,
    sentUs: rec.sent_us,
    payload: rec.payload as Record<string, unknown>,
  };
}
