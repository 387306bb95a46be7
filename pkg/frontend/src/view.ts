/** DOM rendering: one render(state) pass, no retained widget state. */

import { ConsoleState, contactPeers } from "./state.js";

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function render(state: ConsoleState, root: HTMLElement) {
  root.replaceChildren();

  const header = el("div", "header");
  header.append(el("span", "self", state.selfId));
  const status = state.closed ? "disconnected" : state.joined ? "joined" : "connecting";
  header.append(el("span", `status status-${status}`, status));
  header.append(el("span", "ring-version", `ring v${state.ringVersion}`));
  root.append(header);

  if (state.lastError) {
    root.append(el("div", "error", state.lastError));
  }

  const badges = el("div", "badges");
  const peers = contactPeers(state);
  const contact = el(
    "div",
    peers.length ? "badge contact on" : "badge contact",
    peers.length ? `eye contact: ${peers.join(", ")}` : "no eye contact",
  );
  badges.append(contact);
  const excluded = el(
    "div",
    state.excluded ? "badge excluded on" : "badge excluded",
    state.excluded ? "left out" : "",
  );
  badges.append(excluded);
  root.append(badges);

  const table = el("div", "seats");
  state.slots.forEach((who, i) => {
    const seat = el("div", "seat");
    seat.append(el("kbd", "key", String(i + 1)));
    seat.append(el("span", "name", who));
    if (state.gazeTarget === who) seat.classList.add("looking");
    const theirTarget = state.facing[who];
    if (theirTarget !== undefined) {
      seat.append(
        el("span", "facing", theirTarget === null ? "(averted)" : `→ ${theirTarget}`),
      );
    }
    table.append(seat);
  });
  root.append(table);

  const hint = el(
    "div",
    "hint",
    state.slots.length
      ? "press 1-9 to look at a seat, 0 or Esc to look away"
      : "waiting for other participants",
  );
  root.append(hint);
}
