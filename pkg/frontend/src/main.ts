import { ConsoleClient } from "./client.js";
import { render } from "./view.js";

function param(name: string, fallback: string): string {
  return new URLSearchParams(location.search).get(name) ?? fallback;
}

const root = document.getElementById("app");
if (root === null) throw new Error("missing #app container");

const client = new ConsoleClient({
  url: param("url", `ws://${location.hostname || "127.0.0.1"}:8765`),
  selfId: param("id", `guest-${Math.floor(Math.random() * 10_000)}`),
});

client.onChange((state) => render(state, root));
render(client.state, root);

document.addEventListener("keydown", (ev) => {
  if (client.handleKey(ev.key)) ev.preventDefault();
});
window.addEventListener("beforeunload", () => client.leave());

client.connect().catch((err) => {
  const banner = document.createElement("div");
  banner.className = "error";
  banner.textContent = `could not join: ${err.message}`;
  root.prepend(banner);
});
