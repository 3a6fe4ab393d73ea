/** Boot: pull the session token handed over in the URL fragment, strip
 * it from the address bar, and mount the widget. The token never
 * touches persistent storage. */

import { ApiError, GatewayClient } from "./api.js";
import { TranscriptStore } from "./state.js";
import { ChatWidget, loadTranscript, renderErrorPanel } from "./widget.js";

export function tokenFromFragment(hash: string): string | null {
  const match = /(?:^#|&)token=([^&]+)/.exec(hash);
  return match ? decodeURIComponent(match[1]) : null;
}

export async function boot(root: HTMLElement, windowRef: Window = window): Promise<void> {
  const token = tokenFromFragment(windowRef.location.hash);
  if (!token) {
    renderErrorPanel(root, "No session token found.");
    return;
  }
  windowRef.history.replaceState(null, "", windowRef.location.pathname);

  const client = new GatewayClient(token);
  let payload;
  try {
    payload = await client.bootstrap();
  } catch (error) {
    const message =
      error instanceof ApiError && error.status === 401
        ? "Your session has ended."
        : "Could not reach the course assistant.";
    renderErrorPanel(root, message);
    return;
  }

  const store = new TranscriptStore();
  const widget = new ChatWidget(root, client, store, payload);
  widget.mount();
  try {
    await loadTranscript(widget, client, store);
  } catch {
    // an empty transcript is a fine starting point; new turns still work
  }
}

const mountPoint = typeof document !== "undefined" ? document.getElementById("coursegate") : null;
if (mountPoint) {
  void boot(mountPoint);
}
