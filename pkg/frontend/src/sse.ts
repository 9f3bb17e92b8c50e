// Tick subscription over server-sent events. Ticks carry no data
// (pull-on-notify); EventSource reconnects on drop by itself, and since
// the server keeps no per-client state there is nothing to resume.

import type { UseCase } from "./api.js";

export function subscribeTicks(url: string, onTick: (useCase: UseCase) => void): () => void {
  const source = new EventSource(url);
  source.addEventListener("tick", (event) => {
    try {
      const doc = JSON.parse((event as MessageEvent).data);
      if (doc.use_case === "traffic" || doc.use_case === "lighting") {
        onTick(doc.use_case);
      }
    } catch {
      // malformed tick: ignore, the next one is at most 60s away
    }
  });
  source.onerror = () => {
    // native auto-reconnect; nothing to do
  };
  return () => source.close();
}
