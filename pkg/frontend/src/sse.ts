/**
 * Server-sent events over fetch streaming.
 *
 * The incremental parser is separated from the network so it can be fed
 * arbitrary chunk boundaries in tests; subscribe() wires it to a streaming
 * fetch and works in both browsers and node 20.
 */

export interface SseEvent {
  event: string;
  data: string;
}

export class SseParser {
  private buffer = "";
  private eventType = "message";
  private dataLines: string[] = [];

  /** Feed a text chunk; returns the events completed by this chunk. */
  feed(chunk: string): SseEvent[] {
    this.buffer += chunk;
    const events: SseEvent[] = [];
    let index: number;
    while ((index = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, index).replace(/\r$/, "");
      this.buffer = this.buffer.slice(index + 1);
      if (line === "") {
        if (this.dataLines.length > 0) {
          events.push({ event: this.eventType,
                        data: this.dataLines.join("\n") });
        }
        this.eventType = "message";
        this.dataLines = [];
      } else if (line.startsWith("event:")) {
        this.eventType = line.slice(6).trimStart();
      } else if (line.startsWith("data:")) {
        this.dataLines.push(line.slice(5).trimStart());
      }
      // comments (:) and other fields are ignored
    }
    return events;
  }
}

export interface SseHandlers {
  onEvent: (event: SseEvent) => void;
  onDone?: () => void;
  onError?: (error: unknown) => void;
}

/** Stream an SSE endpoint until it closes; resolves when the stream ends. */
export async function subscribe(url: string, handlers: SseHandlers,
                                fetchImpl: typeof fetch = fetch): Promise<void> {
  try {
    const response = await fetchImpl(url, {
      headers: { Accept: "text/event-stream" },
    });
    if (!response.ok || !response.body) {
      throw new Error(`event stream failed: ${response.status}`);
    }
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    const parser = new SseParser();
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      for (const event of parser.feed(decoder.decode(value, { stream: true }))) {
        handlers.onEvent(event);
      }
    }
    handlers.onDone?.();
  } catch (error) {
    if (handlers.onError) handlers.onError(error);
    else throw error;
  }
}
