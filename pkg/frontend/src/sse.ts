/** Incremental server-sent-events parser.
 *
 * The browser build uses the native EventSource, which already handles
 * framing and reconnect. This parser exists for headless clients (tests,
 * scripts) that read the stream through fetch and feed decoded text in
 * whatever chunk sizes the transport produced. Frames are emitted only on
 * the blank-line terminator, so a torn chunk mid-frame is safe.
 */

export interface SseFrame {
  id?: string;
  event: string;
  data: string;
}

export interface SseParser {
  push(text: string): void;
}

export function createSseParser(onFrame: (frame: SseFrame) => void): SseParser {
  let buf = "";

  function emit(block: string): void {
    let id: string | undefined;
    let event = "message";
    const data: string[] = [];
    for (const raw of block.split("\n")) {
      const line = raw.endsWith("\r") ? raw.slice(0, -1) : raw;
      if (!line || line.startsWith(":")) continue;
      const sep = line.indexOf(":");
      const field = sep < 0 ? line : line.slice(0, sep);
      let value = sep < 0 ? "" : line.slice(sep + 1);
      if (value.startsWith(" ")) value = value.slice(1);
      if (field === "id") id = value;
      else if (field === "event") event = value;
      else if (field === "data") data.push(value);
    }
    if (id !== undefined || data.length || event !== "message") {
      onFrame({ id, event, data: data.join("\n") });
    }
  }

  return {
    push(text: string): void {
      buf += text;
      // normalize CRLF so the terminator scan only deals with \n\n
      if (buf.includes("\r\n")) buf = buf.replace(/\r\n/g, "\n");
      let at: number;
      while ((at = buf.indexOf("\n\n")) >= 0) {
        const block = buf.slice(0, at);
        buf = buf.slice(at + 2);
        if (block.trim()) emit(block);
      }
    },
  };
}
