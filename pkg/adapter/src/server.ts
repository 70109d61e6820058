/**
 * Adapter entry point: serve the JSON-lines protocol over stdio (default)
 * or a TCP socket (--port). Requests are handled one at a time, which the
 * handshake declares via `concurrent: false`.
 *
 *   node dist/server.js [--dim 512] [--embedder stub] [--port 9517]
 */
import { createInterface } from "node:readline";
import { createServer } from "node:net";
import { Writable } from "node:stream";

import { createEmbedder } from "./embedder.js";
import { HttpVlmClient } from "./vlm.js";
import { errorResponse, handleLine, type Handler } from "./protocol.js";

interface Options {
  dim: number;
  embedder: string;
  port?: number;
}

function parseArgs(argv: string[]): Options {
  const options: Options = { dim: 512, embedder: "stub" };
  for (let i = 0; i < argv.length; i++) {
    switch (argv[i]) {
      case "--dim":
        options.dim = Number(argv[++i]);
        break;
      case "--embedder":
        options.embedder = argv[++i];
        break;
      case "--port":
        options.port = Number(argv[++i]);
        break;
      default:
        process.stderr.write(`unknown argument: ${argv[i]}\n`);
        process.exit(2);
    }
  }
  return options;
}

async function serveStream(
  input: NodeJS.ReadableStream,
  output: Writable,
  handler: Handler
): Promise<void> {
  const lines = createInterface({ input, crlfDelay: Infinity });
  for await (const line of lines) {
    if (!line.trim()) continue;
    let reply;
    try {
      reply = await handleLine(line, handler);
    } catch (err) {
      // handleLine already maps failures; this is the last-ditch guard so
      // a reply always goes out.
      reply = errorResponse("internal", (err as Error).message);
    }
    output.write(JSON.stringify(reply) + "\n");
  }
}

function main(): void {
  const options = parseArgs(process.argv.slice(2));
  const handler: Handler = {
    embedder: createEmbedder(options.embedder, options.dim),
    vlm: new HttpVlmClient(),
    concurrent: false,
  };
  if (options.port !== undefined) {
    const server = createServer((socket) => {
      serveStream(socket, socket, handler).finally(() => socket.end());
    });
    server.listen(options.port, "127.0.0.1", () => {
      process.stderr.write(`adapter listening on tcp://127.0.0.1:${options.port}\n`);
    });
  } else {
    serveStream(process.stdin, process.stdout, handler).then(() =>
      process.exit(0)
    );
  }
}

main();
