/**
 * Wire protocol: one JSON request per line, exactly one JSON response per
 * line. Failures are answered with `{"error": {code, message}}` objects;
 * the stream is never dropped because of a bad request.
 */
import type { Embedder } from "./embedder.js";
import type { VlmClient } from "./vlm.js";

export interface HelloResponse {
  dim: number;
  concurrent: boolean;
}

export interface ErrorResponse {
  error: { code: string; message: string };
}

export type Response =
  | HelloResponse
  | { vectors: number[][] }
  | { names: string[] }
  | ErrorResponse;

export function errorResponse(code: string, message: string): ErrorResponse {
  return { error: { code, message } };
}

export interface Handler {
  embedder: Embedder;
  vlm: VlmClient;
  /** Serial request handling; reported in the handshake. */
  concurrent: boolean;
}

export async function handleLine(line: string, handler: Handler): Promise<Response> {
  let doc: unknown;
  try {
    doc = JSON.parse(line);
  } catch (err) {
    return errorResponse("malformed", `invalid JSON: ${(err as Error).message}`);
  }
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    return errorResponse("malformed", "request must be a JSON object");
  }
  const request = doc as Record<string, unknown>;
  if (typeof request.op !== "string") {
    return errorResponse("malformed", "missing 'op' field");
  }
  try {
    switch (request.op) {
      case "hello":
        return { dim: handler.embedder.dim, concurrent: handler.concurrent };
      case "embed": {
        if (!Array.isArray(request.texts)) {
          return errorResponse("bad_request", "'texts' must be a list");
        }
        const texts = request.texts.map((t) => String(t));
        return { vectors: texts.map((t) => handler.embedder.embed(t)) };
      }
      case "describe": {
        const images = Array.isArray(request.images)
          ? request.images.map((i) => String(i))
          : [];
        const prompt = typeof request.prompt === "string" ? request.prompt : "";
        const names = await handler.vlm.describe(images, prompt);
        return { names };
      }
      default:
        return errorResponse("bad_request", `unknown op '${request.op}'`);
    }
  } catch (err) {
    const e = err as Error & { code?: string };
    return errorResponse(e.code ?? "internal", e.message);
  }
}
