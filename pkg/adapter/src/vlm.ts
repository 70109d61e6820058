/**
 * Vision-language naming backend.
 *
 * Talks to an HTTP API that accepts a prompt plus base64 images and returns
 * text. Without credentials every describe request is answered with a typed
 * `auth` error object so the caller can fall back or mark the object
 * unnamed; the connection itself stays healthy.
 */

const MAX_NAMES = 16;

export interface VlmClient {
  describe(images: string[], prompt: string): Promise<string[]>;
}

export interface VlmConfig {
  apiUrl?: string;
  apiKey?: string;
  tries?: number;
}

class VlmError extends Error {
  constructor(readonly code: string, message: string) {
    super(message);
  }
}

async function withRetry<T>(fn: () => Promise<T>, tries: number): Promise<T> {
  let delay = 300;
  let lastError: unknown;
  for (let attempt = 0; attempt < tries; attempt++) {
    try {
      return await fn();
    } catch (err) {
      lastError = err;
      const status = (err as { status?: number }).status;
      const retryable = status === 429 || status === 503 || status === undefined;
      if (!retryable || attempt === tries - 1) throw err;
      await new Promise((resolve) => setTimeout(resolve, delay));
      delay *= 2;
    }
  }
  throw lastError;
}

/** Split model output into candidate names, stripping list markers. */
export function parseNames(text: string): string[] {
  const names: string[] = [];
  const seen = new Set<string>();
  for (const raw of text.split(/\r?\n/)) {
    const cleaned = raw
      .replace(/^\s*(?:[-*•]|\d+[.)])\s*/, "")
      .trim()
      .toLowerCase();
    if (cleaned && !seen.has(cleaned)) {
      seen.add(cleaned);
      names.push(cleaned);
    }
    if (names.length >= MAX_NAMES) break;
  }
  return names;
}

export class HttpVlmClient implements VlmClient {
  private readonly apiUrl?: string;
  private readonly apiKey?: string;
  private readonly tries: number;

  constructor(config: VlmConfig = {}) {
    this.apiUrl = config.apiUrl ?? process.env.VLM_API_URL;
    this.apiKey = config.apiKey ?? process.env.VLM_API_KEY;
    this.tries = config.tries ?? 3;
  }

  async describe(images: string[], prompt: string): Promise<string[]> {
    if (!this.apiKey) {
      throw new VlmError("auth", "no API key configured (set VLM_API_KEY)");
    }
    if (!this.apiUrl) {
      throw new VlmError("config", "no API endpoint configured (set VLM_API_URL)");
    }
    const body = JSON.stringify({
      prompt,
      images: images.map((data) => ({ mime_type: "image/png", data })),
    });
    const text = await withRetry(async () => {
      const response = await fetch(this.apiUrl!, {
        method: "POST",
        headers: {
          "content-type": "application/json",
          authorization: `Bearer ${this.apiKey}`,
        },
        body,
      });
      if (!response.ok) {
        const err = new VlmError(
          response.status === 401 || response.status === 403 ? "auth" : "api",
          `VLM API returned ${response.status}`
        ) as VlmError & { status?: number };
        err.status = response.status;
        throw err;
      }
      return response.text();
    }, this.tries);
    return parseNames(text);
  }
}
