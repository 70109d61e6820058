/**
 * Text embedding backends.
 *
 * The stub backend derives a unit vector deterministically from a SHA-256
 * digest of the text: same text, same vector, on any machine, with no model
 * weights. It stands in for a real text encoder during development and in
 * the protocol conformance suite. A real encoder (e.g. an ONNX CLIP text
 * tower) plugs in behind the same interface.
 */
import { createHash } from "node:crypto";

export interface Embedder {
  readonly dim: number;
  embed(text: string): number[];
}

/** xorshift128+ seeded from digest bytes; fast and fully deterministic. */
class SeededRng {
  private s0: bigint;
  private s1: bigint;
  private static readonly MASK = (1n << 64n) - 1n;

  constructor(seed: Buffer) {
    this.s0 = seed.readBigUInt64LE(0) | 1n;
    this.s1 = seed.readBigUInt64LE(8) | 1n;
  }

  next(): number {
    let x = this.s0;
    const y = this.s1;
    this.s0 = y;
    x = (x ^ (x << 23n)) & SeededRng.MASK;
    x ^= x >> 17n;
    x ^= y ^ (y >> 26n);
    this.s1 = x;
    const sum = (x + y) & SeededRng.MASK;
    return Number(sum >> 11n) / 2 ** 53;
  }

  /** Standard normal via Box-Muller. */
  normal(): number {
    const u = Math.max(this.next(), Number.MIN_VALUE);
    const v = this.next();
    return Math.sqrt(-2.0 * Math.log(u)) * Math.cos(2.0 * Math.PI * v);
  }
}

export class StubEmbedder implements Embedder {
  constructor(readonly dim: number = 512) {}

  embed(text: string): number[] {
    const digest = createHash("sha256").update(text, "utf8").digest();
    const rng = new SeededRng(digest);
    const vector = Array.from({ length: this.dim }, () => rng.normal());
    const norm = Math.hypot(...vector);
    return vector.map((x) => x / norm);
  }
}

export function createEmbedder(kind: string, dim: number): Embedder {
  if (kind === "stub") {
    return new StubEmbedder(dim);
  }
  const err = new Error(`unknown embedder '${kind}' (available: stub)`) as Error & {
    code: string;
  };
  err.code = "config";
  throw err;
}
