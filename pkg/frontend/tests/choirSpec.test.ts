import { describe, expect, it } from "vitest";

import { generateChoirSpec, mulberry32 } from "../src/choirSpec.js";

describe("seeded generator", () => {
  it("is deterministic per seed", () => {
    const a = Array.from({ length: 5 }, mulberry32(42));
    const b = Array.from({ length: 5 }, mulberry32(42));
    expect(a).toEqual(b);
  });

  it("differs across seeds", () => {
    expect(mulberry32(1)()).not.toBe(mulberry32(2)());
  });
});

describe("choir spec generation", () => {
  const base = [0.5, 0.3, 0.2];

  it("same inputs give identical serialized specs", () => {
    const a = generateChoirSpec(base, 8, 10, 20, 0.5, 7);
    const b = generateChoirSpec(base, 8, 10, 20, 0.5, 7);
    expect(JSON.stringify(a)).toBe(JSON.stringify(b));
  });

  it("singer weights are simplex rows", () => {
    const spec = generateChoirSpec(base, 16, 10, 20, 0.5, 3);
    for (const singer of spec.singers) {
      const total = singer.weights.reduce((x, y) => x + y, 0);
      expect(Math.abs(total - 1)).toBeLessThan(1e-9);
      for (const w of singer.weights) {
        expect(w).toBeGreaterThanOrEqual(0);
      }
    }
  });

  it("jitter respects bounds", () => {
    const spec = generateChoirSpec(base, 64, 45, 55, 0.5, 11);
    for (const singer of spec.singers) {
      expect(Math.abs(singer.detune_cents)).toBeLessThanOrEqual(50);
      expect(Math.abs(singer.onset_shift_ms)).toBeLessThanOrEqual(60);
    }
  });

  it("zero spread pins all singers to the base proportions", () => {
    const spec = generateChoirSpec(base, 4, 0, 0, 0, 5);
    for (const singer of spec.singers) {
      singer.weights.forEach((w, i) => expect(w).toBeCloseTo(base[i], 9));
      expect(singer.detune_cents).toBe(0);
      expect(singer.onset_shift_ms).toBe(0);
    }
  });

  it("rejects empty ensembles", () => {
    expect(() => generateChoirSpec(base, 0, 10, 20, 0.5, 0)).toThrow();
  });
});
