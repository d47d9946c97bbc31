/**
 * Live parity check against a running service. Skipped unless SERVICE_URL
 * points at one; CLI_WAV may name a WAV produced by the command line with
 * the same payload for the byte-identity assertion.
 *
 *   SERVICE_URL=http://127.0.0.1:8000 CLI_WAV=/tmp/cli.wav vitest run
 */

import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { ServiceClient, serializeAudition } from "../src/api.js";
import { initialState } from "../src/state.js";

const serviceUrl = process.env.SERVICE_URL;

describe.skipIf(!serviceUrl)("live service parity", () => {
  it("one-hot audition matches the CLI render byte for byte", async () => {
    const client = new ServiceClient(serviceUrl!);
    const prototypes = await client.prototypes();
    const melodies = await client.melodies();
    expect(prototypes.length).toBeGreaterThan(0);
    expect(melodies.length).toBeGreaterThan(0);

    const state = {
      ...initialState(prototypes.length),
      melodyId: melodies[0].id,
      rawWeights: prototypes.map((_, i) => (i === 0 ? 1 : 0)),
      seed: 7,
    };
    const request = serializeAudition(state);
    expect(request.endpoint).toBe("/v1/synthesize");

    const first = await client.render(request);
    const second = await client.render(request);
    expect(Buffer.from(first.wav).equals(Buffer.from(second.wav))).toBe(true);

    const cliWav = process.env.CLI_WAV;
    if (cliWav) {
      const cliBytes = readFileSync(cliWav);
      expect(Buffer.from(first.wav).equals(cliBytes)).toBe(true);
    }
  });
});
