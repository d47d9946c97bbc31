/**
 * Client-side choir recipe generation with a seeded generator, so a given
 * (state, seed) always serializes to the identical request body.
 */

const MAX_DETUNE_CENTS = 50;
const MAX_ONSET_SHIFT_MS = 60;

export interface ChoirSinger {
  weights: number[];
  detune_cents: number;
  onset_shift_ms: number;
  gain: number;
}

export interface ChoirSpecPayload {
  seed: number;
  singers: ChoirSinger[];
}

/** mulberry32: small, fast, reproducible across platforms. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function gaussian(rand: () => number): number {
  // Box-Muller; guard against log(0)
  const u = Math.max(rand(), 1e-12);
  const v = rand();
  return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v);
}

/** Dirichlet(1) = normalized unit exponentials: uniform over the simplex. */
function dirichlet(rand: () => number, k: number): number[] {
  const draws = Array.from({ length: k }, () => -Math.log(Math.max(rand(), 1e-12)));
  const total = draws.reduce((a, b) => a + b, 0);
  return draws.map((d) => d / total);
}

const clamp = (x: number, lo: number, hi: number) => Math.min(hi, Math.max(lo, x));

/**
 * Singer weights blend the user's proportions with a random simplex point;
 * spread 0 pins every singer to the sliders, spread 1 ignores them.
 */
export function generateChoirSpec(
  baseWeights: number[],
  nSingers: number,
  detuneSdCents: number,
  onsetSdMs: number,
  timbreSpread: number,
  seed: number,
): ChoirSpecPayload {
  if (nSingers < 1) {
    throw new Error("a choir needs at least one singer");
  }
  const rand = mulberry32(seed);
  const singers: ChoirSinger[] = [];
  for (let i = 0; i < nSingers; i++) {
    const random = dirichlet(rand, baseWeights.length);
    const blended = baseWeights.map(
      (w, j) => (1 - timbreSpread) * w + timbreSpread * random[j],
    );
    const total = blended.reduce((a, b) => a + b, 0);
    singers.push({
      weights: blended.map((w) => w / total),
      detune_cents: clamp(
        detuneSdCents > 0 ? gaussian(rand) * detuneSdCents : 0,
        -MAX_DETUNE_CENTS,
        MAX_DETUNE_CENTS,
      ),
      onset_shift_ms: clamp(
        onsetSdMs > 0 ? gaussian(rand) * onsetSdMs : 0,
        -MAX_ONSET_SHIFT_MS,
        MAX_ONSET_SHIFT_MS,
      ),
      gain: 1,
    });
  }
  return { seed, singers };
}
