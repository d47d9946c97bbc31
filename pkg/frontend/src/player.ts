/**
 * Playback of service-rendered WAVs and synchronized A/B switching.
 * Nothing here generates audio; it only plays bytes the service returned.
 */

export class RenderPlayer {
  private element: HTMLAudioElement;
  private url: string | null = null;

  constructor(element?: HTMLAudioElement) {
    this.element = element ?? new Audio();
  }

  load(wav: ArrayBuffer): void {
    if (this.url) {
      URL.revokeObjectURL(this.url);
    }
    this.url = URL.createObjectURL(new Blob([wav], { type: "audio/wav" }));
    this.element.src = this.url;
  }

  play(): Promise<void> {
    return this.element.play();
  }

  pause(): void {
    this.element.pause();
  }

  get currentTime(): number {
    return this.element.currentTime;
  }

  set currentTime(value: number) {
    this.element.currentTime = value;
  }
}

/**
 * A/B playback: both renders share one clock; toggling swaps which is
 * audible while the position is preserved, for honest blind comparison.
 */
export class AbComparator {
  active: "a" | "b" = "a";

  constructor(
    private readonly playerA: RenderPlayer,
    private readonly playerB: RenderPlayer,
  ) {}

  loadPair(a: ArrayBuffer, b: ArrayBuffer): void {
    this.playerA.load(a);
    this.playerB.load(b);
  }

  async start(): Promise<void> {
    this.playerA.currentTime = 0;
    this.playerB.currentTime = 0;
    this.active = "a";
    await this.playerA.play();
  }

  async toggle(): Promise<void> {
    const from = this.active === "a" ? this.playerA : this.playerB;
    const to = this.active === "a" ? this.playerB : this.playerA;
    const position = from.currentTime;
    from.pause();
    to.currentTime = position;
    this.active = this.active === "a" ? "b" : "a";
    await to.play();
  }

  stop(): void {
    this.playerA.pause();
    this.playerB.pause();
  }
}
