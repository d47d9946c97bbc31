/**
 * Completed renders, cached by request-body hash so A/B comparison replays
 * instantly instead of re-hitting the service.
 */

export interface CompletedRender {
  hash: string;
  requestId: string;
  wav: ArrayBuffer;
  params: Record<string, unknown>;
  renderMs: number;
}

export class RenderCache {
  private byHash = new Map<string, CompletedRender>();

  get(hash: string): CompletedRender | undefined {
    return this.byHash.get(hash);
  }

  put(render: CompletedRender): void {
    this.byHash.set(render.hash, render);
  }

  get size(): number {
    return this.byHash.size;
  }
}

export interface CompareModel {
  a: CompletedRender | null;
  b: CompletedRender | null;
}

/** Compare is enabled only once both slots hold completed renders. */
export function compareEnabled(model: CompareModel): boolean {
  return model.a != null && model.b != null;
}

/** Rows of (key, valueA, valueB, differs) for the parameter diff table. */
export function parameterDiff(
  a: Record<string, unknown>,
  b: Record<string, unknown>,
): Array<{ key: string; a: string; b: string; differs: boolean }> {
  const keys = Array.from(new Set([...Object.keys(a), ...Object.keys(b)])).sort();
  return keys.map((key) => {
    const left = JSON.stringify(a[key]);
    const right = JSON.stringify(b[key]);
    return { key, a: left, b: right, differs: left !== right };
  });
}
