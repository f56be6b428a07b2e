// Client-side mirror of the server's 2-hop explanation context, used only
// to decide what to draw; all numbers still come from the API.

export const CONTEXT_HOPS = 2;

export function twoHopContext(
  edges: [number, number][],
  targetId: number,
  hops: number = CONTEXT_HOPS,
): Set<number> {
  const adj = new Map<number, number[]>();
  for (const [a, b] of edges) {
    if (!adj.has(a)) adj.set(a, []);
    if (!adj.has(b)) adj.set(b, []);
    adj.get(a)!.push(b);
    adj.get(b)!.push(a);
  }
  const seen = new Set<number>([targetId]);
  let frontier = [targetId];
  for (let depth = 0; depth < hops; depth++) {
    const next: number[] = [];
    for (const node of frontier) {
      for (const nb of adj.get(node) ?? []) {
        if (!seen.has(nb)) {
          seen.add(nb);
          next.push(nb);
        }
      }
    }
    frontier = next;
  }
  return seen;
}
