/**
 * In-process stand-in for the annotation service, implementing the same
 * wire contract: seeded left/right presentation, duplicate rejection, and
 * vote un-randomization bookkeeping for assertions.
 */

import type { Choice } from "../src/api.js";

export interface StoredVote {
  pair_id: string;
  annotator_id: string;
  choice: "prev" | "cur";
}

interface MockPair {
  pair_id: string;
  prev_url: string;
  cur_url: string;
}

export class MockService {
  votes: StoredVote[] = [];
  failNext = 0; // make the next N fetches fail, to exercise retry paths
  private pairs: MockPair[];

  constructor(nPairs: number, public votesPerPair = 3) {
    this.pairs = Array.from({ length: nPairs }, (_, i) => ({
      pair_id: `s1-x${i.toString().padStart(3, "0")}`,
      prev_url: `/api/images/0/x${i}.png`,
      cur_url: `/api/images/1/x${i}.png`,
    }));
  }

  presentationSeed(pairId: string, annotator: string): number {
    // tiny deterministic hash; only the low bit drives the swap
    let h = 2166136261;
    for (const ch of `${pairId}|${annotator}`) {
      h = (h ^ ch.charCodeAt(0)) >>> 0;
      h = (h * 16777619) >>> 0;
    }
    return h & 0x7fffffff;
  }

  swap(pairId: string, annotator: string): boolean {
    return (this.presentationSeed(pairId, annotator) & 1) === 1;
  }

  private voted(pairId: string, annotator: string): boolean {
    return this.votes.some((v) => v.pair_id === pairId && v.annotator_id === annotator);
  }

  expectedChoice(pairId: string, annotator: string, side: Choice): "prev" | "cur" {
    const sideIsCur = (side === "a") === this.swap(pairId, annotator);
    return sideIsCur ? "cur" : "prev";
  }

  fetch = async (input: RequestInfo | URL, init?: RequestInit): Promise<Response> => {
    if (this.failNext > 0) {
      this.failNext -= 1;
      throw new TypeError("network failure (simulated)");
    }
    const url = new URL(String(input), "http://mock.test");
    if (url.pathname === "/api/stage") {
      const fully = this.pairs.filter(
        (p) => this.votes.filter((v) => v.pair_id === p.pair_id).length >= this.votesPerPair,
      ).length;
      const pending = this.pairs.length * this.votesPerPair - this.votes.length;
      return json(200, {
        stage: 1,
        pairs_total: this.pairs.length,
        pairs_fully_voted: fully,
        votes_pending: pending,
      });
    }
    if (url.pathname === "/api/pairs/next") {
      const annotator = url.searchParams.get("annotator") ?? "";
      if (!annotator) return json(400, { error: "missing annotator" });
      const remaining = this.pairs.filter((p) => !this.voted(p.pair_id, annotator));
      if (remaining.length === 0) return new Response(null, { status: 204 });
      const pair = remaining[0];
      const seed = this.presentationSeed(pair.pair_id, annotator);
      const swapped = (seed & 1) === 1;
      return json(200, {
        pair_id: pair.pair_id,
        image_a_url: swapped ? pair.cur_url : pair.prev_url,
        image_b_url: swapped ? pair.prev_url : pair.cur_url,
        presentation_seed: seed,
        remaining: remaining.length,
      });
    }
    if (url.pathname === "/api/votes") {
      const body = JSON.parse(String(init?.body ?? "{}"));
      const pair = this.pairs.find((p) => p.pair_id === body.pair_id);
      if (!pair) return json(404, { error: "unknown pair" });
      if (body.choice !== "a" && body.choice !== "b") return json(422, { error: "bad choice" });
      if (this.voted(body.pair_id, body.annotator_id)) {
        return json(409, { error: "duplicate" });
      }
      this.votes.push({
        pair_id: body.pair_id,
        annotator_id: body.annotator_id,
        choice: this.expectedChoice(body.pair_id, body.annotator_id, body.choice),
      });
      return new Response(null, { status: 204 });
    }
    return json(404, { error: "unknown endpoint" });
  };
}

function json(status: number, payload: unknown): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}
