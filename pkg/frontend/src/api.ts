/** Typed client for the annotation service API. */

export interface StageInfo {
  stage: number;
  pairs_total: number;
  pairs_fully_voted: number;
  votes_pending: number;
}

export interface PairDescriptor {
  pair_id: string;
  image_a_url: string;
  image_b_url: string;
  presentation_seed: number;
  remaining: number;
}

export type Choice = "a" | "b";
export type VoteOutcome = "accepted" | "duplicate";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  /** Current voting stage, or null when the server reports none (503). */
  async stage(): Promise<StageInfo | null> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/stage`);
    if (resp.status === 503) return null;
    if (!resp.ok) throw new ApiError(resp.status, `stage query failed (${resp.status})`);
    return (await resp.json()) as StageInfo;
  }

  /** Next unvoted pair for this annotator, or null when none remain (204). */
  async nextPair(annotator: string): Promise<PairDescriptor | null> {
    const url = `${this.baseUrl}/api/pairs/next?annotator=${encodeURIComponent(annotator)}`;
    const resp = await this.fetchFn(url);
    if (resp.status === 204) return null;
    if (!resp.ok) throw new ApiError(resp.status, `pair fetch failed (${resp.status})`);
    return (await resp.json()) as PairDescriptor;
  }

  /**
   * Submit a 2AFC choice in presentation space. A 409 means the vote already
   * exists server-side, which callers treat as success for advancement.
   */
  async submitVote(pairId: string, annotator: string, choice: Choice): Promise<VoteOutcome> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/votes`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ pair_id: pairId, annotator_id: annotator, choice }),
    });
    if (resp.status === 204) return "accepted";
    if (resp.status === 409) return "duplicate";
    throw new ApiError(resp.status, `vote rejected (${resp.status})`);
  }
}
