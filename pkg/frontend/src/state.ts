/** Transcript model: optimistic turns, server-acknowledged ratings.

The store is the single place where invariants live: at most one
pending turn, ratings only change after the server's 204, failed turns
stay visible with their error. The DOM layer just draws whatever is
here.
*/

import type { ChatReply, ServerTurn } from "./api.js";

export interface UiTurn {
  turnId: string | null; // null while the optimistic turn is in flight
  kbId: string;
  kbLabel: string;
  query: string;
  response: string | null;
  rating: number | null;
  pending: boolean;
  error: string | null;
  ratingBusy: boolean;
  ratingNotice: string | null;
}

export type Listener = () => void;

export class TranscriptStore {
  readonly turns: UiTurn[] = [];
  private listeners: Listener[] = [];

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  hasPending(): boolean {
    return this.turns.some((turn) => turn.pending);
  }

  /** Optimistic append; the user bubble must be visible before the
   * network round trip settles. */
  beginTurn(kbId: string, kbLabel: string, query: string): UiTurn {
    if (this.hasPending()) {
      throw new Error("a query is already in flight");
    }
    const turn: UiTurn = {
      turnId: null,
      kbId,
      kbLabel,
      query,
      response: null,
      rating: null,
      pending: true,
      error: null,
      ratingBusy: false,
      ratingNotice: null,
    };
    this.turns.push(turn);
    this.notify();
    return turn;
  }

  completeTurn(turn: UiTurn, reply: ChatReply): void {
    turn.turnId = reply.turn_id;
    turn.response = reply.response_text;
    turn.pending = false;
    turn.error = null;
    this.notify();
  }

  /** Keeps the turn visible with a retry affordance. */
  failTurn(turn: UiTurn, message: string): void {
    turn.pending = false;
    turn.error = message;
    this.notify();
  }

  retryTurn(turn: UiTurn): void {
    turn.pending = true;
    turn.error = null;
    this.notify();
  }

  find(turnId: string): UiTurn | undefined {
    return this.turns.find((turn) => turn.turnId === turnId);
  }

  markRatingBusy(turnId: string): void {
    const turn = this.find(turnId);
    if (!turn) return;
    turn.ratingBusy = true;
    turn.ratingNotice = null;
    this.notify();
  }

  /** The only path that fills stars; call it after the 204 and never before. */
  confirmRating(turnId: string, stars: number): void {
    const turn = this.find(turnId);
    if (!turn) return;
    turn.rating = stars;
    turn.ratingBusy = false;
    turn.ratingNotice = null;
    this.notify();
  }

  /** Server refused: stars stay at their last acknowledged value. */
  revertRating(turnId: string, notice: string): void {
    const turn = this.find(turnId);
    if (!turn) return;
    turn.ratingBusy = false;
    turn.ratingNotice = notice;
    this.notify();
  }

  /** Replace the transcript with the server's record, in created_at order. */
  loadFromServer(records: ServerTurn[], kbLabelFor: (kbId: string) => string): void {
    const ordered = [...records].sort((a, b) =>
      a.created_at === b.created_at
        ? a.turn_id.localeCompare(b.turn_id)
        : a.created_at - b.created_at,
    );
    this.turns.length = 0;
    for (const record of ordered) {
      this.turns.push({
        turnId: record.turn_id,
        kbId: record.kb_id,
        kbLabel: kbLabelFor(record.kb_id),
        query: record.query,
        response: record.response_text,
        rating: record.rating,
        pending: false,
        error: null,
        ratingBusy: false,
        ratingNotice: null,
      });
    }
    this.notify();
  }
}
