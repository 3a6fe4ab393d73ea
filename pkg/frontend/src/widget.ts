/** DOM layer: renders the transcript store and forwards user intent to
 * the gateway client. The skeleton is built once; the transcript region
 * re-renders on every store change. */

import { ApiError, type BootstrapPayload, type GatewayClient } from "./api.js";
import { TranscriptStore, type UiTurn } from "./state.js";

const RELAUNCH_HINT = "Open the assistant from your course page to start a new session.";

export function renderErrorPanel(root: HTMLElement, message: string): void {
  root.innerHTML = "";
  const panel = document.createElement("div");
  panel.className = "cg-error-panel";
  const text = document.createElement("p");
  text.textContent = message;
  const hint = document.createElement("p");
  hint.className = "cg-hint";
  hint.textContent = RELAUNCH_HINT;
  panel.append(text, hint);
  root.append(panel);
}

function element<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class ChatWidget {
  private transcriptBox!: HTMLElement;
  private selector!: HTMLSelectElement;
  private input!: HTMLTextAreaElement;
  private sendButton!: HTMLButtonElement;
  private validation!: HTMLElement;
  // click handlers are async; tests await settle() to observe the result
  private inFlight: Promise<void> = Promise.resolve();
  private ratingChain: Promise<void> = Promise.resolve();

  constructor(
    private readonly root: HTMLElement,
    private readonly client: GatewayClient,
    private readonly store: TranscriptStore,
    private readonly payload: BootstrapPayload,
  ) {}

  async settle(): Promise<void> {
    await this.inFlight;
    await this.ratingChain;
  }

  kbLabel(kbId: string): string {
    const entry = this.payload.knowledge_bases.find((kb) => kb.kb_id === kbId);
    return entry ? entry.display_name : kbId;
  }

  mount(): void {
    this.root.innerHTML = "";
    const shell = element("div", "cg-shell");

    const header = element("header", "cg-header");
    header.append(
      element("h1", "cg-greeting", `Hi ${this.payload.display_name}!`),
      element(
        "p",
        "cg-subtitle",
        `Ask about course ${this.payload.course_id}. Pick a knowledge base, then ask away.`,
      ),
    );

    const picker = element("label", "cg-picker", "Knowledge base ");
    this.selector = document.createElement("select");
    this.selector.className = "cg-kb-select";
    for (const kb of this.payload.knowledge_bases) {
      const option = document.createElement("option");
      option.value = kb.kb_id;
      option.textContent = kb.display_name;
      this.selector.append(option);
    }
    if (this.payload.knowledge_bases.length > 0) {
      this.selector.selectedIndex = 0;
    }
    picker.append(this.selector);

    this.transcriptBox = element("div", "cg-transcript");

    const composer = element("form", "cg-composer");
    this.input = document.createElement("textarea");
    this.input.className = "cg-input";
    this.input.rows = 2;
    this.input.placeholder = "Type your question";
    this.sendButton = document.createElement("button");
    this.sendButton.type = "submit";
    this.sendButton.className = "cg-send";
    this.sendButton.textContent = "Send";
    this.validation = element("p", "cg-validation");
    this.validation.hidden = true;
    composer.append(this.input, this.sendButton, this.validation);
    composer.addEventListener("submit", (event) => {
      event.preventDefault();
      this.inFlight = this.handleSend();
    });

    shell.append(header, picker, this.transcriptBox, composer);
    this.root.append(shell);

    this.store.subscribe(() => this.render());
    this.render();
  }

  private render(): void {
    this.transcriptBox.innerHTML = "";
    for (const turn of this.store.turns) {
      this.transcriptBox.append(this.renderTurn(turn));
    }
    this.sendButton.disabled = this.store.hasPending();
  }

  private renderTurn(turn: UiTurn): HTMLElement {
    const block = element("div", "cg-turn");

    const question = element("div", "cg-bubble cg-user");
    question.append(
      element("span", "cg-kb-tag", turn.kbLabel),
      element("p", "cg-query", turn.query),
    );
    block.append(question);

    if (turn.pending) {
      block.append(element("div", "cg-bubble cg-pending", "Looking that up"));
      return block;
    }
    if (turn.error !== null) {
      const failure = element("div", "cg-bubble cg-failure");
      failure.append(element("p", "cg-error-text", turn.error));
      const retry = element("button", "cg-retry", "Retry");
      retry.type = "button";
      retry.addEventListener("click", () => {
        this.inFlight = this.handleRetry(turn);
      });
      failure.append(retry);
      block.append(failure);
      return block;
    }

    const answer = element("div", "cg-bubble cg-response");
    answer.append(element("p", "cg-response-text", turn.response ?? ""));
    answer.append(this.renderStars(turn));
    if (turn.ratingNotice !== null) {
      answer.append(element("p", "cg-rating-notice", turn.ratingNotice));
    }
    block.append(answer);
    return block;
  }

  private renderStars(turn: UiTurn): HTMLElement {
    const row = element("div", "cg-stars");
    for (let stars = 1; stars <= 5; stars += 1) {
      const filled = turn.rating !== null && stars <= turn.rating;
      const star = element("button", filled ? "cg-star filled" : "cg-star", filled ? "★" : "☆");
      star.type = "button";
      star.dataset.stars = String(stars);
      star.setAttribute("aria-label", `rate ${stars} of 5`);
      star.addEventListener("click", () => {
        if (turn.turnId === null) return;
        const turnId = turn.turnId;
        // serialize rating posts so a quick 4-then-5 ends at 5
        this.ratingChain = this.ratingChain.then(() => this.handleRate(turnId, stars));
      });
      row.append(star);
    }
    return row;
  }

  private async handleSend(): Promise<void> {
    const query = this.input.value.trim();
    if (!query) {
      this.showValidation("Type a question first.");
      return;
    }
    if (this.store.hasPending()) return; // one in-flight query at a time
    this.showValidation(null);
    const kbId = this.selector.value;
    const turn = this.store.beginTurn(kbId, this.kbLabel(kbId), query);
    this.input.value = "";
    await this.runTurn(turn);
  }

  private async handleRetry(turn: UiTurn): Promise<void> {
    if (this.store.hasPending()) return;
    this.store.retryTurn(turn);
    await this.runTurn(turn);
  }

  private async runTurn(turn: UiTurn): Promise<void> {
    try {
      const reply = await this.client.sendQuery(turn.kbId, turn.query);
      this.store.completeTurn(turn, reply);
    } catch (error) {
      if (error instanceof ApiError && error.status === 401) {
        renderErrorPanel(this.root, "Your session has ended.");
        return;
      }
      if (error instanceof ApiError && error.status === 422) {
        // the server refused the query itself; retrying the same text cannot help
        this.store.turns.splice(this.store.turns.indexOf(turn), 1);
        this.showValidation(error.detail);
        this.render();
        return;
      }
      const message =
        error instanceof ApiError
          ? `The assistant could not answer (${error.detail}).`
          : "Network problem while sending your question.";
      this.store.failTurn(turn, message);
    }
  }

  private async handleRate(turnId: string, stars: number): Promise<void> {
    this.store.markRatingBusy(turnId);
    try {
      await this.client.submitRating(turnId, stars);
      // stars fill only now, from the server's acknowledgment
      this.store.confirmRating(turnId, stars);
    } catch (error) {
      const detail = error instanceof ApiError ? error.detail : "network problem";
      this.store.revertRating(turnId, `Rating not saved: ${detail}`);
    }
  }

  private showValidation(message: string | null): void {
    this.validation.hidden = message === null;
    this.validation.textContent = message ?? "";
  }
}

export async function loadTranscript(
  widget: ChatWidget,
  client: GatewayClient,
  store: TranscriptStore,
): Promise<void> {
  const records = await client.listTurns();
  store.loadFromServer(records, (kbId) => widget.kbLabel(kbId));
}
