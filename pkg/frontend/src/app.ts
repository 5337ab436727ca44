// Single-page review flow: join -> batch grid -> submit -> next batch,
// with a completion screen once the store has nothing left to review.

import { ApiClient, ApiError, FetchLike, Label, Progress } from "./api.js";
import { renderGrid, setCursor, updateTile } from "./grid.js";
import { BatchReview } from "./review.js";

const COLS = 8;

function describeError(err: unknown): string {
  if (err instanceof ApiError) return `${err.message} (HTTP ${err.status})`;
  if (err instanceof Error) return err.message || String(err);
  return String(err);
}

export interface AppOptions {
  fetchImpl?: FetchLike;
  pollMs?: number; // 0 disables background progress polling
}

export class AppController {
  readonly api: ApiClient;
  review: BatchReview | null = null;
  cursor: number | null = null;
  /** Resolves when the most recent user-triggered operation settles. */
  pending: Promise<void> = Promise.resolve();

  private root: HTMLElement;
  private doc: Document;
  private pollMs: number;
  private pollTimer: ReturnType<typeof setInterval> | null = null;
  private submitting = false;

  constructor(root: HTMLElement, options: AppOptions = {}) {
    this.root = root;
    this.doc = root.ownerDocument;
    this.api = new ApiClient(options.fetchImpl);
    this.pollMs = options.pollMs ?? 5000;
    this.renderJoin();
  }

  // ---------------- join screen ----------------

  private renderJoin(message = ""): void {
    this.root.innerHTML = `
      <div class="join">
        <h1>yawnforge review</h1>
        <p>Enter your reviewer name to pick up the next batch.</p>
        <form id="join-form">
          <input id="reviewer" type="text" placeholder="reviewer name" autofocus>
          <button id="join" type="submit">Start reviewing</button>
        </form>
        <p id="join-error" class="error">${message}</p>
      </div>`;
    const form = this.doc.getElementById("join-form") as HTMLFormElement;
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      const name = (this.doc.getElementById("reviewer") as HTMLInputElement).value;
      this.track(this.join(name.trim()));
    });
  }

  async join(name: string): Promise<void> {
    if (!name) {
      this.setText("join-error", "reviewer name must not be empty");
      return;
    }
    try {
      await this.api.openSession(name);
    } catch (err) {
      this.setText("join-error", describeError(err));
      return;
    }
    this.renderReviewShell();
    this.startPolling();
    await this.loadNext();
  }

  // ---------------- review screen ----------------

  private renderReviewShell(): void {
    this.root.innerHTML = `
      <div class="toolbar">
        <span id="reviewer-name">${this.api.reviewer ?? ""}</span>
        <span id="progress-line"></span>
        <span id="dirty-count"></span>
        <button id="submit" type="button" disabled>Submit batch</button>
      </div>
      <div id="banner" class="banner" hidden></div>
      <div id="grid" class="grid"></div>
      <div id="done" class="done" hidden></div>
      <p class="hint">arrows move &middot; space flips &middot; 1/2/3 set
        yawn / no yawn / no face &middot; s submits</p>`;
    (this.doc.getElementById("submit") as HTMLButtonElement).addEventListener(
      "click",
      () => this.track(this.submit()),
    );
    this.doc.addEventListener("keydown", this.onKey);
  }

  async loadNext(): Promise<void> {
    this.hideBanner();
    let batch;
    try {
      batch = await this.api.checkout();
    } catch (err) {
      if (err instanceof ApiError && err.status === 423) {
        const wait = err.retryAfterS ?? 30;
        this.showBanner(
          `another session holds the open batch; retrying in ${wait}s`);
        setTimeout(() => this.track(this.loadNext()), wait * 1000);
        return;
      }
      this.showBanner(describeError(err), () => this.track(this.loadNext()));
      return;
    }
    if (batch === null) {
      this.review = null;
      await this.renderDone();
      return;
    }
    this.review = new BatchReview(batch);
    this.cursor = batch.frames.length ? 0 : null;
    const grid = this.grid();
    grid.hidden = false;
    (this.doc.getElementById("done") as HTMLElement).hidden = true;
    renderGrid(grid, this.review, {
      onToggle: (i) => this.toggle(i),
      onFocus: (i) => this.moveCursor(i),
    });
    setCursor(grid, this.cursor);
    this.refreshToolbar();
    this.track(this.refreshProgressLine());
  }

  toggle(i: number): void {
    if (!this.review) return;
    this.review.toggle(i);
    updateTile(this.grid(), this.review, i);
    this.refreshToolbar();
  }

  setLabel(i: number, label: Label): void {
    if (!this.review) return;
    this.review.setChoice(i, label);
    updateTile(this.grid(), this.review, i);
    this.refreshToolbar();
  }

  async submit(): Promise<void> {
    if (!this.review || this.submitting) return;
    this.submitting = true;
    const button = this.doc.getElementById("submit") as HTMLButtonElement;
    button.disabled = true;
    button.textContent = "Submitting…";
    try {
      const result = await this.api.submit(
        this.review.batchId, this.review.decisions());
      this.renderProgress(result.progress);
      await this.loadNext();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // someone else completed this batch; show it, then surface why
        await this.loadNext();
        this.showBanner(`batch was submitted elsewhere: ${err.message}`);
      } else {
        // keep the reviewed choices; offer a retry instead
        this.showBanner(describeError(err), () => this.track(this.submit()));
      }
    } finally {
      this.submitting = false;
      button.disabled = this.review === null;
      button.textContent = "Submit batch";
    }
  }

  // ---------------- completion / progress ----------------

  private async renderDone(): Promise<void> {
    this.grid().hidden = true;
    (this.doc.getElementById("submit") as HTMLButtonElement).disabled = true;
    const done = this.doc.getElementById("done") as HTMLElement;
    done.hidden = false;
    let progress: Progress;
    try {
      progress = await this.api.progress();
    } catch (err) {
      done.textContent = describeError(err);
      return;
    }
    const agreement =
      progress.agreement_rate === null
        ? "n/a"
        : `${(progress.agreement_rate * 100).toFixed(1)}%`;
    done.innerHTML = `
      <h2>All caught up</h2>
      <p>${progress.verified} of ${progress.total_frames} frames verified.</p>
      <p>Machine agreement: ${agreement}</p>`;
    this.renderProgress(progress);
  }

  private async refreshProgressLine(): Promise<void> {
    try {
      this.renderProgress(await this.api.progress());
    } catch {
      // transient; the next poll retries
    }
  }

  private renderProgress(progress: Progress): void {
    const agreement =
      progress.agreement_rate === null
        ? ""
        : ` · agreement ${(progress.agreement_rate * 100).toFixed(1)}%`;
    this.setText(
      "progress-line",
      `${progress.verified}/${progress.total_frames} verified${agreement}`,
    );
  }

  private startPolling(): void {
    if (this.pollMs <= 0 || this.pollTimer !== null) return;
    this.pollTimer = setInterval(
      () => this.track(this.refreshProgressLine()),
      this.pollMs,
    );
  }

  // ---------------- input ----------------

  private onKey = (ev: KeyboardEvent): void => {
    if (!this.review || this.cursor === null) return;
    const target = ev.target as HTMLElement | null;
    if (target && target.tagName === "INPUT") return;
    const max = this.review.size - 1;
    const moves: Record<string, number> = {
      ArrowLeft: -1,
      ArrowRight: 1,
      ArrowUp: -COLS,
      ArrowDown: COLS,
    };
    if (ev.key in moves) {
      ev.preventDefault();
      this.moveCursor(
        Math.min(Math.max(this.cursor + moves[ev.key], 0), max));
    } else if (ev.key === " " || ev.key === "Enter") {
      ev.preventDefault();
      this.toggle(this.cursor);
    } else if (ev.key === "1" || ev.key === "y") {
      this.setLabel(this.cursor, "yawn");
    } else if (ev.key === "2" || ev.key === "n") {
      this.setLabel(this.cursor, "no_yawn");
    } else if (ev.key === "3" || ev.key === "f") {
      this.setLabel(this.cursor, "no_face");
    } else if (ev.key === "s") {
      this.track(this.submit());
    }
  };

  moveCursor(i: number): void {
    this.cursor = i;
    setCursor(this.grid(), i);
  }

  // ---------------- small helpers ----------------

  private grid(): HTMLElement {
    return this.doc.getElementById("grid") as HTMLElement;
  }

  private refreshToolbar(): void {
    if (!this.review) return;
    const dirty = this.review.dirtyCount();
    this.setText(
      "dirty-count",
      dirty === 0 ? "no corrections" : `${dirty} correction${dirty === 1 ? "" : "s"}`,
    );
    (this.doc.getElementById("submit") as HTMLButtonElement).disabled =
      this.submitting;
  }

  private setText(id: string, text: string): void {
    const el = this.doc.getElementById(id);
    if (el) el.textContent = text;
  }

  private showBanner(message: string, retry?: () => void): void {
    const banner = this.doc.getElementById("banner") as HTMLElement;
    banner.hidden = false;
    banner.textContent = message;
    if (retry) {
      const button = this.doc.createElement("button");
      button.type = "button";
      button.textContent = "Retry";
      button.addEventListener("click", retry);
      banner.append(" ", button);
    }
  }

  private hideBanner(): void {
    const banner = this.doc.getElementById("banner");
    if (banner) {
      banner.hidden = true;
      banner.textContent = "";
    }
  }

  /** Chains an async operation so tests can await `pending`. */
  private track(op: Promise<void>): void {
    this.pending = this.pending.then(() => op).catch(() => undefined);
  }
}

export function mount(root: HTMLElement, options: AppOptions = {}): AppController {
  return new AppController(root, options);
}

declare global {
  interface Window {
    __yawnforgeApp?: AppController;
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  window.__yawnforgeApp = mount(document.getElementById("app") as HTMLElement);
}
