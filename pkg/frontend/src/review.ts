// Client-side batch state. The machine's auto_label is read-only here;
// reviewers only ever move current_choice.

import { Batch, BatchFrame, Decision, Label } from "./api.js";

export interface ReviewItem {
  frame: BatchFrame;
  choice: Label;
}

export class BatchReview {
  readonly batchId: string;
  readonly items: ReviewItem[];

  constructor(batch: Batch) {
    this.batchId = batch.batch_id;
    this.items = batch.frames.map((frame) => ({
      frame,
      // resume from the recorded decision if the batch was already reviewed
      choice: frame.final_label ?? frame.auto_label,
    }));
  }

  get size(): number {
    return this.items.length;
  }

  isDirty(i: number): boolean {
    return this.items[i].choice !== this.items[i].frame.auto_label;
  }

  dirtyCount(): number {
    return this.items.reduce((n, _, i) => n + (this.isDirty(i) ? 1 : 0), 0);
  }

  setChoice(i: number, label: Label): void {
    this.items[i].choice = label;
  }

  /** Flip between the two mouth states; a no_face choice goes back to a
      reviewable state. Toggling twice restores the starting choice. */
  toggle(i: number): void {
    const item = this.items[i];
    if (item.choice === "yawn") {
      item.choice = "no_yawn";
    } else if (item.choice === "no_yawn") {
      item.choice = "yawn";
    } else {
      item.choice =
        item.frame.auto_label === "no_face" ? "no_yawn" : item.frame.auto_label;
    }
  }

  /** Exactly one decision per frame, unflipped tiles confirming auto_label. */
  decisions(): Decision[] {
    return this.items.map((item) => ({
      frame_id: item.frame.frame_id,
      final_label: item.choice,
    }));
  }
}
