// Renders a BatchReview as an 8-wide tile grid and keeps tiles in sync
// with the review state after each mutation.

import { BatchReview } from "./review.js";

export interface GridHandlers {
  onToggle: (index: number) => void;
  onFocus: (index: number) => void;
}

const BADGE_TEXT: Record<string, string> = {
  yawn: "yawn",
  no_yawn: "no yawn",
  no_face: "no face",
};

export function renderGrid(
  container: HTMLElement,
  review: BatchReview,
  handlers: GridHandlers,
): void {
  container.textContent = "";
  container.classList.add("grid");
  review.items.forEach((item, i) => {
    const tile = container.ownerDocument.createElement("div");
    tile.className = "tile";
    tile.dataset.index = String(i);
    tile.dataset.frameId = item.frame.frame_id;
    tile.tabIndex = -1;

    const img = container.ownerDocument.createElement("img");
    img.src = item.frame.crop_url;
    img.alt = item.frame.frame_id;
    img.loading = "lazy";
    img.draggable = false;

    const badge = container.ownerDocument.createElement("span");
    badge.className = "badge";

    const conf = container.ownerDocument.createElement("span");
    conf.className = "confidence";
    conf.textContent = `${Math.round(item.frame.confidence * 100)}%`;
    // lower confidence -> stronger highlight, pulling the eye to the
    // frames the model was least sure about
    const doubt = Math.min(Math.max(1 - item.frame.confidence, 0), 1);
    tile.style.setProperty("--doubt", doubt.toFixed(3));

    tile.append(img, badge, conf);
    tile.addEventListener("click", () => {
      handlers.onFocus(i);
      handlers.onToggle(i);
    });
    container.appendChild(tile);
    updateTile(container, review, i);
  });
}

export function updateTile(
  container: HTMLElement,
  review: BatchReview,
  i: number,
): void {
  const tile = container.children[i] as HTMLElement;
  const item = review.items[i];
  const badge = tile.querySelector(".badge") as HTMLElement;
  badge.textContent = BADGE_TEXT[item.choice];
  badge.dataset.label = item.choice;
  tile.classList.toggle("dirty", review.isDirty(i));
}

export function setCursor(container: HTMLElement, index: number | null): void {
  for (const child of Array.from(container.children)) {
    child.classList.remove("cursor");
  }
  if (index !== null && container.children[index]) {
    const tile = container.children[index] as HTMLElement;
    tile.classList.add("cursor");
    if (typeof tile.scrollIntoView === "function") {
      tile.scrollIntoView({ block: "nearest" });
    }
  }
}
