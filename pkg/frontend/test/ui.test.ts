// Grid behavior driven through the DOM, including the review contract:
// a full 64-tile batch, one flip, submit, and double-submit safety.

import { beforeEach, describe, expect, it } from "vitest";

import { AppController, mount } from "../src/app.js";
import { FakeServer } from "./fake_server.js";

function setup(nFrames: number, reviewers?: string[]) {
  document.body.innerHTML = '<div id="app"></div>';
  const server = new FakeServer(nFrames, reviewers);
  const app = mount(document.getElementById("app") as HTMLElement, {
    fetchImpl: server.fetch,
    pollMs: 0,
  });
  return { server, app };
}

async function join(app: AppController, name = "alice") {
  const input = document.getElementById("reviewer") as HTMLInputElement;
  input.value = name;
  const form = document.getElementById("join-form") as HTMLFormElement;
  form.dispatchEvent(new Event("submit", { bubbles: true, cancelable: true }));
  await app.pending;
}

function tiles(): HTMLElement[] {
  return Array.from(document.querySelectorAll("#grid .tile"));
}

function key(k: string) {
  document.dispatchEvent(
    new KeyboardEvent("keydown", { key: k, bubbles: true, cancelable: true }));
}

describe("review grid contract", () => {
  beforeEach(() => {
    document.body.innerHTML = "";
  });

  it("renders one tile per batch item with badge and confidence", async () => {
    const { app } = setup(64);
    await join(app);
    const all = tiles();
    expect(all).toHaveLength(64);
    expect(all[0].querySelector(".badge")?.textContent).toBe("yawn");
    expect(all[1].querySelector(".badge")?.textContent).toBe("no yawn");
    expect(all[0].querySelector(".confidence")?.textContent).toMatch(/%$/);
    expect(document.getElementById("dirty-count")?.textContent).toBe(
      "no corrections");
  });

  it("low-confidence tiles carry a stronger highlight", async () => {
    const { app } = setup(16);
    await join(app);
    const doubt = (i: number) =>
      Number(tiles()[i].style.getPropertyValue("--doubt"));
    // fake server confidence rises with index % 10
    expect(doubt(0)).toBeGreaterThan(doubt(5));
  });

  it("flip one tile, submit: verified += 64 and exactly one disagreement", async () => {
    const { server, app } = setup(64);
    await join(app);
    expect(tiles()).toHaveLength(64);

    tiles()[0].click(); // auto yawn -> no_yawn
    expect(document.getElementById("dirty-count")?.textContent).toBe(
      "1 correction");
    expect(tiles()[0].classList.contains("dirty")).toBe(true);

    const before = server.verified;
    (document.getElementById("submit") as HTMLButtonElement).click();
    await app.pending;

    expect(server.verified).toBe(before + 64);
    expect(server.disagreements).toBe(1);
    expect(server.progress().agreement_rate).toBeCloseTo(63 / 64, 10);
    // the only batch is done; the app lands on the completion screen
    const done = document.getElementById("done") as HTMLElement;
    expect(done.hidden).toBe(false);
    expect(done.textContent).toContain("64 of 64 frames verified");
  });

  it("double-submit causes no double count", async () => {
    const { server, app } = setup(64);
    await join(app);
    tiles()[3].click();
    const button = document.getElementById("submit") as HTMLButtonElement;
    button.click();
    button.click(); // immediate second click while the first is in flight
    await app.pending;
    expect(server.applies).toBe(1);
    expect(server.verified).toBe(64);
    // backstop: replaying the identical submission over the wire is a no-op
    const decisions = Array.from(server.rows.values()).map((row) => ({
      frame_id: row.frame_id,
      final_label: row.final_label!,
    }));
    const replay = await app.api.submit("b0", decisions);
    expect(replay.idempotent).toBe(true);
    expect(replay.verified_delta).toBe(0);
    expect(server.verified).toBe(64);
  });

  it("a short final batch renders that many tiles and submits", async () => {
    const { server, app } = setup(66); // 64 + a final batch of 2
    await join(app);
    expect(tiles()).toHaveLength(64);
    (document.getElementById("submit") as HTMLButtonElement).click();
    await app.pending;
    expect(tiles()).toHaveLength(2);
    (document.getElementById("submit") as HTMLButtonElement).click();
    await app.pending;
    expect(server.verified).toBe(66);
    expect((document.getElementById("done") as HTMLElement).hidden).toBe(false);
  });

  it("keyboard drives the same mutations as clicking", async () => {
    const { app } = setup(64);
    await join(app);
    expect(tiles()[0].classList.contains("cursor")).toBe(true);

    key("ArrowRight");
    expect(tiles()[1].classList.contains("cursor")).toBe(true);
    key("ArrowDown"); // one row of 8
    expect(tiles()[9].classList.contains("cursor")).toBe(true);
    key("ArrowUp");
    key("ArrowLeft");
    expect(tiles()[0].classList.contains("cursor")).toBe(true);

    key(" ");
    expect(app.review?.items[0].choice).toBe("no_yawn");
    expect(tiles()[0].classList.contains("dirty")).toBe(true);
    key(" ");
    expect(app.review?.items[0].choice).toBe("yawn");
    expect(tiles()[0].classList.contains("dirty")).toBe(false);

    key("3");
    expect(app.review?.items[0].choice).toBe("no_face");
    key("2");
    expect(app.review?.items[0].choice).toBe("no_yawn");
    key("1");
    expect(app.review?.items[0].choice).toBe("yawn");
    expect(app.review?.dirtyCount()).toBe(0);

    key("s");
    await app.pending;
    expect(app.review).toBeNull(); // single batch store is now complete
  });

  it("an exhausted store goes straight to the completion screen", async () => {
    const { server, app } = setup(4);
    await join(app);
    (document.getElementById("submit") as HTMLButtonElement).click();
    await app.pending;
    const done = document.getElementById("done") as HTMLElement;
    expect(done.hidden).toBe(false);
    expect(done.textContent).toContain("4 of 4 frames verified");
    expect(done.textContent).toContain("Machine agreement: 100.0%");
    expect(server.verified).toBe(4);
  });

  it("unknown reviewer shows the error on the join screen", async () => {
    const { app } = setup(4);
    await join(app, "mallory");
    expect(document.getElementById("join-error")?.textContent).toContain(
      "mallory");
    expect(document.getElementById("grid")).toBeNull();
  });

  it("a submit conflict reloads the batch with a banner", async () => {
    const { server, app } = setup(8);
    await join(app);
    tiles()[0].click();
    server.failNextSubmit = "conflict";
    (document.getElementById("submit") as HTMLButtonElement).click();
    await app.pending;
    const banner = document.getElementById("banner") as HTMLElement;
    expect(banner.hidden).toBe(false);
    expect(banner.textContent).toContain("submitted elsewhere");
    expect(tiles()).toHaveLength(8); // fresh checkout of the same batch
    expect(server.verified).toBe(0);
  });

  it("a network failure keeps choices and offers a retry", async () => {
    const { server, app } = setup(8);
    await join(app);
    tiles()[2].click();
    server.failNextSubmit = "network";
    (document.getElementById("submit") as HTMLButtonElement).click();
    await app.pending;
    const banner = document.getElementById("banner") as HTMLElement;
    expect(banner.hidden).toBe(false);
    expect(app.review?.dirtyCount()).toBe(1); // nothing lost
    const retry = banner.querySelector("button") as HTMLButtonElement;
    retry.click();
    await app.pending;
    expect(server.verified).toBe(8);
    expect(server.disagreements).toBe(1);
  });
});
