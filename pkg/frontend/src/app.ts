/**
 * Single-page annotation client.
 *
 * Flow: enter an annotator id, acknowledge the instructions once per
 * annotator, then step through pending pairs one at a time. Every advance
 * corresponds to exactly one server-accepted vote (409 duplicates count as
 * already-accepted). The client never learns which side is the newer stage;
 * sides arrive pre-randomized from the server.
 */

import { ApiClient, Choice, PairDescriptor } from "./api.js";
import { INSTRUCTIONS } from "./config.js";
import { SyncZoom } from "./zoom.js";

export interface AppDeps {
  root: HTMLElement;
  api: ApiClient;
  storage: Pick<Storage, "getItem" | "setItem">;
  instructions?: string;
  now?: () => number;
  tickMs?: number;
}

export class AnnotationApp {
  annotator = "";
  current: PairDescriptor | null = null;
  totalPairs = 0;
  advances = 0; // server-accepted votes this session
  startedAt = 0;
  zoom = new SyncZoom();
  busy = false;
  private imagesReady = 0;
  private lastChoice: Choice | null = null;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(private readonly deps: AppDeps) {}

  private get doc(): Document {
    return this.deps.root.ownerDocument;
  }

  private now(): number {
    return this.deps.now ? this.deps.now() : Date.now();
  }

  private el(html: string): HTMLElement {
    const host = this.doc.createElement("div");
    host.innerHTML = html;
    return host.firstElementChild as HTMLElement;
  }

  private show(node: HTMLElement): void {
    this.deps.root.replaceChildren(node);
  }

  // -- screens ------------------------------------------------------------------

  start(): void {
    const stored = this.deps.storage.getItem("annotator") ?? "";
    const screen = this.el(`
      <section id="start-screen">
        <h1>Image comparison study</h1>
        <label>Your annotator id
          <input id="annotator-input" type="text" autocomplete="off" />
        </label>
        <button id="start-btn">Start</button>
        <p id="start-error" class="error" hidden></p>
      </section>`);
    const input = screen.querySelector<HTMLInputElement>("#annotator-input")!;
    input.value = stored;
    screen.querySelector("#start-btn")!.addEventListener("click", () => {
      void this.begin(input.value.trim());
    });
    this.show(screen);
  }

  async begin(annotator: string): Promise<void> {
    if (!annotator) {
      const err = this.deps.root.querySelector<HTMLElement>("#start-error");
      if (err) {
        err.hidden = false;
        err.textContent = "Please enter an annotator id.";
      }
      return;
    }
    this.annotator = annotator;
    this.deps.storage.setItem("annotator", annotator);
    const info = await this.deps.api.stage();
    if (info === null) {
      this.show(this.el(`
        <section id="idle-screen">
          <p>No comparison round is open right now. Please come back later.</p>
        </section>`));
      return;
    }
    this.totalPairs = info.pairs_total;
    if (this.deps.storage.getItem(`ack:${annotator}`) === "yes") {
      await this.enterAnnotation();
    } else {
      this.showInstructions();
    }
  }

  showInstructions(): void {
    const text = this.deps.instructions ?? INSTRUCTIONS;
    const screen = this.el(`
      <section id="instructions-screen">
        <h2>Before you start</h2>
        <div id="instructions-text"></div>
        <button id="ack-btn">I understand, begin</button>
      </section>`);
    const target = screen.querySelector<HTMLElement>("#instructions-text")!;
    for (const paragraph of text.split("\n\n")) {
      const p = this.doc.createElement("p");
      p.textContent = paragraph;
      target.appendChild(p);
    }
    screen.querySelector("#ack-btn")!.addEventListener("click", () => {
      void this.acknowledge();
    });
    this.show(screen);
  }

  async acknowledge(): Promise<void> {
    this.deps.storage.setItem(`ack:${this.annotator}`, "yes");
    await this.enterAnnotation();
  }

  private async enterAnnotation(): Promise<void> {
    this.startedAt = this.now();
    await this.loadNext();
  }

  private async loadNext(): Promise<void> {
    const desc = await this.deps.api.nextPair(this.annotator);
    if (desc === null) {
      this.renderDone();
      return;
    }
    this.current = desc;
    this.renderPair(desc);
  }

  renderPair(desc: PairDescriptor): void {
    this.imagesReady = 0;
    this.busy = false;
    this.lastChoice = null;
    const doneCount = this.totalPairs - desc.remaining;
    const screen = this.el(`
      <section id="annotate-screen">
        <header>
          <span id="progress">${doneCount} / ${this.totalPairs}</span>
          <span id="elapsed">0:00</span>
        </header>
        <div id="panes">
          <figure class="pane" id="pane-a">
            <img id="img-a" alt="Rendition A" draggable="false" />
            <button id="choose-a" disabled>Choose left (&#8592;)</button>
          </figure>
          <figure class="pane" id="pane-b">
            <img id="img-b" alt="Rendition B" draggable="false" />
            <button id="choose-b" disabled>Choose right (&#8594;)</button>
          </figure>
        </div>
        <p id="notice" hidden></p>
        <button id="retry-btn" hidden>Retry</button>
      </section>`);
    const imgA = screen.querySelector<HTMLImageElement>("#img-a")!;
    const imgB = screen.querySelector<HTMLImageElement>("#img-b")!;
    for (const [img, side] of [[imgA, "a"], [imgB, "b"]] as const) {
      img.addEventListener("load", () => this.onImageReady());
      img.addEventListener("error", () => this.onImageError(side));
    }
    screen.querySelector("#choose-a")!.addEventListener("click", () => void this.choose("a"));
    screen.querySelector("#choose-b")!.addEventListener("click", () => void this.choose("b"));
    screen.querySelector("#retry-btn")!.addEventListener("click", () => void this.retry());
    this.show(screen);
    this.zoom = new SyncZoom();
    this.zoom.attach(
      [screen.querySelector("#pane-a")!, screen.querySelector("#pane-b")!],
      [imgA, imgB],
    );
    this.startTimer();
    imgA.src = desc.image_a_url;
    imgB.src = desc.image_b_url;
  }

  private onImageReady(): void {
    this.imagesReady += 1;
    if (this.imagesReady >= 2) {
      for (const id of ["#choose-a", "#choose-b"]) {
        const btn = this.deps.root.querySelector<HTMLButtonElement>(id);
        if (btn) btn.disabled = false;
      }
    }
  }

  private onImageError(side: string): void {
    this.notice(`The ${side === "a" ? "left" : "right"} image failed to load.`, true);
  }

  private notice(message: string, retry = false): void {
    const note = this.deps.root.querySelector<HTMLElement>("#notice");
    const btn = this.deps.root.querySelector<HTMLElement>("#retry-btn");
    if (note) {
      note.hidden = false;
      note.textContent = message;
    }
    if (btn) btn.hidden = !retry;
  }

  async retry(): Promise<void> {
    if (this.lastChoice) {
      await this.choose(this.lastChoice);
    } else if (this.current) {
      this.renderPair(this.current); // reload images
    }
  }

  handleKey(ev: KeyboardEvent): void {
    if (ev.key === "ArrowLeft") void this.choose("a");
    if (ev.key === "ArrowRight") void this.choose("b");
  }

  votingEnabled(): boolean {
    return this.imagesReady >= 2 && !this.busy && this.current !== null;
  }

  async choose(choice: Choice): Promise<void> {
    if (!this.votingEnabled()) return;
    this.busy = true;
    this.lastChoice = choice;
    try {
      const outcome = await this.deps.api.submitVote(
        this.current!.pair_id, this.annotator, choice);
      this.advances += 1;
      if (outcome === "duplicate") {
        this.notice("This pair was already voted; moving on.");
      }
      await this.loadNext();
    } catch (err) {
      this.busy = false;
      this.notice("Could not reach the server. Your choice was not recorded.", true);
    }
  }

  renderDone(): void {
    this.stopTimer();
    this.current = null;
    const seconds = Math.round((this.now() - this.startedAt) / 1000);
    this.show(this.el(`
      <section id="done-screen">
        <h2>All done, thank you!</h2>
        <p>You completed ${this.totalPairs} comparisons in ${formatElapsed(seconds)}.</p>
      </section>`));
  }

  private startTimer(): void {
    if (this.timer) return;
    const tick = () => {
      const el = this.deps.root.querySelector<HTMLElement>("#elapsed");
      if (el) {
        el.textContent = formatElapsed(Math.round((this.now() - this.startedAt) / 1000));
      }
    };
    tick();
    this.timer = setInterval(tick, this.deps.tickMs ?? 1000);
  }

  private stopTimer(): void {
    if (this.timer) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}

export function formatElapsed(totalSeconds: number): string {
  const minutes = Math.floor(totalSeconds / 60);
  const seconds = totalSeconds % 60;
  return `${minutes}:${seconds.toString().padStart(2, "0")}`;
}
