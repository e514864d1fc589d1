import type { Suggestion } from "./api.js";

export interface TypeaheadOptions {
  fetch: (q: string, signal: AbortSignal) => Promise<Suggestion[]>;
  onPick: (text: string) => void;
  onError?: (err: unknown) => void;
  debounceMs?: number;
}

/** Debounced dropdown under a text input.
 *
 * Every keystroke resets the timer, and firing a new request aborts
 * the in-flight one, so at most one request is live and answers can
 * never arrive out of order. An empty box still queries: the server
 * returns default suggestions for the empty prefix.
 */
export class Typeahead {
  private timer: ReturnType<typeof setTimeout> | undefined;
  private inflight: AbortController | undefined;
  private seq = 0;
  private items: Suggestion[] = [];
  private active = -1;
  private readonly debounceMs: number;

  constructor(
    private readonly input: HTMLInputElement,
    private readonly menu: HTMLUListElement,
    private readonly options: TypeaheadOptions,
  ) {
    this.debounceMs = options.debounceMs ?? 150;
    input.autocomplete = "off";
    input.addEventListener("input", () => this.schedule());
    input.addEventListener("focus", () => this.schedule());
    input.addEventListener("keydown", (event) => this.onKey(event));
    input.addEventListener("blur", () => {
      setTimeout(() => this.hide(), 120); // let a menu click land first
    });
  }

  private schedule(): void {
    clearTimeout(this.timer);
    this.timer = setTimeout(() => void this.refresh(), this.debounceMs);
  }

  private async refresh(): Promise<void> {
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    const ticket = ++this.seq;
    try {
      const items = await this.options.fetch(this.input.value, controller.signal);
      if (ticket !== this.seq) return; // superseded while awaiting
      this.render(items);
    } catch (err) {
      if (controller.signal.aborted) return;
      this.hide();
      this.options.onError?.(err);
    }
  }

  private render(items: Suggestion[]): void {
    this.items = items;
    this.active = -1;
    this.menu.textContent = "";
    this.menu.hidden = items.length === 0;
    items.forEach((item, index) => {
      const li = document.createElement("li");
      li.textContent = item.text;
      li.addEventListener("mousedown", (event) => {
        event.preventDefault();
        this.pick(index);
      });
      this.menu.appendChild(li);
    });
  }

  private onKey(event: KeyboardEvent): void {
    if (this.menu.hidden || this.items.length === 0) return;
    if (event.key === "ArrowDown" || event.key === "ArrowUp") {
      event.preventDefault();
      const step = event.key === "ArrowDown" ? 1 : -1;
      const n = this.items.length;
      this.active = (this.active + step + n) % n;
      this.menu.querySelectorAll("li").forEach((li, index) => {
        li.classList.toggle("active", index === this.active);
      });
    } else if (event.key === "Enter" && this.active >= 0) {
      event.preventDefault();
      this.pick(this.active);
    } else if (event.key === "Escape") {
      this.hide();
    }
  }

  private pick(index: number): void {
    const item = this.items[index];
    if (!item) return;
    this.hide();
    this.options.onPick(item.text);
  }

  hide(): void {
    clearTimeout(this.timer);
    this.menu.hidden = true;
    this.menu.textContent = "";
    this.items = [];
    this.active = -1;
  }
}
