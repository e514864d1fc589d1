import { ApiError, SearchApi } from "./api.js";
import type { ApiLike, QueryResponse } from "./api.js";
import { Typeahead } from "./typeahead.js";
import { renderChips, renderIntent, renderResults } from "./view.js";

export interface AppElements {
  form: HTMLFormElement;
  input: HTMLInputElement;
  menu: HTMLUListElement;
  intent: HTMLElement;
  chips: HTMLElement;
  results: HTMLTableElement;
  keywordButton: HTMLButtonElement;
  banner: HTMLElement;
  bannerMessage: HTMLElement;
  retryButton: HTMLButtonElement;
}

const SUGGEST_LIMIT = 8;

/** Wires the widgets together. Holds no query semantics: every state
 * transition is a re-render of a server response. */
export class App {
  response: QueryResponse | undefined;
  private lastQuery = "";
  private lastAction: (() => Promise<void>) | undefined;

  constructor(
    private readonly api: ApiLike,
    private readonly el: AppElements,
  ) {
    new Typeahead(el.input, el.menu, {
      fetch: (q, signal) => api.suggest(q, SUGGEST_LIMIT, signal),
      onPick: (text) => {
        el.input.value = text;
        void this.search(text);
      },
      onError: () => this.showBanner("search service unreachable"),
    });
    el.form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.search(el.input.value.trim());
    });
    el.keywordButton.addEventListener("click", () => void this.searchAsKeywords());
    el.retryButton.addEventListener("click", () => void this.lastAction?.());
  }

  async search(q: string): Promise<void> {
    if (!q) return;
    this.lastQuery = q;
    await this.perform(() => this.api.query(q));
  }

  async searchAsKeywords(): Promise<void> {
    const q = this.lastQuery || this.el.input.value.trim();
    if (!q) return;
    await this.perform(() => this.api.query(q, { forceKeyword: true }));
  }

  async pin(annotationIndex: number, recordId: string): Promise<void> {
    const q = this.lastQuery;
    await this.perform(() => this.api.remediate(q, annotationIndex, recordId));
  }

  private async perform(call: () => Promise<QueryResponse>): Promise<void> {
    this.lastAction = () => this.perform(call);
    try {
      const response = await call();
      this.hideBanner();
      this.response = response;
      this.render(response);
    } catch (err) {
      this.showBanner(err instanceof ApiError ? err.message : "request failed");
    }
  }

  private render(response: QueryResponse): void {
    renderIntent(this.el.intent, response);
    renderChips(this.el.chips, response.interpretations[0], {
      onPin: (index, recordId) => void this.pin(index, recordId),
    });
    renderResults(this.el.results, response.results);
    const keywordUseful = response.fallback_available && response.intent !== "KEYWORD";
    this.el.keywordButton.hidden = !keywordUseful;
  }

  private showBanner(message: string): void {
    this.el.bannerMessage.textContent = message;
    this.el.banner.hidden = false;
  }

  private hideBanner(): void {
    this.el.banner.hidden = true;
  }
}

export function mount(root: Document, api?: ApiLike): App | undefined {
  const form = root.getElementById("search-form");
  if (!(form instanceof HTMLFormElement)) return undefined;
  const byId = <T extends HTMLElement>(id: string): T => {
    const node = root.getElementById(id);
    if (!node) throw new Error(`missing #${id}`);
    return node as T;
  };
  return new App(api ?? new SearchApi(), {
    form,
    input: byId<HTMLInputElement>("q"),
    menu: byId<HTMLUListElement>("suggestions"),
    intent: byId<HTMLElement>("intent"),
    chips: byId<HTMLElement>("chips"),
    results: byId<HTMLTableElement>("results"),
    keywordButton: byId<HTMLButtonElement>("keyword-btn"),
    banner: byId<HTMLElement>("banner"),
    bannerMessage: byId<HTMLElement>("banner-message"),
    retryButton: byId<HTMLButtonElement>("retry-btn"),
  });
}

if (typeof document !== "undefined") {
  if (document.readyState === "loading") {
    document.addEventListener("DOMContentLoaded", () => void mount(document));
  } else {
    void mount(document);
  }
}
