import { ApiClient } from "./api";
import { renderRecordCard } from "./cards";
import { openCommentModal } from "./modal";
import type { ApiRecord } from "./types";

interface ViewState {
  index: string | null;
  page: number;
  size: number;
  query: string;
  flaggedOnly: boolean;
}

/**
 * The triage dashboard. The UI holds no authoritative state: every
 * mutation POSTs to the API and re-renders the card from the response,
 * and a full reload reproduces exactly what the API reports.
 */
export class AnalystApp {
  readonly api: ApiClient;
  private readonly root: HTMLElement;
  private state: ViewState = {
    index: null,
    page: 1,
    size: 25,
    query: "",
    flaggedOnly: false,
  };
  private total = 0;

  constructor(root: HTMLElement, apiBaseUrl: string) {
    this.root = root;
    this.api = new ApiClient(apiBaseUrl);
  }

  async init(): Promise<void> {
    this.root.innerHTML = "";
    this.root.append(this.buildChrome());
    try {
      const { indexes } = await this.api.listIndexes();
      this.populateIndexPicker(indexes);
      if (indexes.length > 0) {
        this.state.index = indexes[0];
        await this.refresh();
      } else {
        this.setStatus("No indexes yet. Ingest a market and reload.");
      }
    } catch {
      this.banner("API unreachable — is the service running?");
    }
  }

  // -- chrome -----------------------------------------------------------------

  private buildChrome(): HTMLElement {
    const chrome = document.createElement("div");
    chrome.className = "chrome";

    const picker = document.createElement("select");
    picker.id = "index-picker";
    picker.addEventListener("change", () => {
      this.state.index = picker.value;
      this.state.page = 1;
      void this.refresh();
    });

    const search = document.createElement("input");
    search.id = "search-box";
    search.type = "search";
    search.placeholder = "Search titles, sellers, categories, notes…";
    search.addEventListener("keydown", (event) => {
      if (event.key === "Enter") {
        this.state.query = search.value.trim();
        this.state.page = 1;
        void this.refresh();
      }
    });

    const flaggedToggle = document.createElement("label");
    flaggedToggle.className = "flagged-toggle";
    const checkbox = document.createElement("input");
    checkbox.type = "checkbox";
    checkbox.id = "flagged-only";
    checkbox.addEventListener("change", () => {
      this.state.flaggedOnly = checkbox.checked;
      this.state.page = 1;
      void this.refresh();
    });
    flaggedToggle.append(checkbox, document.createTextNode(" flagged only"));

    const pager = document.createElement("div");
    pager.className = "pager";
    const prev = document.createElement("button");
    prev.id = "page-prev";
    prev.textContent = "‹ prev";
    prev.addEventListener("click", () => {
      if (this.state.page > 1) {
        this.state.page -= 1;
        void this.refresh();
      }
    });
    const label = document.createElement("span");
    label.id = "page-label";
    const next = document.createElement("button");
    next.id = "page-next";
    next.textContent = "next ›";
    next.addEventListener("click", () => {
      if (this.state.page * this.state.size < this.total) {
        this.state.page += 1;
        void this.refresh();
      }
    });
    pager.append(prev, label, next);

    const status = document.createElement("div");
    status.id = "status-line";

    const list = document.createElement("div");
    list.id = "record-list";

    chrome.append(picker, search, flaggedToggle, pager, status, list);
    return chrome;
  }

  private populateIndexPicker(indexes: string[]): void {
    const picker = this.query<HTMLSelectElement>("#index-picker");
    picker.innerHTML = "";
    for (const name of indexes) {
      const option = document.createElement("option");
      option.value = name;
      option.textContent = name;
      picker.append(option);
    }
  }

  private setStatus(text: string): void {
    this.query("#status-line").textContent = text;
  }

  private banner(text: string): void {
    const note = document.createElement("div");
    note.className = "error-banner";
    note.textContent = text;
    this.root.prepend(note);
  }

  private toast(text: string): void {
    const note = document.createElement("div");
    note.className = "retry-toast";
    note.textContent = text;
    this.root.append(note);
    setTimeout(() => note.remove(), 4000);
  }

  private query<T extends HTMLElement = HTMLElement>(selector: string): T {
    const node = this.root.querySelector<T>(selector);
    if (!node) throw new Error(`missing UI element ${selector}`);
    return node;
  }

  // -- data flow ---------------------------------------------------------------

  async refresh(): Promise<void> {
    const { index, page, size, query, flaggedOnly } = this.state;
    if (!index) return;
    const list = this.query("#record-list");
    try {
      let records: ApiRecord[];
      if (query) {
        const result = await this.api.search(index, query, {
          flagged: flaggedOnly ? true : undefined,
        });
        records = result.hits.map((hit) => hit.record);
        this.total = records.length;
        records = records.slice((page - 1) * size, page * size);
      } else if (flaggedOnly) {
        // The API rejects empty queries, so flagged-only browsing pages
        // the record list and filters client-side.
        const pageData = await this.api.records(index, 1, 500);
        records = pageData.records.filter((r) => r.analyst_flagged === true);
        this.total = records.length;
        records = records.slice((page - 1) * size, page * size);
      } else {
        const pageData = await this.api.records(index, page, size);
        records = pageData.records;
        this.total = pageData.total;
      }
      list.innerHTML = "";
      for (const record of records) {
        list.append(this.card(record));
      }
      const pages = Math.max(1, Math.ceil(this.total / size));
      this.query("#page-label").textContent = `page ${page} of ${pages} (${this.total} records)`;
      this.setStatus(records.length ? "" : "No records match.");
    } catch (error) {
      this.banner(`Failed to load records: ${(error as Error).message}`);
    }
  }

  private card(record: ApiRecord): HTMLElement {
    // Button handlers swallow the rejection: mutate() already surfaced it
    // as a retry toast. The comment modal awaits instead, to stay open.
    return renderRecordCard(record, {
      onViewed: (target) =>
        void this.mutate(() => this.api.markViewed(this.state.index!, target.doc_id)).catch(() => {}),
      onFlag: (target) =>
        void this.mutate(() => this.api.setFlag(this.state.index!, target.doc_id, null)).catch(() => {}),
      onComment: (target) => {
        openCommentModal(target.title, async (text) => {
          await this.mutate(() => this.api.addComment(this.state.index!, target.doc_id, text));
        });
      },
    });
  }

  /**
   * Run one mutation and swap the card for what the API returned. On
   * failure nothing changes on screen (no optimistic state) and a retry
   * toast appears.
   */
  private async mutate(call: () => Promise<ApiRecord>): Promise<void> {
    try {
      const updated = await call();
      const stale = this.root.querySelector(`[data-doc-id="${updated.doc_id}"]`);
      if (stale) stale.replaceWith(this.card(updated));
    } catch (error) {
      this.toast(`Change not saved — ${(error as Error).message}. Retry.`);
      throw error;
    }
  }
}
