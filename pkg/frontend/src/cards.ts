import type { ApiRecord } from "./types";

export interface CardHandlers {
  onViewed(record: ApiRecord): void;
  onFlag(record: ApiRecord): void;
  onComment(record: ApiRecord): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function factRow(label: string, value: string): HTMLElement {
  const row = el("div", "fact");
  row.append(el("span", "fact-label", label), el("span", "fact-value", value));
  return row;
}

/**
 * One record card. The three status buttons in the top right mirror the
 * analyst fields exactly as the API last reported them: the viewed button
 * stays grey until analyst_hasViewed is true, the flag button lights up
 * while analyst_flagged is true, and the comment button shows whether any
 * notes exist.
 */
export function renderRecordCard(record: ApiRecord, handlers: CardHandlers): HTMLElement {
  const card = el("article", "record-card");
  card.dataset.docId = record.doc_id;

  const header = el("header", "card-header");
  header.append(el("h3", "card-title", record.title));

  const buttons = el("div", "card-buttons");
  const viewedButton = el("button", "status-button viewed", "👁");
  viewedButton.dataset.role = "viewed";
  viewedButton.title = record.analyst_hasViewed
    ? `viewed ${record.analyst_viewDate ?? ""}`.trim()
    : "mark as viewed";
  viewedButton.classList.toggle("active", record.analyst_hasViewed === true);
  viewedButton.classList.toggle("grey", record.analyst_hasViewed !== true);
  viewedButton.addEventListener("click", () => handlers.onViewed(record));

  const commentButton = el("button", "status-button comment", "💬");
  commentButton.dataset.role = "comment";
  commentButton.title = record.analyst_notes ? "has notes" : "add a note";
  commentButton.classList.toggle("active", Boolean(record.analyst_notes));
  commentButton.classList.toggle("grey", !record.analyst_notes);
  commentButton.addEventListener("click", () => handlers.onComment(record));

  const flagButton = el("button", "status-button flag", "⚑");
  flagButton.dataset.role = "flag";
  flagButton.title = record.analyst_flagged ? "flagged" : "flag for follow-up";
  flagButton.classList.toggle("active", record.analyst_flagged === true);
  flagButton.classList.toggle("grey", record.analyst_flagged !== true);
  flagButton.addEventListener("click", () => handlers.onFlag(record));

  buttons.append(viewedButton, commentButton, flagButton);
  header.append(buttons);
  card.append(header);

  const facts = el("div", "card-facts");
  facts.append(
    factRow("Seller", record.seller),
    factRow("Category", record.category),
    factRow("Class", record.productClass),
    factRow("Price", record.price),
    factRow("Ships from", record.originCountry),
    factRow("Payment", record.payment),
  );
  card.append(facts);

  if (record.analyst_notes) {
    card.append(el("pre", "card-notes", record.analyst_notes));
  }
  return card;
}
