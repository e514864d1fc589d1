import type { Annotation, Interpretation, QueryResponse, ResultRow } from "./api.js";

export interface ChipHandlers {
  onPin: (annotationIndex: number, recordId: string) => void;
}

export function renderIntent(badge: HTMLElement, response: QueryResponse): void {
  badge.textContent = response.intent;
  badge.className = response.intent === "NLS" ? "badge badge-nls" : "badge badge-keyword";
  badge.hidden = false;
}

/** One chip per annotation of the top interpretation. The kind label is
 * copied verbatim from the response; the contract test depends on that. */
export function renderChips(
  container: HTMLElement,
  interpretation: Interpretation | undefined,
  handlers: ChipHandlers,
): void {
  container.textContent = "";
  if (!interpretation) return;
  interpretation.annotations.forEach((ann, index) => {
    container.appendChild(chip(ann, index, handlers));
  });
}

function chip(ann: Annotation, index: number, handlers: ChipHandlers): HTMLElement {
  const el = document.createElement("span");
  el.className = ann.pinned ? "chip chip-pinned" : "chip";
  el.title = ann.explanation;

  const kind = document.createElement("strong");
  kind.className = "chip-kind";
  kind.textContent = ann.kind;
  el.appendChild(kind);

  const text = document.createElement("span");
  text.className = "chip-text";
  text.textContent = ann.text;
  el.appendChild(text);

  // reference chips offer "not the record I meant" repair
  if (ann.kind.startsWith("related_") && ann.alternatives.length > 1) {
    el.appendChild(alternativePicker(ann, index, handlers));
  }
  return el;
}

function alternativePicker(
  ann: Annotation,
  index: number,
  handlers: ChipHandlers,
): HTMLSelectElement {
  const select = document.createElement("select");
  select.className = "chip-alternatives";
  for (const [recordId, name] of ann.alternatives) {
    const option = document.createElement("option");
    option.value = recordId;
    option.textContent = name;
    option.selected = recordId === ann.chosen;
    select.appendChild(option);
  }
  select.addEventListener("change", () => handlers.onPin(index, select.value));
  return select;
}

export function renderResults(table: HTMLTableElement, rows: ResultRow[]): void {
  table.textContent = "";
  const head = table.createTHead().insertRow();
  for (const title of ["Record", "Type", "Modified"]) {
    const th = document.createElement("th");
    th.textContent = title;
    head.appendChild(th);
  }
  const body = table.createTBody();
  if (rows.length === 0) {
    const cell = body.insertRow().insertCell();
    cell.colSpan = 3;
    cell.className = "empty";
    cell.textContent = "no records";
    return;
  }
  for (const row of rows) {
    const tr = body.insertRow();
    tr.dataset.id = row.id;
    tr.insertCell().textContent = row.name ?? row.id;
    tr.insertCell().textContent = row.entity;
    tr.insertCell().textContent = row.modified_at;
  }
}
