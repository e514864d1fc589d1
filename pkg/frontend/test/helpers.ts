import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

/** Loads the shipped page markup into jsdom so tests run against the
 * exact DOM the server serves. */
export function loadPage(): void {
  const here = dirname(fileURLToPath(import.meta.url));
  const html = readFileSync(join(here, "..", "static", "index.html"), "utf8");
  const body = /<body>([\s\S]*)<\/body>/.exec(html);
  if (!body) throw new Error("static/index.html has no body");
  document.body.innerHTML = body[1];
}

export function settle(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

export function resultIds(): (string | undefined)[] {
  return [...document.querySelectorAll<HTMLElement>("#results tbody tr")].map(
    (tr) => tr.dataset.id,
  );
}

export function chipKinds(): (string | null)[] {
  return [...document.querySelectorAll(".chip-kind")].map((el) => el.textContent);
}
