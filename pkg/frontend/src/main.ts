// Browser entry point: builder panel, scenario cards, compare view.
// All logic that computes anything lives in the sibling modules; this file
// only wires DOM events to them.

import { type Client, type GenerateRequest, type NetworkJson, ApiError, makeClient } from "./api.js";
import { CardStore, type ScenarioCard, compareScenarios, makeCard } from "./cards.js";
import { CHANNELS, type Channel } from "./color.js";
import { renderOverlay, renderPicker } from "./map.js";
import {
  type BuilderState,
  KIND_PHRASES,
  MINUTE_STEP,
  SEVERITY_CLASSES,
  WEEKDAYS,
  buildPrompt,
  structuredFor,
  unknownWords,
  validateState,
} from "./template.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el as T;
};

const state: BuilderState = {
  weekday: 0,
  hour: 9,
  minute: 0,
  eventKind: null,
  severity: "general",
  roadName: null,
};

let network: NetworkJson | null = null;
let vocabSet: ReadonlySet<string> = new Set();
let client: Client;
let store: CardStore;
let cardSeq = 0;
const inFlight = new Set<string>();

function fillSelect(el: HTMLSelectElement, options: [string, string][]): void {
  el.innerHTML = "";
  for (const [value, label] of options) {
    const opt = document.createElement("option");
    opt.value = value;
    opt.textContent = label;
    el.appendChild(opt);
  }
}

function banner(message: string | null): void {
  const el = $("banner");
  el.textContent = message ?? "";
  el.classList.toggle("hidden", message === null);
}

function currentPrompt(): { text: string; structured: GenerateRequest["structured"] } | null {
  const freeText = ($("free-text") as HTMLTextAreaElement).value.trim();
  if (($("use-free-text") as HTMLInputElement).checked) {
    return freeText === "" ? null : { text: freeText, structured: undefined };
  }
  if (validateState(state) !== null) return null;
  return { text: buildPrompt(state), structured: structuredFor(state) };
}

function refreshBuilder(): void {
  const slider = $("time-slider") as HTMLInputElement;
  const minutes = Number(slider.value) * MINUTE_STEP;
  state.hour = Math.floor(minutes / 60);
  state.minute = minutes % 60;
  $("time-label").textContent =
    `${String(state.hour).padStart(2, "0")}:${String(state.minute).padStart(2, "0")}`;
  const eventRows = $("event-rows");
  eventRows.classList.toggle("hidden", state.eventKind === null);
  $("road-label").textContent = state.roadName ?? "(click the map)";

  const prompt = currentPrompt();
  const problem = ($("use-free-text") as HTMLInputElement).checked
    ? null
    : validateState(state);
  if (prompt === null) {
    $("prompt-preview").textContent = problem ?? "type a prompt";
    ($("generate") as HTMLButtonElement).disabled = true;
    return;
  }
  $("prompt-preview").textContent = prompt.text;
  const unk = unknownWords(prompt.text, vocabSet);
  $("unk-warning").textContent = unk.length
    ? `words outside the model vocabulary: ${unk.join(", ")}`
    : "";
  ($("generate") as HTMLButtonElement).disabled = inFlight.has("builder");
  if (network !== null) {
    const selected = network.roads.find((r) => r.name === state.roadName)?.road_id ?? null;
    $("picker").innerHTML = renderPicker(network, selected);
  }
}

function cardChannel(card: ScenarioCard): Channel {
  const sel = document.querySelector<HTMLSelectElement>(`[data-channel-for="${card.id}"]`);
  return (sel?.value as Channel) ?? "speed";
}

function renderCards(): void {
  if (network === null) return;
  const net = network;
  const list = $("cards");
  list.innerHTML = "";
  for (const card of [...store.list()].reverse()) {
    const article = document.createElement("article");
    article.className = "card";
    const divergedNote = card.nDiverged > 0
      ? ` <span class="warn">${card.nDiverged} chains diverged</span>` : "";
    article.innerHTML = `
      <header>
        <strong>${card.prompt.text}</strong>
        <span class="meta">seed ${card.seed}, k=${card.samples}, ${card.snapshot.timestamp}${divergedNote}</span>
      </header>
      <label>channel
        <select data-channel-for="${card.id}">
          ${CHANNELS.map((c) => `<option value="${c}">${c}</option>`).join("")}
        </select>
      </label>
      <button data-regenerate="${card.id}">regenerate (new card)</button>
      <div class="overlay" data-overlay-for="${card.id}"></div>`;
    list.appendChild(article);
    const overlay = article.querySelector<HTMLElement>(`[data-overlay-for="${card.id}"]`);
    if (overlay) overlay.innerHTML = renderOverlay(net, card.snapshot, cardChannel(card));
  }
  const ids = store.list().map((c): [string, string] => [c.id, `${c.id}: ${c.prompt.text}`]);
  fillSelect($("compare-left") as HTMLSelectElement, ids);
  fillSelect($("compare-right") as HTMLSelectElement, ids);
  renderCompare();
}

function renderCompare(): void {
  if (network === null) return;
  const leftId = ($("compare-left") as HTMLSelectElement).value;
  const rightId = ($("compare-right") as HTMLSelectElement).value;
  const channel = ($("compare-channel") as HTMLSelectElement).value as Channel;
  const left = store.get(leftId);
  const right = store.get(rightId);
  const target = $("compare-view");
  if (left === undefined || right === undefined) {
    target.innerHTML = "<p>generate at least one card, then pick two to compare</p>";
    return;
  }
  try {
    target.innerHTML = compareScenarios(network, left, right, channel).svg;
  } catch (err) {
    target.innerHTML = `<p class="warn">${err instanceof Error ? err.message : String(err)}</p>`;
  }
}

async function generateCard(req: GenerateRequest, flightKey: string): Promise<void> {
  if (inFlight.has(flightKey)) return; // one in-flight generation per card
  inFlight.add(flightKey);
  refreshBuilder();
  try {
    const response = await client.generate(req);
    cardSeq += 1;
    store.add(makeCard(response, `card-${Date.now()}-${cardSeq}`, new Date().toISOString()));
    banner(null);
    renderCards();
  } catch (err) {
    banner(err instanceof ApiError
      ? `generation failed: ${err.message} (${err.code})`
      : "generation failed: service unreachable");
  } finally {
    inFlight.delete(flightKey);
    refreshBuilder();
  }
}

function wireBuilder(): void {
  const weekdaySel = $("weekday") as HTMLSelectElement;
  fillSelect(weekdaySel, WEEKDAYS.map((w, i): [string, string] => [String(i), w]));
  const kindSel = $("event-kind") as HTMLSelectElement;
  fillSelect(kindSel, [
    ["", "time only"],
    ...Object.keys(KIND_PHRASES).map((k): [string, string] => [k, k]),
  ]);
  const sevSel = $("severity") as HTMLSelectElement;
  fillSelect(sevSel, SEVERITY_CLASSES.map((s): [string, string] => [s, s]));
  sevSel.value = "general";
  fillSelect(
    $("compare-channel") as HTMLSelectElement,
    CHANNELS.map((c): [string, string] => [c, c]),
  );

  weekdaySel.addEventListener("change", () => {
    state.weekday = Number(weekdaySel.value);
    refreshBuilder();
  });
  ($("time-slider") as HTMLInputElement).addEventListener("input", refreshBuilder);
  kindSel.addEventListener("change", () => {
    state.eventKind = kindSel.value === "" ? null : (kindSel.value as BuilderState["eventKind"]);
    refreshBuilder();
  });
  sevSel.addEventListener("change", () => {
    state.severity = sevSel.value as BuilderState["severity"];
    refreshBuilder();
  });
  $("network-wide").addEventListener("click", () => {
    state.roadName = null;
    refreshBuilder();
  });
  $("picker").addEventListener("click", (ev) => {
    const target = (ev.target as Element).closest("[data-road]");
    if (target === null || network === null) return;
    const id = Number(target.getAttribute("data-road"));
    state.roadName = network.roads.find((r) => r.road_id === id)?.name ?? null;
    refreshBuilder();
  });
  $("use-free-text").addEventListener("change", refreshBuilder);
  $("free-text").addEventListener("input", refreshBuilder);

  $("generate").addEventListener("click", () => {
    const prompt = currentPrompt();
    if (prompt === null) return;
    const samples = Number(($("samples") as HTMLInputElement).value) || 10;
    const seedRaw = ($("seed") as HTMLInputElement).value.trim();
    const req: GenerateRequest = prompt.structured !== undefined
      ? { structured: prompt.structured, samples }
      : { text: prompt.text, samples };
    if (seedRaw !== "") req.seed = Number(seedRaw);
    void generateCard(req, "builder");
  });

  $("cards").addEventListener("click", (ev) => {
    const btn = (ev.target as Element).closest("[data-regenerate]");
    if (btn === null) return;
    const card = store.get(btn.getAttribute("data-regenerate") ?? "");
    if (card === undefined) return;
    const req: GenerateRequest = card.prompt.structured !== null
      ? { structured: card.prompt.structured, samples: card.samples, seed: card.seed }
      : { text: card.prompt.text, samples: card.samples, seed: card.seed };
    void generateCard(req, card.id);
  });
  $("cards").addEventListener("change", (ev) => {
    if ((ev.target as Element).matches("[data-channel-for]")) renderCards();
  });
  for (const id of ["compare-left", "compare-right", "compare-channel"]) {
    $(id).addEventListener("change", renderCompare);
  }
  $("clear-history").addEventListener("click", () => {
    store.clear();
    renderCards();
  });
}

async function wirePresets(): Promise<void> {
  const presets = await client.presets();
  const bar = $("presets");
  bar.innerHTML = "";
  for (const preset of presets) {
    const btn = document.createElement("button");
    btn.textContent = preset.name;
    btn.addEventListener("click", () => void generateCard(preset.request, "builder"));
    bar.appendChild(btn);
  }
}

async function boot(): Promise<void> {
  client = makeClient("", fetch.bind(window));
  store = new CardStore(window.sessionStorage);
  wireBuilder();
  try {
    await client.health();
    banner(null);
  } catch {
    banner("generation service is not reachable; check that the server is running");
    return;
  }
  const [net, vocab] = await Promise.all([client.network(), client.vocab()]);
  network = net;
  vocabSet = new Set(vocab.tokens);
  await wirePresets();
  renderCards();
  refreshBuilder();
}

void boot();
