// Scenario cards and the session-scoped history. A card is frozen once
// generated; regenerating always appends a new card. History lives entirely
// client-side so the server stays stateless.

import type { GenerateResponse, NetworkJson } from "./api.js";
import type { Channel } from "./color.js";
import { renderDiff } from "./map.js";

export interface ScenarioCard {
  readonly id: string;
  readonly prompt: GenerateResponse["prompt"];
  readonly seed: number;
  readonly samples: number;
  readonly snapshot: GenerateResponse["snapshot"];
  readonly nDiverged: number;
  readonly modelHash: string;
  readonly createdAt: string;
}

export function makeCard(
  response: GenerateResponse,
  id: string,
  createdAt: string,
): ScenarioCard {
  const card: ScenarioCard = {
    id,
    prompt: response.prompt,
    seed: response.seed,
    samples: response.samples,
    snapshot: response.snapshot,
    nDiverged: response.n_diverged,
    modelHash: response.model_hash,
    createdAt,
  };
  Object.freeze(card.snapshot.speeds);
  Object.freeze(card.snapshot.congestion);
  Object.freeze(card.snapshot.travel_times);
  Object.freeze(card.snapshot);
  Object.freeze(card.prompt);
  return Object.freeze(card);
}

export interface CompareView {
  left: ScenarioCard;
  right: ScenarioCard;
  channel: Channel;
  svg: string;
}

export function compareScenarios(
  network: NetworkJson,
  left: ScenarioCard,
  right: ScenarioCard,
  channel: Channel,
): CompareView {
  if (left.modelHash !== right.modelHash) {
    throw new Error("cards come from different models");
  }
  return {
    left,
    right,
    channel,
    svg: renderDiff(network, left.snapshot, right.snapshot, channel),
  };
}

// minimal slice of the Web Storage interface, injectable for tests
export interface StringStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

const HISTORY_KEY = "ttgen.cards.v1";

export class CardStore {
  private cards: ScenarioCard[] = [];

  constructor(private readonly storage: StringStore) {
    const raw = storage.getItem(HISTORY_KEY);
    if (raw !== null) {
      try {
        const parsed = JSON.parse(raw) as ScenarioCard[];
        this.cards = parsed.map((c) => Object.freeze({ ...c }));
      } catch {
        this.cards = []; // a corrupt history never blocks the app
      }
    }
  }

  list(): readonly ScenarioCard[] {
    return this.cards;
  }

  get(id: string): ScenarioCard | undefined {
    return this.cards.find((c) => c.id === id);
  }

  add(card: ScenarioCard): void {
    this.cards = [...this.cards, card];
    this.storage.setItem(HISTORY_KEY, JSON.stringify(this.cards));
  }

  clear(): void {
    this.cards = [];
    this.storage.setItem(HISTORY_KEY, "[]");
  }
}
