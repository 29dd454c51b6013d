// Prompt template shared with the server: builder state renders to the exact
// text the dataset generator emits, and generated text parses back.

export const WEEKDAYS = [
  "Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday",
] as const;

export const KIND_PHRASES = {
  accident: "traffic accident",
  construction: "road construction",
  closure: "road closure",
  weather: "weather event",
  gathering: "public gathering",
} as const;

export const SEVERITY_CLASSES = ["minor", "general", "severe"] as const;

export const MINUTE_STEP = 4;

export type EventKind = keyof typeof KIND_PHRASES;
export type SeverityClass = (typeof SEVERITY_CLASSES)[number];

export interface BuilderState {
  weekday: number; // 0 = Monday
  hour: number;
  minute: number; // multiples of MINUTE_STEP
  eventKind: EventKind | null; // null renders a time-only prompt
  severity: SeverityClass;
  roadName: string | null; // null only for network-wide weather
}

export interface StructuredEvent {
  kind: EventKind;
  road: string | null;
  severity_class: SeverityClass;
}

export interface StructuredPrompt {
  timestamp: string;
  events: StructuredEvent[];
}

const pad2 = (n: number) => String(n).padStart(2, "0");

export function validateState(state: BuilderState): string | null {
  if (!Number.isInteger(state.weekday) || state.weekday < 0 || state.weekday > 6) {
    return "weekday out of range";
  }
  if (!Number.isInteger(state.hour) || state.hour < 0 || state.hour > 23) {
    return "hour out of range";
  }
  if (!Number.isInteger(state.minute) || state.minute < 0 || state.minute > 59
      || state.minute % MINUTE_STEP !== 0) {
    return `minute must be a multiple of ${MINUTE_STEP}`;
  }
  if (state.eventKind !== null) {
    if (!(state.eventKind in KIND_PHRASES)) return "unknown event kind";
    if (!SEVERITY_CLASSES.includes(state.severity)) return "unknown severity";
    if (state.roadName === null && state.eventKind !== "weather") {
      return "pick a road, only weather can cover the whole network";
    }
  }
  return null;
}

export function buildPrompt(state: BuilderState): string {
  const problem = validateState(state);
  if (problem !== null) throw new Error(problem);
  const head = `${WEEKDAYS[state.weekday]}, ${pad2(state.hour)}:${pad2(state.minute)}.`;
  if (state.eventKind === null) return head;
  const phrase = KIND_PHRASES[state.eventKind];
  const tail = state.roadName === null
    ? `A ${state.severity} ${phrase} across the network.`
    : `A ${state.severity} ${phrase} on ${state.roadName}.`;
  return `${head} ${tail}`;
}

// ISO timestamp inside the epoch week, matching how the server resolves
// weekday-only prompts (the epoch Monday is 2024-01-01).
export function timestampFor(state: BuilderState): string {
  return `2024-01-0${1 + state.weekday}T${pad2(state.hour)}:${pad2(state.minute)}:00`;
}

export function structuredFor(state: BuilderState): StructuredPrompt {
  const problem = validateState(state);
  if (problem !== null) throw new Error(problem);
  const events: StructuredEvent[] = state.eventKind === null ? [] : [{
    kind: state.eventKind,
    road: state.roadName,
    severity_class: state.severity,
  }];
  return { timestamp: timestampFor(state), events };
}

const HEAD_RE = new RegExp(`^(${WEEKDAYS.join("|")}), (\\d{2}):(\\d{2})\\.(?: (.*))?$`);
const EVENT_RE = new RegExp(
  `^A (${SEVERITY_CLASSES.join("|")}) `
  + `(${Object.values(KIND_PHRASES).join("|")}) `
  + `(?:on (.+)|across the network)\\.$`,
);

/** Inverse of buildPrompt for single-event prompts; null when out of reach. */
export function parsePrompt(text: string): BuilderState | null {
  const head = HEAD_RE.exec(text);
  if (head === null) return null;
  const weekday = WEEKDAYS.indexOf(head[1] as (typeof WEEKDAYS)[number]);
  const hour = Number(head[2]);
  const minute = Number(head[3]);
  const base: BuilderState = {
    weekday, hour, minute, eventKind: null, severity: "general", roadName: null,
  };
  if (head[4] === undefined) {
    return validateState(base) === null ? base : null;
  }
  const ev = EVENT_RE.exec(head[4]);
  if (ev === null) return null; // multi-event or free-form tail
  const kind = (Object.keys(KIND_PHRASES) as EventKind[])
    .find((k) => KIND_PHRASES[k] === ev[2]);
  if (kind === undefined) return null;
  const state: BuilderState = {
    ...base,
    eventKind: kind,
    severity: ev[1] as SeverityClass,
    roadName: ev[3] ?? null,
  };
  return validateState(state) === null ? state : null;
}

// Tokenization mirror: lowercase, runs of [a-z0-9].
export function tokenizeWords(text: string): string[] {
  return text.toLowerCase().match(/[a-z0-9]+/g) ?? [];
}

export function unknownWords(text: string, vocab: ReadonlySet<string>): string[] {
  return tokenizeWords(text).filter((w) => !vocab.has(w));
}
