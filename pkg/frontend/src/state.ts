import { EDIT_ACTIONS } from "./types.js";
import type {
  EditAction,
  EditChoice,
  HistoryStep,
  ObfuscateRequest,
  ObfuscateResponse,
} from "./types.js";

/** Client-side session: the loaded image, one edit choice per attribute, and
 * an append-only log of applied steps. All request payloads go through
 * buildRequest(), which is the single place edits are turned into wire
 * format, so an illegal action can never reach the service. */
export class Session {
  readonly attrs: readonly string[];
  original: string | null = null;
  lastResponse: ObfuscateResponse | null = null;
  private edits = new Map<string, EditChoice>();
  private history: HistoryStep[] = [];

  constructor(attrs: readonly string[]) {
    if (attrs.length === 0) throw new Error("session needs at least one attribute");
    this.attrs = [...attrs];
    for (const a of this.attrs) this.edits.set(a, "off");
  }

  setEdit(attr: string, choice: EditChoice): void {
    if (!this.edits.has(attr)) {
      throw new Error(`unknown attribute "${attr}"`);
    }
    if (choice !== "off" && !EDIT_ACTIONS.includes(choice)) {
      throw new Error(`unknown action "${choice}"`);
    }
    this.edits.set(attr, choice);
  }

  getEdit(attr: string): EditChoice {
    const choice = this.edits.get(attr);
    if (choice === undefined) throw new Error(`unknown attribute "${attr}"`);
    return choice;
  }

  editSnapshot(): Record<string, EditChoice> {
    const out: Record<string, EditChoice> = {};
    for (const [k, v] of this.edits) out[k] = v;
    return out;
  }

  /** True when any active edit routes through the mixing stage, i.e. the
   * response will carry a lambda map worth asking for. */
  hasObfuscate(): boolean {
    for (const v of this.edits.values()) if (v === "obfuscate") return true;
    return false;
  }

  clearEdits(): void {
    for (const a of this.attrs) this.edits.set(a, "off");
  }

  buildRequest(returnLambdaMap?: boolean): ObfuscateRequest {
    if (this.original === null) {
      throw new Error("no image loaded");
    }
    const pairs: [string, EditAction][] = [];
    for (const a of this.attrs) {
      const choice = this.edits.get(a)!;
      if (choice !== "off") pairs.push([a, choice]);
    }
    return {
      image: this.original,
      edits: pairs,
      return_lambda_map: returnLambdaMap ?? this.hasObfuscate(),
    };
  }

  /** Append the step that just ran. The log only ever grows; stepping back
   * through history re-applies old edit choices without rewriting it. */
  recordStep(response: ObfuscateResponse): HistoryStep {
    const step: HistoryStep = Object.freeze({
      edits: Object.freeze(this.editSnapshot()),
      response,
    });
    this.history.push(step);
    this.lastResponse = response;
    return step;
  }

  get stepCount(): number {
    return this.history.length;
  }

  getStep(i: number): HistoryStep {
    if (i < 0 || i >= this.history.length) {
      throw new Error(`no history step ${i}`);
    }
    return this.history[i];
  }

  /** Restore the edit choices of step i (the log itself is untouched). */
  restore(i: number): void {
    const step = this.getStep(i);
    for (const a of this.attrs) {
      this.edits.set(a, step.edits[a] ?? "off");
    }
  }
}
