// Wire types for the obfuscation service (see the package README for the
// endpoint reference). Field names mirror the JSON bodies exactly.

export const EDIT_ACTIONS = ["set0", "set1", "invert", "obfuscate"] as const;

export type EditAction = (typeof EDIT_ACTIONS)[number];

/** Per-attribute control state; "off" sends nothing for that attribute. */
export type EditChoice = "off" | EditAction;

export interface AttrsResponse {
  attrs: string[];
  model_version: string;
}

export interface HealthResponse {
  status: string;
  model_version: string;
  uptime_seconds: number;
}

export interface ObfuscateRequest {
  /** base64-encoded input image (PNG or JPEG bytes). */
  image: string;
  /** [attribute, action] pairs, at most one per attribute. */
  edits: [string, EditAction][];
  return_lambda_map: boolean;
}

export interface ObfuscateResponse {
  /** base64-encoded PNG at the model's working resolution. */
  image: string;
  /** base64-encoded grayscale PNG, present when an obfuscate edit ran. */
  lambda_map: string | null;
  applied_edits: [string, EditAction][];
  model_version: string;
}

/** One applied step: the edit choices that produced a result, plus the
 * result itself for thumbnailing. Frozen on append. */
export interface HistoryStep {
  edits: Record<string, EditChoice>;
  response: ObfuscateResponse;
}
