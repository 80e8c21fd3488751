import { ApiError, ConsoleClient } from "./api.js";
import { Session } from "./state.js";
import { b64ToBytes, heatRgba, lambdaFromRgba, meanLambda, pngDims } from "./overlay.js";
import { EDIT_ACTIONS } from "./types.js";
import type { EditChoice, ObfuscateResponse } from "./types.js";

const SERVICE_URL =
  new URLSearchParams(location.search).get("service") ?? "http://127.0.0.1:8008";

const CHOICES: EditChoice[] = ["off", ...EDIT_ACTIONS];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

class ConsoleApp {
  private client = new ConsoleClient(SERVICE_URL);
  private session: Session | null = null;
  private pending = false;
  private lambdaBytes: Uint8Array | null = null;

  private banner = el<HTMLDivElement>("banner");
  private attrPanel = el<HTMLDivElement>("attr-panel");
  private fileInput = el<HTMLInputElement>("file-input");
  private applyBtn = el<HTMLButtonElement>("apply-btn");
  private status = el<HTMLSpanElement>("status");
  private originalImg = el<HTMLImageElement>("original");
  private resultImg = el<HTMLImageElement>("result");
  private overlayCanvas = el<HTMLCanvasElement>("overlay");
  private overlayToggle = el<HTMLInputElement>("overlay-toggle");
  private opacity = el<HTMLInputElement>("opacity");
  private historyStrip = el<HTMLDivElement>("history");

  init(): void {
    this.fileInput.addEventListener("change", () => this.onFileChosen());
    this.applyBtn.addEventListener("click", () => void this.apply());
    this.overlayToggle.addEventListener("change", () => this.paintOverlay());
    this.opacity.addEventListener("input", () => this.paintOverlay());
    void this.loadAttrs();
  }

  private showBanner(msg: string): void {
    this.banner.textContent = "";
    this.banner.append(msg + " ");
    const retry = document.createElement("button");
    retry.textContent = "retry";
    retry.addEventListener("click", () => void this.loadAttrs());
    this.banner.append(retry);
    this.banner.hidden = false;
  }

  async loadAttrs(): Promise<void> {
    this.banner.hidden = true;
    try {
      const res = await this.client.getAttrs();
      this.session = new Session(res.attrs);
      this.renderAttrPanel();
      this.status.textContent = `model ${res.model_version}, ${res.attrs.length} attributes`;
    } catch (err) {
      const detail = err instanceof ApiError ? err.message : String(err);
      this.showBanner(`service not reachable at ${SERVICE_URL}: ${detail}`);
    }
  }

  private renderAttrPanel(): void {
    const session = this.session!;
    this.attrPanel.textContent = "";
    for (const attr of session.attrs) {
      const row = document.createElement("div");
      row.className = "attr-row";
      const label = document.createElement("span");
      label.textContent = attr;
      row.append(label);
      for (const choice of CHOICES) {
        const btn = document.createElement("label");
        const radio = document.createElement("input");
        radio.type = "radio";
        radio.name = `edit-${attr}`;
        radio.checked = session.getEdit(attr) === choice;
        radio.addEventListener("change", () => session.setEdit(attr, choice));
        btn.append(radio, choice);
        row.append(btn);
      }
      this.attrPanel.append(row);
    }
  }

  private onFileChosen(): void {
    const file = this.fileInput.files?.[0];
    if (!file || !this.session) return;
    const reader = new FileReader();
    reader.onload = () => {
      const url = reader.result as string;
      this.session!.original = url.slice(url.indexOf(",") + 1); // strip data: prefix
      this.originalImg.src = url;
      this.status.textContent = `${file.name} loaded`;
    };
    reader.readAsDataURL(file);
  }

  async apply(): Promise<void> {
    if (this.pending || !this.session) return;
    if (this.session.original === null) {
      this.status.textContent = "load an image first";
      return;
    }
    this.pending = true;
    this.applyBtn.disabled = true;
    this.status.textContent = "applying...";
    try {
      const res = await this.client.obfuscate(this.session.buildRequest());
      this.session.recordStep(res);
      this.renderResult(res);
      this.renderHistory();
      const applied = res.applied_edits.map(([a, act]) => `${a}:${act}`).join(", ");
      this.status.textContent = applied ? `applied ${applied}` : "no edits (identity)";
    } catch (err) {
      this.status.textContent =
        err instanceof ApiError ? `request failed: ${err.message}` : String(err);
    } finally {
      this.pending = false;
      this.applyBtn.disabled = false;
    }
  }

  private renderResult(res: ObfuscateResponse): void {
    this.resultImg.src = `data:image/png;base64,${res.image}`;
    this.lambdaBytes = null;
    if (res.lambda_map) {
      const bytes = b64ToBytes(res.lambda_map);
      const { width, height } = pngDims(bytes);
      this.overlayCanvas.width = width;
      this.overlayCanvas.height = height;
      const img = new Image();
      img.onload = () => {
        const scratch = document.createElement("canvas");
        scratch.width = width;
        scratch.height = height;
        const ctx = scratch.getContext("2d")!;
        ctx.drawImage(img, 0, 0);
        this.lambdaBytes = lambdaFromRgba(ctx.getImageData(0, 0, width, height).data);
        this.status.textContent += `, mean lambda ${meanLambda(this.lambdaBytes).toFixed(2)}`;
        this.paintOverlay();
      };
      img.src = `data:image/png;base64,${res.lambda_map}`;
    }
    this.paintOverlay();
  }

  private paintOverlay(): void {
    const ctx = this.overlayCanvas.getContext("2d")!;
    ctx.clearRect(0, 0, this.overlayCanvas.width, this.overlayCanvas.height);
    this.overlayCanvas.hidden = !(this.overlayToggle.checked && this.lambdaBytes);
    if (this.overlayCanvas.hidden || !this.lambdaBytes) return;
    const rgba = heatRgba(this.lambdaBytes, Number(this.opacity.value));
    ctx.putImageData(
      new ImageData(new Uint8ClampedArray(rgba), this.overlayCanvas.width, this.overlayCanvas.height),
      0,
      0,
    );
  }

  private renderHistory(): void {
    const session = this.session!;
    this.historyStrip.textContent = "";
    for (let i = 0; i < session.stepCount; i++) {
      const step = session.getStep(i);
      const thumb = document.createElement("img");
      thumb.className = "thumb";
      thumb.src = `data:image/png;base64,${step.response.image}`;
      thumb.title = Object.entries(step.edits)
        .filter(([, c]) => c !== "off")
        .map(([a, c]) => `${a}:${c}`)
        .join(", ") || "identity";
      thumb.addEventListener("click", () => {
        session.restore(i);
        this.renderAttrPanel();
        this.renderResult(step.response);
        this.status.textContent = `restored step ${i + 1}`;
      });
      this.historyStrip.append(thumb);
    }
  }
}

new ConsoleApp().init();
