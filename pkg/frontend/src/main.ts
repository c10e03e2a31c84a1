// Entry point: wires the DOM to the controller and the pure render helpers.

import {
  BoardEntry,
  GridRow,
  ModelInfo,
  PerturbResponse,
  SampleInfo,
  getLeaderboard,
  getModels,
  getOrderGrid,
  getSamples,
} from "./api.js";
import { PanelController } from "./controller.js";
import {
  decodeRgb8,
  formatAccuracy,
  highlightForCell,
  renderBars,
} from "./render.js";
import { KINDS, KindName, LEVEL_MAX, levelLabel } from "./state.js";

const SCALE = 8; // 32x32 -> 256x256 on screen
const SIGNED_KINDS = new Set<KindName>(["hue", "saturation", "brightness", "contrast", "rotation"]);

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  text = ""
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

function drawImage(canvas: HTMLCanvasElement, b64: string, width: number, height: number): void {
  canvas.width = width * SCALE;
  canvas.height = height * SCALE;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const rgba = decodeRgb8(b64, width, height);
  const small = new ImageData(rgba, width, height);
  // Draw at native size, then nearest-neighbor upscale onto the same canvas.
  const stage = document.createElement("canvas");
  stage.width = width;
  stage.height = height;
  stage.getContext("2d")!.putImageData(small, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(stage, 0, 0, canvas.width, canvas.height);
}

class PanelApp {
  private samples: SampleInfo[] = [];
  private models: ModelInfo[] = [];
  private controller!: PanelController;
  private root: HTMLElement;
  private banner!: HTMLElement;
  private canvas!: HTMLCanvasElement;
  private barsBox!: HTMLElement;
  private blockList!: HTMLElement;
  private probsBox!: HTMLElement;
  private gridBox!: HTMLElement;
  private boardBox!: HTMLElement;
  private dragFrom: number | null = null;

  constructor(root: HTMLElement) {
    this.root = root;
  }

  async start(): Promise<void> {
    this.buildSkeleton();
    try {
      [this.samples, this.models] = await Promise.all([
        getSamples(fetch.bind(window)),
        getModels(fetch.bind(window)),
      ]);
    } catch (err) {
      this.showError(err instanceof Error ? err.message : String(err));
      return;
    }
    if (!this.samples.length || !this.models.length) {
      this.showError("service returned no samples or models");
      return;
    }
    this.controller = new PanelController(
      fetch.bind(window),
      {
        onResponse: (resp) => this.onResponse(resp),
        onError: (msg) => this.showError(msg),
        onPending: (p) => this.root.classList.toggle("pending", p),
      },
      this.samples[0].id,
      this.models.map((m) => m.id)
    );
    this.renderSamplePicker();
    this.renderBlocks();
    this.controller.refresh();
    void this.refreshLeaderboard();
  }

  private buildSkeleton(): void {
    this.root.textContent = "";
    this.banner = el("div", "error-banner hidden");
    this.root.appendChild(this.banner);

    const layout = el("div", "layout");
    const left = el("div", "column controls");
    const right = el("div", "column output");
    layout.appendChild(left);
    layout.appendChild(right);
    this.root.appendChild(layout);

    left.appendChild(el("h2", "", "Samples"));
    left.appendChild(el("div", "sample-picker"));
    left.appendChild(el("h2", "", "Attack blocks"));
    left.appendChild(el("p", "hint", "Drag to reorder; sliders at Normal disable a block."));
    this.blockList = el("ul", "block-list");
    left.appendChild(this.blockList);

    right.appendChild(el("h2", "", "Perturbed image"));
    this.canvas = el("canvas", "preview");
    right.appendChild(this.canvas);
    right.appendChild(el("h2", "", "Predictions"));
    this.barsBox = el("div", "bars");
    right.appendChild(this.barsBox);
    const details = el("details");
    details.appendChild(el("summary", "", "Class probabilities"));
    this.probsBox = el("div", "probs");
    details.appendChild(this.probsBox);
    right.appendChild(details);

    const gridSection = el("div", "grid-section");
    gridSection.appendChild(el("h2", "", "Order effects"));
    const gridButton = el("button", "", "Explore orders for enabled kinds");
    gridButton.addEventListener("click", () => void this.loadGrid());
    gridSection.appendChild(gridButton);
    this.gridBox = el("div", "order-grid");
    gridSection.appendChild(this.gridBox);
    this.root.appendChild(gridSection);

    const boardSection = el("div", "board-section");
    boardSection.appendChild(el("h2", "", "Leaderboard"));
    this.boardBox = el("div", "leaderboard");
    boardSection.appendChild(this.boardBox);
    this.root.appendChild(boardSection);
  }

  private showError(message: string): void {
    this.banner.textContent = message;
    this.banner.classList.remove("hidden");
  }

  private clearError(): void {
    this.banner.classList.add("hidden");
  }

  private onResponse(resp: PerturbResponse): void {
    this.clearError();
    drawImage(this.canvas, resp.image_b64, resp.width, resp.height);
    renderBars(this.barsBox, resp.predictions);
    this.probsBox.textContent = "";
    for (const p of resp.predictions) {
      const line = el("div", "prob-line");
      line.textContent = `${p.model_id}: [${p.probs.map((v) => v.toFixed(3)).join(", ")}]`;
      this.probsBox.appendChild(line);
    }
  }

  private renderSamplePicker(): void {
    const picker = this.root.querySelector(".sample-picker") as HTMLElement;
    picker.textContent = "";
    for (const s of this.samples) {
      const btn = el("button", "sample-thumb");
      btn.dataset.sampleId = s.id;
      btn.title = s.class_name;
      const thumb = el("canvas");
      drawImage(thumb as HTMLCanvasElement, s.image_b64, s.width, s.height);
      btn.appendChild(thumb);
      btn.appendChild(el("span", "", s.class_name));
      btn.addEventListener("click", () => {
        this.controller.selectSample(s.id);
        this.controller.refresh();
      });
      picker.appendChild(btn);
    }
  }

  private renderBlocks(): void {
    const state = this.controller.state;
    this.blockList.textContent = "";
    state.blocks.forEach((kind, index) => {
      const item = el("li", "block");
      item.dataset.kind = kind;
      item.draggable = true;
      if (state.levels[kind] === 0) item.classList.add("disabled");

      item.addEventListener("dragstart", () => {
        this.dragFrom = index;
      });
      item.addEventListener("dragover", (ev) => ev.preventDefault());
      item.addEventListener("drop", (ev) => {
        ev.preventDefault();
        if (this.dragFrom === null) return;
        this.controller.reorder(this.dragFrom, index);
        this.dragFrom = null;
        this.renderBlocks();
      });

      const title = el("span", "block-title", kind);
      const value = el("span", "block-level", levelLabel(state.levels[kind]));

      const slider = el("input") as HTMLInputElement;
      slider.type = "range";
      slider.min = "0";
      slider.max = String(LEVEL_MAX);
      slider.step = "1";
      slider.value = String(state.levels[kind]);
      slider.addEventListener("input", () => {
        const level = Number(slider.value);
        this.controller.setLevel(kind, level);
        value.textContent = levelLabel(level);
        item.classList.toggle("disabled", level === 0);
      });

      item.appendChild(title);
      item.appendChild(slider);
      item.appendChild(value);

      if (SIGNED_KINDS.has(kind)) {
        const flip = el("button", "sign-flip", "±");
        flip.title = "flip direction";
        flip.addEventListener("click", () => {
          this.controller.setSign(kind, -this.controller.state.signs[kind]);
          flip.classList.toggle("negative", this.controller.state.signs[kind] < 0);
        });
        item.appendChild(flip);
      }
      this.blockList.appendChild(item);
    });
  }

  private enabledKinds(): KindName[] {
    const state = this.controller.state;
    const active = state.blocks.filter((k) => state.levels[k] > 0);
    return active.length ? active : [...KINDS].slice(0, 2);
  }

  private async loadGrid(): Promise<void> {
    let rows: GridRow[];
    try {
      rows = await getOrderGrid(
        fetch.bind(window),
        this.controller.state.sampleId,
        this.controller.state.modelIds[0],
        this.enabledKinds()
      );
    } catch (err) {
      this.showError(err instanceof Error ? err.message : String(err));
      return;
    }
    this.gridBox.textContent = "";
    for (const row of rows) {
      const rowBox = el("div", "grid-row");
      rowBox.appendChild(el("span", "grid-order", row.order.join(" → ")));
      row.cells.forEach((cell, cellIndex) => {
        const cellBox = el("span", "grid-cell");
        cellBox.classList.toggle("correct", cell.correct);
        const c = el("canvas");
        drawImage(c as HTMLCanvasElement, cell.image_b64, cell.width, cell.height);
        cellBox.title = `${cell.class_name} ${(cell.confidence * 100).toFixed(1)}%`;
        cellBox.appendChild(c);
        cellBox.addEventListener("mouseenter", () => this.highlightBlocks(highlightForCell(row.order, cellIndex)));
        cellBox.addEventListener("mouseleave", () => this.highlightBlocks([]));
        rowBox.appendChild(cellBox);
      });
      this.gridBox.appendChild(rowBox);
    }
  }

  private highlightBlocks(kinds: string[]): void {
    const active = new Set(kinds);
    for (const item of this.blockList.querySelectorAll<HTMLElement>(".block")) {
      item.classList.toggle("highlight", active.has(item.dataset.kind ?? ""));
    }
  }

  private async refreshLeaderboard(): Promise<void> {
    let entries: BoardEntry[];
    try {
      entries = await getLeaderboard(fetch.bind(window));
    } catch (err) {
      this.showError(err instanceof Error ? err.message : String(err));
      return;
    }
    this.boardBox.textContent = "";
    if (!entries.length) {
      this.boardBox.appendChild(el("p", "placeholder", "no entries"));
      return;
    }
    const table = el("table");
    const head = el("tr");
    for (const col of ["rank", "name", "architecture", "clean", "linf", "semantic", "full"]) {
      head.appendChild(el("th", "", col));
    }
    table.appendChild(head);
    for (const e of entries) {
      const tr = el("tr");
      tr.appendChild(el("td", "", String(e.rank)));
      tr.appendChild(el("td", "", e.model_name));
      tr.appendChild(el("td", "", e.architecture));
      for (const v of [e.clean_accuracy, e.linf_accuracy, e.semantic_accuracy, e.full_accuracy]) {
        tr.appendChild(el("td", "", formatAccuracy(v)));
      }
      table.appendChild(tr);
    }
    this.boardBox.appendChild(table);
  }
}

const rootNode = document.getElementById("app");
if (rootNode) {
  void new PanelApp(rootNode).start();
}
