import { describe, expect, it } from "vitest";

import type { Prediction } from "../src/api.js";
import {
  barColorToken,
  barWidthPercent,
  decodeRgb8,
  formatAccuracy,
  highlightForCell,
  renderBars,
} from "../src/render.js";

function b64(bytes: number[]): string {
  return btoa(String.fromCharCode(...bytes));
}

describe("decodeRgb8", () => {
  it("expands RGB to opaque RGBA in row-major order", () => {
    const rgba = decodeRgb8(b64([10, 20, 30, 40, 50, 60]), 2, 1);
    expect(Array.from(rgba)).toEqual([10, 20, 30, 255, 40, 50, 60, 255]);
  });

  it("rejects payloads of the wrong size", () => {
    expect(() => decodeRgb8(b64([1, 2, 3]), 2, 2)).toThrow(/expected 12/);
  });
});

describe("bars", () => {
  it("uses the green token when correct, red otherwise", () => {
    expect(barColorToken(true)).toBe("correct-green");
    expect(barColorToken(false)).toBe("incorrect-red");
  });

  it("confidence 1.0 gives a full-width bar", () => {
    expect(barWidthPercent(1.0)).toBe("100.0%");
    expect(barWidthPercent(0.25)).toBe("25.0%");
    expect(barWidthPercent(1.7)).toBe("100.0%"); // clamped
  });
});

describe("highlightForCell", () => {
  const order = ["brightness", "contrast", "hue"];

  it("clean cell highlights nothing", () => {
    expect(highlightForCell(order, 0)).toEqual([]);
  });

  it("last cell highlights the whole row order", () => {
    expect(highlightForCell(order, 3)).toEqual(order);
  });

  it("intermediate cells highlight the applied prefix", () => {
    expect(highlightForCell(order, 2)).toEqual(["brightness", "contrast"]);
  });

  it("rejects out-of-range cells", () => {
    expect(() => highlightForCell(order, 4)).toThrow();
  });
});

describe("formatAccuracy", () => {
  it("renders two-decimal percent", () => {
    expect(formatAccuracy(0.9234)).toBe("92.34%");
    expect(formatAccuracy(1)).toBe("100.00%");
    expect(formatAccuracy(0)).toBe("0.00%");
  });
});

describe("renderBars", () => {
  function pred(overrides: Partial<Prediction>): Prediction {
    return {
      model_id: "m0",
      label: 0,
      class_name: "circle",
      confidence: 0.8,
      correct: true,
      probs: [0.8, 0.1, 0.05, 0.05],
      ...overrides,
    };
  }

  it("bar color matches the correct flag across 10 scripted states", () => {
    // Acceptance: green/red must track `correct` exactly.
    const states = Array.from({ length: 10 }, (_, i) =>
      pred({ model_id: `m${i}`, correct: i % 3 !== 0, confidence: (i + 1) / 10 })
    );
    const box = document.createElement("div");
    renderBars(box, states);
    const fills = box.querySelectorAll<HTMLElement>(".bar-fill");
    expect(fills).toHaveLength(10);
    states.forEach((p, i) => {
      const expected = p.correct ? "correct-green" : "incorrect-red";
      expect(fills[i].dataset.color).toBe(expected);
      expect(fills[i].classList.contains(expected)).toBe(true);
      expect(parseFloat(fills[i].style.width)).toBeCloseTo(p.confidence * 100, 5);
    });
  });

  it("one bar row per model", () => {
    const box = document.createElement("div");
    renderBars(box, [pred({ model_id: "a" }), pred({ model_id: "b", correct: false })]);
    const rows = box.querySelectorAll(".bar-row");
    expect(rows).toHaveLength(2);
    expect((rows[1] as HTMLElement).dataset.modelId).toBe("b");
  });
});
