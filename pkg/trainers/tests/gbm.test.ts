import { describe, expect, it } from "vitest";

import { TABULAR_SEED, splitIndices, tabularDataset } from "../src/dataset.js";
import { f1Score, logLoss, trainGbm } from "../src/gbm.js";
import { Rng } from "../src/rng.js";

function splits() {
  const data = tabularDataset();
  const split = splitIndices(data.y.length, TABULAR_SEED + 1);
  return {
    XTrain: split.train.map((i) => data.X[i]),
    yTrain: split.train.map((i) => data.y[i]),
    XVal: split.val.map((i) => data.X[i]),
    yVal: split.val.map((i) => data.y[i]),
  };
}

describe("rng", () => {
  it("is deterministic per seed", () => {
    const a = new Rng(42);
    const b = new Rng(42);
    expect([a.next(), a.next()]).toEqual([b.next(), b.next()]);
  });

  it("covers the unit interval", () => {
    const rng = new Rng(1);
    const draws = Array.from({ length: 2000 }, () => rng.next());
    expect(Math.min(...draws)).toBeLessThan(0.05);
    expect(Math.max(...draws)).toBeGreaterThan(0.95);
    const mean = draws.reduce((x, y) => x + y, 0) / draws.length;
    expect(mean).toBeGreaterThan(0.45);
    expect(mean).toBeLessThan(0.55);
  });
});

describe("metrics", () => {
  it("perfect predictions score f1 of one", () => {
    expect(f1Score([0.9, 0.1, 0.8], [1, 0, 1])).toBe(1);
  });

  it("log loss penalizes confident mistakes", () => {
    expect(logLoss([0.99], [0])).toBeGreaterThan(logLoss([0.5], [0]));
  });
});

describe("gbm", () => {
  const params = {
    maxDepth: 4,
    learningRate: 0.2,
    nEstimators: 60,
    subsample: 1,
    minChildWeight: 1,
    seed: 7,
  };

  it("reduces training loss over rounds", () => {
    const { XTrain, yTrain, XVal, yVal } = splits();
    const rounds = trainGbm(XTrain, yTrain, XVal, yVal, params);
    expect(rounds[rounds.length - 1].trainLoss).toBeLessThan(rounds[0].trainLoss);
  });

  it("beats a constant classifier on held-out data", () => {
    const { XTrain, yTrain, XVal, yVal } = splits();
    const rounds = trainGbm(XTrain, yTrain, XVal, yVal, params);
    const last = rounds[rounds.length - 1];
    expect(last.valF1).toBeGreaterThan(0.7);
  });

  it("is deterministic", () => {
    const { XTrain, yTrain, XVal, yVal } = splits();
    const a = trainGbm(XTrain, yTrain, XVal, yVal, params);
    const b = trainGbm(XTrain, yTrain, XVal, yVal, params);
    expect(a).toEqual(b);
  });

  it("respects the round count", () => {
    const { XTrain, yTrain, XVal, yVal } = splits();
    const rounds = trainGbm(XTrain, yTrain, XVal, yVal, { ...params, nEstimators: 15 });
    expect(rounds).toHaveLength(15);
  });
});
