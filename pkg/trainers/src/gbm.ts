/** Small gradient-boosted trees for binary classification: logistic loss,
 * Newton leaf values, histogram splits on quantile thresholds. Enough of the
 * usual knobs (depth, shrinkage, rounds, row subsampling, minimum child
 * weight) to make the declared search space meaningful. */
import { Rng } from "./rng.js";

export interface GbmParams {
  maxDepth: number;
  learningRate: number;
  nEstimators: number;
  subsample: number;
  minChildWeight: number;
  seed: number;
}

interface TreeNode {
  feature?: number;
  threshold?: number;
  left?: TreeNode;
  right?: TreeNode;
  value?: number;
}

const THRESHOLDS_PER_FEATURE = 24;

function sigmoid(z: number): number {
  return 1 / (1 + Math.exp(-z));
}

export function logLoss(p: number[], y: number[]): number {
  let total = 0;
  for (let i = 0; i < y.length; i++) {
    const pi = Math.min(Math.max(p[i], 1e-12), 1 - 1e-12);
    total += -(y[i] * Math.log(pi) + (1 - y[i]) * Math.log(1 - pi));
  }
  return total / y.length;
}

export function f1Score(p: number[], y: number[]): number {
  let tp = 0, fp = 0, fn = 0;
  for (let i = 0; i < y.length; i++) {
    const pred = p[i] >= 0.5 ? 1 : 0;
    if (pred === 1 && y[i] === 1) tp++;
    else if (pred === 1 && y[i] === 0) fp++;
    else if (pred === 0 && y[i] === 1) fn++;
  }
  if (tp === 0) return 0;
  const precision = tp / (tp + fp);
  const recall = tp / (tp + fn);
  return (2 * precision * recall) / (precision + recall);
}

function quantileThresholds(values: number[]): number[] {
  const sorted = [...values].sort((a, b) => a - b);
  const thresholds: number[] = [];
  for (let q = 1; q < THRESHOLDS_PER_FEATURE; q++) {
    const idx = Math.floor((q / THRESHOLDS_PER_FEATURE) * (sorted.length - 1));
    const t = sorted[idx];
    if (thresholds.length === 0 || t > thresholds[thresholds.length - 1]) {
      thresholds.push(t);
    }
  }
  return thresholds;
}

function buildTree(
  X: number[][],
  grad: number[],
  hess: number[],
  rows: number[],
  depth: number,
  params: GbmParams,
): TreeNode {
  let sumGrad = 0, sumHess = 0;
  for (const r of rows) {
    sumGrad += grad[r];
    sumHess += hess[r];
  }
  const leaf = (): TreeNode => ({ value: -sumGrad / (sumHess + 1e-9) });
  if (depth >= params.maxDepth || sumHess < 2 * params.minChildWeight || rows.length < 4) {
    return leaf();
  }

  const parentScore = (sumGrad * sumGrad) / (sumHess + 1e-9);
  let best = { gain: 1e-9, feature: -1, threshold: 0 };
  const nFeatures = X[0].length;
  for (let f = 0; f < nFeatures; f++) {
    for (const t of quantileThresholds(rows.map((r) => X[r][f]))) {
      let gl = 0, hl = 0;
      for (const r of rows) {
        if (X[r][f] <= t) {
          gl += grad[r];
          hl += hess[r];
        }
      }
      const gr = sumGrad - gl, hr = sumHess - hl;
      if (hl < params.minChildWeight || hr < params.minChildWeight) continue;
      const gain = (gl * gl) / (hl + 1e-9) + (gr * gr) / (hr + 1e-9) - parentScore;
      if (gain > best.gain) best = { gain, feature: f, threshold: t };
    }
  }
  if (best.feature < 0) return leaf();

  const leftRows = rows.filter((r) => X[r][best.feature] <= best.threshold);
  const rightRows = rows.filter((r) => X[r][best.feature] > best.threshold);
  return {
    feature: best.feature,
    threshold: best.threshold,
    left: buildTree(X, grad, hess, leftRows, depth + 1, params),
    right: buildTree(X, grad, hess, rightRows, depth + 1, params),
  };
}

function predictTree(node: TreeNode, row: number[]): number {
  if (node.value !== undefined) return node.value;
  return row[node.feature!] <= node.threshold!
    ? predictTree(node.left!, row)
    : predictTree(node.right!, row);
}

export interface BoostRound {
  trainLoss: number;
  valLoss: number;
  trainF1: number;
  valF1: number;
}

export function trainGbm(
  XTrain: number[][],
  yTrain: number[],
  XVal: number[][],
  yVal: number[],
  params: GbmParams,
): BoostRound[] {
  const rng = new Rng(params.seed);
  const n = yTrain.length;
  const base = Math.log(
    (yTrain.reduce((a, b) => a + b, 0) + 0.5) /
    (n - yTrain.reduce((a, b) => a + b, 0) + 0.5),
  );
  const fTrain = new Array(n).fill(base);
  const fVal = new Array(yVal.length).fill(base);
  const rounds: BoostRound[] = [];

  for (let round = 0; round < params.nEstimators; round++) {
    const grad = new Array(n);
    const hess = new Array(n);
    for (let i = 0; i < n; i++) {
      const p = sigmoid(fTrain[i]);
      grad[i] = p - yTrain[i];
      hess[i] = Math.max(p * (1 - p), 1e-6);
    }
    const rows: number[] = [];
    for (let i = 0; i < n; i++) {
      if (params.subsample >= 1 || rng.next() < params.subsample) rows.push(i);
    }
    const tree = buildTree(XTrain, grad, hess, rows.length ? rows : [0], 0, params);
    for (let i = 0; i < n; i++) {
      fTrain[i] += params.learningRate * predictTree(tree, XTrain[i]);
    }
    for (let i = 0; i < yVal.length; i++) {
      fVal[i] += params.learningRate * predictTree(tree, XVal[i]);
    }
    const pTrain = fTrain.map(sigmoid);
    const pVal = fVal.map(sigmoid);
    rounds.push({
      trainLoss: logLoss(pTrain, yTrain),
      valLoss: logLoss(pVal, yVal),
      trainF1: f1Score(pTrain, yTrain),
      valF1: f1Score(pVal, yVal),
    });
  }
  return rounds;
}
