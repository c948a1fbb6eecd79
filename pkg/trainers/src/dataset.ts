/** Bundled synthetic datasets, generated deterministically from fixed seeds
 * so every invocation of a trainer sees identical data. */
import { Rng } from "./rng.js";

export interface TabularData {
  X: number[][];
  y: number[]; // 0/1 labels
}

export interface Split<T> {
  train: T;
  val: T;
}

export const TABULAR_SEED = 20240117;
export const CURVE_SEED = 20240214;

/** Binary-classification table: 6 numeric features, nonlinear decision rule,
 * 8% label noise. */
export function tabularDataset(n = 400, seed = TABULAR_SEED): TabularData {
  const rng = new Rng(seed);
  const X: number[][] = [];
  const y: number[] = [];
  for (let i = 0; i < n; i++) {
    const row = Array.from({ length: 6 }, () => rng.gauss());
    const logit =
      1.5 * row[0] -
      1.2 * row[1] +
      0.9 * row[2] * row[3] +
      Math.sin(2 * row[4]) -
      0.3 * row[5];
    let label = logit > 0 ? 1 : 0;
    if (rng.next() < 0.08) label = 1 - label;
    X.push(row);
    y.push(label);
  }
  return { X, y };
}

export interface CurveData {
  x: number[];
  y: number[];
}

/** Noisy 1-d regression target: y = 1.8 sin(1.3 x) + 0.4 x + noise. */
export function curveDataset(n = 120, seed = CURVE_SEED): CurveData {
  const rng = new Rng(seed);
  const x: number[] = [];
  const y: number[] = [];
  for (let i = 0; i < n; i++) {
    const xi = rng.uniform(-3, 3);
    x.push(xi);
    y.push(1.8 * Math.sin(1.3 * xi) + 0.4 * xi + 0.1 * rng.gauss());
  }
  return { x, y };
}

/** Deterministic 75/25 split (seeded shuffle, then prefix/suffix). */
export function splitIndices(n: number, seed: number): Split<number[]> {
  const idx = new Rng(seed).permutation(n);
  const cut = Math.floor(n * 0.75);
  return { train: idx.slice(0, cut), val: idx.slice(cut) };
}
