#!/usr/bin/env node
/** Gradient-boosted-trees trainer on the bundled tabular dataset.
 *
 * Usage: node trainer_tabular.js <config.json> <training_log.json>
 *
 * Reads the tabular search-space hyperparameters from the config file,
 * trains, and writes per-round train/val loss and F1 series; the final
 * metric is the last validation F1.
 */
import { Config, HpSpec, TrainingLog, runTrainerCli } from "./contract.js";
import { TABULAR_SEED, splitIndices, tabularDataset } from "./dataset.js";
import { trainGbm } from "./gbm.js";

export const TABULAR_SPACE: HpSpec[] = [
  { name: "max_depth", kind: "integer", range: [3, 11], description: "maximum tree depth" },
  { name: "learning_rate", kind: "float", log_scale: true, range: [1e-3, 1],
    description: "shrinkage applied to each boosting round" },
  { name: "n_estimators", kind: "integer", range: [100, 500], description: "boosting rounds" },
  { name: "min_child_weight", kind: "integer", range: [1, 10],
    description: "minimum hessian weight per leaf" },
  { name: "subsample", kind: "float", range: [0.5, 1], description: "row sampling per round" },
];

export function trainTabular(config: Config): TrainingLog {
  const data = tabularDataset();
  const split = splitIndices(data.y.length, TABULAR_SEED + 1);
  const XTrain = split.train.map((i) => data.X[i]);
  const yTrain = split.train.map((i) => data.y[i]);
  const XVal = split.val.map((i) => data.X[i]);
  const yVal = split.val.map((i) => data.y[i]);

  const rounds = trainGbm(XTrain, yTrain, XVal, yVal, {
    maxDepth: config.max_depth as number,
    learningRate: config.learning_rate as number,
    nEstimators: config.n_estimators as number,
    subsample: config.subsample as number,
    minChildWeight: config.min_child_weight as number,
    seed: TABULAR_SEED + 2,
  });

  const round6 = (v: number) => Math.round(v * 1e6) / 1e6;
  return {
    epochs: rounds.map((_, i) => i),
    metrics: {
      train_loss: rounds.map((r) => round6(r.trainLoss)),
      val_loss: rounds.map((r) => round6(r.valLoss)),
      train_f1: rounds.map((r) => round6(r.trainF1)),
      val_f1: rounds.map((r) => round6(r.valF1)),
    },
    final_metric: round6(rounds[rounds.length - 1].valF1),
    total_time_s: 0,
  };
}

const invokedDirectly = process.argv[1]?.endsWith("trainer_tabular.js");
if (invokedDirectly) {
  process.exit(runTrainerCli(process.argv.slice(2), trainTabular, TABULAR_SPACE));
}
