#!/usr/bin/env node
/** Least-squares curve-fitting trainer on the bundled noisy sine data.
 *
 * Usage: node trainer_curvefit.js <config.json> <training_log.json>
 *
 * Fits y = a*sin(b*x) + c*x + d by full-batch gradient descent with
 * momentum; emits per-recorded-epoch train/val squared loss and reports the
 * final validation loss (lower is better).
 */
import { Config, HpSpec, TrainingLog, runTrainerCli } from "./contract.js";
import { CURVE_SEED, curveDataset, splitIndices } from "./dataset.js";

export const CURVEFIT_SPACE: HpSpec[] = [
  { name: "learning_rate", kind: "float", log_scale: true, range: [1e-4, 0.5],
    description: "gradient-descent step size" },
  { name: "epochs", kind: "integer", range: [50, 2000], description: "descent steps" },
  { name: "momentum", kind: "float", range: [0, 0.95], description: "velocity retention" },
];

function mse(params: number[], x: number[], y: number[]): number {
  const [a, b, c, d] = params;
  let total = 0;
  for (let i = 0; i < x.length; i++) {
    const err = a * Math.sin(b * x[i]) + c * x[i] + d - y[i];
    total += err * err;
  }
  return total / x.length;
}

export function trainCurvefit(config: Config): TrainingLog {
  const data = curveDataset();
  const split = splitIndices(data.x.length, CURVE_SEED + 1);
  const xTrain = split.train.map((i) => data.x[i]);
  const yTrain = split.train.map((i) => data.y[i]);
  const xVal = split.val.map((i) => data.x[i]);
  const yVal = split.val.map((i) => data.y[i]);

  const lr = config.learning_rate as number;
  const epochs = config.epochs as number;
  const momentum = config.momentum as number;

  let params = [0.5, 1.0, 0.0, 0.0]; // a, b, c, d
  let velocity = [0, 0, 0, 0];
  const record = Math.max(1, Math.floor(epochs / 100));
  const epochsOut: number[] = [];
  const trainLoss: number[] = [];
  const valLoss: number[] = [];
  const round6 = (v: number) => Math.round(v * 1e6) / 1e6;

  for (let epoch = 0; epoch < epochs; epoch++) {
    const grad = [0, 0, 0, 0];
    const [a, b, c, d] = params;
    for (let i = 0; i < xTrain.length; i++) {
      const s = Math.sin(b * xTrain[i]);
      const err = a * s + c * xTrain[i] + d - yTrain[i];
      grad[0] += (2 * err * s) / xTrain.length;
      grad[1] += (2 * err * a * Math.cos(b * xTrain[i]) * xTrain[i]) / xTrain.length;
      grad[2] += (2 * err * xTrain[i]) / xTrain.length;
      grad[3] += (2 * err) / xTrain.length;
    }
    velocity = velocity.map((v, j) => momentum * v - lr * grad[j]);
    params = params.map((p, j) => p + velocity[j]);

    if (!params.every(Number.isFinite)) {
      throw new Error(`parameters diverged at epoch ${epoch}`);
    }
    if (epoch % record === 0 || epoch === epochs - 1) {
      epochsOut.push(epoch);
      trainLoss.push(round6(mse(params, xTrain, yTrain)));
      valLoss.push(round6(mse(params, xVal, yVal)));
    }
  }

  return {
    epochs: epochsOut,
    metrics: { train_loss: trainLoss, val_loss: valLoss },
    final_metric: valLoss[valLoss.length - 1],
    total_time_s: 0,
  };
}

const invokedDirectly = process.argv[1]?.endsWith("trainer_curvefit.js");
if (invokedDirectly) {
  process.exit(runTrainerCli(process.argv.slice(2), trainCurvefit, CURVEFIT_SPACE));
}
