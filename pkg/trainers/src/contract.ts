/** The subprocess trial protocol: read a config JSON, validate it against
 * the trainer's declared search space, and write a training-log JSON of the
 * shape the harness expects:
 *
 *   {"epochs": [int...], "metrics": {name: [number...]}, "final_metric": n,
 *    "total_time_s": n}
 */
import * as fs from "node:fs";

export type Config = Record<string, number | string>;

export interface TrainingLog {
  epochs: number[];
  metrics: Record<string, number[]>;
  final_metric: number;
  total_time_s: number;
}

export interface HpSpec {
  name: string;
  kind: "float" | "integer" | "categorical" | "ordinal";
  log_scale?: boolean;
  range?: [number, number];
  choices?: (number | string)[];
  description?: string;
}

export function readConfig(path: string): Config {
  const raw = JSON.parse(fs.readFileSync(path, "utf-8"));
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new Error("config file must hold a JSON object");
  }
  return raw as Config;
}

/** Every declared hyperparameter must be present and in range; unknown
 * names are rejected so drifting configs fail loudly. */
export function validateConfig(config: Config, space: HpSpec[]): void {
  const declared = new Set(space.map((s) => s.name));
  for (const key of Object.keys(config)) {
    if (!declared.has(key)) throw new Error(`unknown hyperparameter ${key}`);
  }
  for (const spec of space) {
    if (!(spec.name in config)) throw new Error(`missing hyperparameter ${spec.name}`);
    const value = config[spec.name];
    if (spec.kind === "categorical" || spec.kind === "ordinal") {
      if (!spec.choices!.some((c) => c === value)) {
        throw new Error(`${spec.name}=${value} is not one of [${spec.choices!.join(", ")}]`);
      }
      continue;
    }
    if (typeof value !== "number" || !Number.isFinite(value)) {
      throw new Error(`${spec.name}=${value} must be a number`);
    }
    const [lo, hi] = spec.range!;
    if (value < lo || value > hi) {
      throw new Error(`${spec.name}=${value} outside [${lo}, ${hi}]`);
    }
    if (spec.kind === "integer" && !Number.isInteger(value)) {
      throw new Error(`${spec.name}=${value} must be a whole number`);
    }
  }
}

export function writeTrainingLog(path: string, log: TrainingLog): void {
  for (const [name, series] of Object.entries(log.metrics)) {
    if (series.length !== log.epochs.length) {
      throw new Error(`series ${name} length ${series.length} != epochs ${log.epochs.length}`);
    }
  }
  const tmp = `${path}.tmp`;
  fs.writeFileSync(tmp, JSON.stringify(log, null, 1));
  fs.renameSync(tmp, path);
}

/** Shared entry-point shape: argv is (config-path, log-path). */
export function runTrainerCli(
  argv: string[],
  train: (config: Config) => TrainingLog,
  space: HpSpec[],
): number {
  if (argv.length < 2) {
    console.error("usage: trainer <config.json> <training_log.json>");
    return 2;
  }
  const [configPath, logPath] = argv;
  try {
    const config = readConfig(configPath);
    validateConfig(config, space);
    const started = Date.now();
    const log = train(config);
    log.total_time_s = Math.round((Date.now() - started)) / 1000;
    writeTrainingLog(logPath, log);
    console.log(`final_metric=${log.final_metric}`);
    return 0;
  } catch (err) {
    console.error(`trainer failed: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}
