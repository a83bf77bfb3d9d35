/**
 * Minimal logistic-regression trainer wired to an autolrs controller.
 *
 * Two gaussian blobs in the plane, one linear model with a bias feature,
 * plain SGD. The controller owns every learning-rate decision; this file
 * only steps the model, measures losses, and snapshots its state when told.
 *
 * Run a controller first, then this file:
 *
 *   python3 -m autolrs.cli serve --budget-steps 2000 &
 *   npm run build:examples
 *   node dist-examples/examples/logistic_regression.js 127.0.0.1 8765
 */

import { SessionOutcome, TrainerBinding, attach } from "../src/index.js";

const TRAIN_SIZE = 256;
const VAL_SIZE = 64;
const BATCH_SIZE = 16;
const FEATURES = 2;

/** Deterministic 32-bit linear congruential generator (Numerical Recipes). */
class Lcg {
  private state: number;

  constructor(seed: number) {
    this.state = seed >>> 0;
  }

  next(): number {
    this.state = (Math.imul(this.state, 1664525) + 1013904223) >>> 0;
    return this.state / 4294967296;
  }

  /** Standard normal via Box-Muller; one draw per call, the pair's second half discarded. */
  gaussian(): number {
    let u = this.next();
    // avoid log(0)
    while (u === 0) u = this.next();
    const v = this.next();
    return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v);
  }
}

interface Dataset {
  xs: Float64Array[]; // each row [1, x1, x2] with the bias feature first
  ys: Uint8Array;
}

function makeBlobs(count: number, seed: number): Dataset {
  const rng = new Lcg(seed);
  const xs: Float64Array[] = [];
  const ys = new Uint8Array(count);
  for (let i = 0; i < count; i += 1) {
    const label = i % 2;
    const center = label === 0 ? -1.0 : 1.0;
    const row = new Float64Array(FEATURES + 1);
    row[0] = 1.0;
    for (let f = 1; f <= FEATURES; f += 1) {
      row[f] = center + rng.gaussian();
    }
    xs.push(row);
    ys[i] = label;
  }
  return { xs, ys };
}

/** log(1 + exp(z)) without overflow on large z. */
function softplus(z: number): number {
  return z > 0 ? z + Math.log1p(Math.exp(-z)) : Math.log1p(Math.exp(z));
}

function sigmoid(z: number): number {
  return z > 0 ? 1 / (1 + Math.exp(-z)) : Math.exp(z) / (1 + Math.exp(z));
}

interface Snapshot {
  weights: Float64Array;
  cursor: number;
  step: number;
}

/**
 * The model plus the data-order cursor. The cursor is part of checkpoint
 * state on purpose: candidate evaluations restored from the same checkpoint
 * must consume the same mini-batches in the same order, or their losses are
 * not comparable.
 */
export class LogisticModel {
  weights = new Float64Array(FEATURES + 1);
  cursor = 0;
  step = 0;
  private saved: Snapshot | null = null;

  constructor(
    private readonly train: Dataset,
    private readonly val: Dataset,
  ) {}

  private logit(row: Float64Array): number {
    let z = 0;
    for (let f = 0; f < row.length; f += 1) z += this.weights[f]! * row[f]!;
    return z;
  }

  /** Mean loss of the next mini-batch, measured before the update it drives. */
  sgdStep(lr: number): number {
    const grad = new Float64Array(FEATURES + 1);
    let loss = 0;
    for (let b = 0; b < BATCH_SIZE; b += 1) {
      const i = (this.cursor + b) % TRAIN_SIZE;
      const row = this.train.xs[i]!;
      const y = this.train.ys[i]!;
      const z = this.logit(row);
      loss += softplus(z) - y * z;
      const delta = sigmoid(z) - y;
      for (let f = 0; f < row.length; f += 1) grad[f] = grad[f]! + delta * row[f]!;
    }
    loss /= BATCH_SIZE;
    for (let f = 0; f < grad.length; f += 1) {
      this.weights[f] = this.weights[f]! - (lr * grad[f]!) / BATCH_SIZE;
    }
    this.cursor = (this.cursor + BATCH_SIZE) % TRAIN_SIZE;
    this.step += 1;
    return loss;
  }

  validationLoss(): number {
    let loss = 0;
    for (let i = 0; i < VAL_SIZE; i += 1) {
      const z = this.logit(this.val.xs[i]!);
      loss += softplus(z) - this.val.ys[i]! * z;
    }
    return loss / VAL_SIZE;
  }

  save(): void {
    this.saved = {
      weights: Float64Array.from(this.weights),
      cursor: this.cursor,
      step: this.step,
    };
  }

  restore(): void {
    if (this.saved === null) {
      throw new Error("restore requested before any checkpoint was saved");
    }
    this.weights = Float64Array.from(this.saved.weights);
    this.cursor = this.saved.cursor;
    this.step = this.saved.step;
  }
}

export function buildBinding(seed = 17): TrainerBinding & { model: LogisticModel } {
  const model = new LogisticModel(makeBlobs(TRAIN_SIZE, seed), makeBlobs(VAL_SIZE, seed + 1));
  let lr: number | null = null;
  return {
    model,
    setLr(value: number) {
      lr = value;
    },
    saveCheckpoint() {
      model.save();
    },
    restoreCheckpoint() {
      model.restore();
    },
    *trainSteps(steps: number) {
      if (lr === null) throw new Error("train requested before set_lr");
      for (let s = 1; s <= steps; s += 1) {
        yield [s, model.sgdStep(lr)] as const;
      }
    },
    evalValidation() {
      return model.validationLoss();
    },
  };
}

export async function main(argv: string[]): Promise<SessionOutcome> {
  const host = argv[0] ?? "127.0.0.1";
  const port = Number(argv[1] ?? process.env["AUTOLRS_PORT"] ?? 8765);
  const binding = buildBinding();
  console.log(`connecting to ${host}:${port}`);
  const before = binding.model.validationLoss();
  const outcome = await attach(binding, { host, port });
  const after = binding.model.validationLoss();
  console.log(`session over: ${outcome.shutdownReason} after ${outcome.commandsHandled} commands`);
  console.log(`validation loss ${before.toFixed(6)} -> ${after.toFixed(6)}`);
  return outcome;
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (invokedDirectly) {
  main(process.argv.slice(2)).catch((err) => {
    console.error(err);
    process.exitCode = 1;
  });
}
