import * as net from "node:net";
import { spawn, ChildProcess } from "node:child_process";

import { TrainerBinding } from "../src/client.js";
import { Message, decode, encode } from "../src/messages.js";

/**
 * One-dimensional quadratic bowl, arithmetic mirrored operation-for-operation
 * from the reference simulator so that both sides produce bit-identical
 * float64 loss streams: d = theta - 0, scaled = curvature * d,
 * loss = 0.5 * (scaled * d), update theta = theta - lr * scaled.
 */
export class QuadraticSim {
  theta = 1.0;
  step = 0;
  diverged = false;
  private saved: { theta: number; step: number; diverged: boolean } | null = null;

  constructor(readonly curvature: number) {}

  sgdStep(lr: number): number {
    if (this.diverged) return Infinity;
    const scaled = this.curvature * this.theta;
    const loss = 0.5 * (scaled * this.theta);
    this.theta = this.theta - lr * scaled;
    this.step += 1;
    if (!Number.isFinite(this.theta) || !Number.isFinite(loss)) {
      this.diverged = true;
      return Infinity;
    }
    return loss;
  }

  validationLoss(): number {
    if (this.diverged) return Infinity;
    const scaled = this.curvature * this.theta;
    const loss = 0.5 * (scaled * this.theta);
    return Number.isFinite(loss) ? loss : Infinity;
  }

  save(): void {
    this.saved = { theta: this.theta, step: this.step, diverged: this.diverged };
  }

  restore(): void {
    if (this.saved === null) throw new Error("restore requested before any checkpoint was saved");
    this.theta = this.saved.theta;
    this.step = this.saved.step;
    this.diverged = this.saved.diverged;
  }
}

export function quadraticBinding(
  curvature: number,
  overrides?: Record<string, unknown>,
): TrainerBinding & { sim: QuadraticSim; calls: string[] } {
  const sim = new QuadraticSim(curvature);
  const calls: string[] = [];
  let lr: number | null = null;
  return {
    sim,
    calls,
    configOverrides: overrides,
    setLr(value: number) {
      calls.push(`set_lr ${value}`);
      lr = value;
    },
    saveCheckpoint() {
      calls.push("save");
      sim.save();
    },
    restoreCheckpoint() {
      calls.push("restore");
      sim.restore();
    },
    *trainSteps(steps: number) {
      calls.push(`train ${steps}`);
      if (lr === null) throw new Error("train requested before set_lr");
      for (let s = 1; s <= steps; s += 1) {
        yield [s, sim.sgdStep(lr)] as const;
      }
    },
    evalValidation() {
      return sim.validationLoss();
    },
  };
}

export interface TranscriptEntry {
  dir: "s2c" | "c2s";
  line: string;
}

/**
 * Replays the server half of a recorded transcript: sends s2c lines, and for
 * each expected c2s line waits for the client's next line and hands both to
 * `onClientLine` for comparison. Mismatched counts surface as test timeouts,
 * so the comparator should assert eagerly.
 */
export function replayServer(
  transcript: TranscriptEntry[],
  onClientLine: (got: Message, want: Message, index: number) => void,
): Promise<{ server: net.Server; port: number; done: Promise<void> }> {
  return new Promise((resolveStart) => {
    const server = net.createServer((conn) => {
      let buffer = Buffer.alloc(0);
      let cursor = 0;
      let expecting: TranscriptEntry | null = null;

      const advance = () => {
        while (cursor < transcript.length) {
          const entry = transcript[cursor]!;
          if (entry.dir === "s2c") {
            conn.write(entry.line + "\n");
            cursor += 1;
          } else {
            expecting = entry;
            return;
          }
        }
        expecting = null;
      };

      const feed = () => {
        for (;;) {
          const nl = buffer.indexOf(0x0a);
          if (nl < 0) return;
          const line = buffer.subarray(0, nl);
          buffer = buffer.subarray(nl + 1);
          if (expecting === null) continue; // trailing client line after transcript end
          const want = decode(expecting.line);
          const got = decode(line);
          onClientLine(got, want, cursor);
          cursor += 1;
          advance();
          if (cursor >= transcript.length && expecting === null) {
            finished();
          }
        }
      };

      conn.on("data", (chunk) => {
        buffer = Buffer.concat([buffer, chunk]);
        feed();
      });
      advance();
      if (expecting === null && cursor >= transcript.length) finished();
    });

    let finished: () => void = () => {};
    const done = new Promise<void>((resolve) => {
      finished = resolve;
    });
    server.listen(0, "127.0.0.1", () => {
      const addr = server.address() as net.AddressInfo;
      resolveStart({ server, port: addr.port, done });
    });
  });
}

export interface SpawnedServer {
  child: ChildProcess;
  host: string;
  port: number;
  output(): string;
}

/** Start `python3 -m autolrs.cli serve --port 0 ...` and parse its address. */
export function spawnServe(flags: string[], cwd: string): Promise<SpawnedServer> {
  return new Promise((resolve, reject) => {
    const child = spawn("python3", ["-m", "autolrs.cli", "serve", "--port", "0", ...flags], {
      cwd,
      stdio: ["ignore", "pipe", "pipe"],
    });
    let out = "";
    let err = "";
    child.stderr!.on("data", (chunk) => {
      err += chunk.toString();
    });
    child.stdout!.on("data", (chunk) => {
      out += chunk.toString();
      const match = out.match(/listening on ([\d.]+):(\d+)/);
      if (match) {
        resolve({
          child,
          host: match[1]!,
          port: Number(match[2]!),
          output: () => out + err,
        });
      }
    });
    child.on("exit", (code) => reject(new Error(`serve exited early (${code}): ${out}${err}`)));
    setTimeout(() => reject(new Error(`serve did not report an address: ${out}${err}`)), 15000);
  });
}

export function sendRaw(message: Message): Buffer {
  return encode(message);
}
