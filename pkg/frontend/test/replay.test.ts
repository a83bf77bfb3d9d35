import { describe, expect, it } from "vitest";

import { attach } from "../src/client.js";
import { LossSource, Message, encode } from "../src/messages.js";
import { QuadraticSim, TranscriptEntry, quadraticBinding, replayServer } from "./helpers.js";

const CURVATURE = 0.05;

function entry(dir: "s2c" | "c2s", message: Message): TranscriptEntry {
  return { dir, line: encode(message).toString().trimEnd() };
}

/**
 * Predict the loss reports a train command produces, using a second sim
 * instance stepped with the same arithmetic. Reporting rules restated here
 * independently of the adapter: optional step-0 validation anchor, a report
 * every report_every steps (re-measured on the validation set when asked),
 * divergence clamped to the sentinel, command_done last.
 */
function expectedTrainLines(
  mirror: QuadraticSim,
  lr: number,
  steps: number,
  source: LossSource,
  reportEvery: number,
  commandId: number,
): TranscriptEntry[] {
  const out: TranscriptEntry[] = [];
  if (source === "validation") {
    out.push(entry("c2s", { type: "loss", step: 0, value: mirror.validationLoss(), source }));
  }
  for (let s = 1; s <= steps; s += 1) {
    const loss = mirror.sgdStep(lr);
    if (!Number.isFinite(loss)) {
      out.push(entry("c2s", { type: "loss", step: s, value: 1e30, source }));
      break;
    }
    if (s % reportEvery === 0) {
      const value = source === "train" ? loss : mirror.validationLoss();
      out.push(entry("c2s", { type: "loss", step: s, value, source }));
    }
  }
  out.push(entry("c2s", { type: "command_done", commandId }));
  return out;
}

function buildTranscript(): TranscriptEntry[] {
  const mirror = new QuadraticSim(CURVATURE);
  const t: TranscriptEntry[] = [];
  t.push(entry("c2s", { type: "hello", protocolVersion: "autolrs/1", configOverrides: {} }));
  t.push(entry("s2c", { type: "eval_config", valMinibatches: 2, valEvery: 5 }));
  t.push(entry("s2c", { type: "set_lr", lr: 0.5 }));
  t.push(entry("s2c", { type: "save_ckpt" }));
  mirror.save();
  t.push(entry("s2c", { type: "train", steps: 6, lossSource: "train", reportEvery: 2, commandId: 1 }));
  t.push(...expectedTrainLines(mirror, 0.5, 6, "train", 2, 1));
  t.push(entry("s2c", { type: "restore_ckpt" }));
  mirror.restore();
  t.push(entry("s2c", { type: "set_lr", lr: 1.25 }));
  t.push(entry("s2c", { type: "train", steps: 4, lossSource: "validation", reportEvery: 2, commandId: 2 }));
  t.push(...expectedTrainLines(mirror, 1.25, 4, "validation", 2, 2));
  t.push(entry("s2c", { type: "shutdown", reason: "replay complete" }));
  return t;
}

describe("attach against a scripted server", () => {
  it("answers every command with the expected lines, in order", async () => {
    const transcript = buildTranscript();
    const seen: Message[] = [];
    const { server, port, done } = await replayServer(transcript, (got, want) => {
      seen.push(got);
      expect(got).toStrictEqual(want);
    });
    try {
      const binding = quadraticBinding(CURVATURE);
      const outcome = await attach(binding, { host: "127.0.0.1", port });
      await done;
      expect(outcome.shutdownReason).toBe("replay complete");
      // every server command counts, shutdown included
      expect(outcome.commandsHandled).toBe(8);
      expect(binding.calls).toEqual([
        "set_lr 0.5",
        "save",
        "train 6",
        "restore",
        "set_lr 1.25",
        "train 4",
      ]);
      const clientLineCount = transcript.filter((e) => e.dir === "c2s").length;
      expect(seen).toHaveLength(clientLineCount);
    } finally {
      server.close();
    }
  });

  it("reports the divergence sentinel and stops the run early", async () => {
    // lr far above 2/curvature blows the iterate up geometrically; the mirror
    // predicts the exact step where loss overflows to Infinity.
    const lr = 1e200;
    const mirror = new QuadraticSim(CURVATURE);
    const t: TranscriptEntry[] = [];
    t.push(entry("c2s", { type: "hello", protocolVersion: "autolrs/1", configOverrides: {} }));
    t.push(entry("s2c", { type: "set_lr", lr }));
    t.push(entry("s2c", { type: "train", steps: 50, lossSource: "train", reportEvery: 50, commandId: 9 }));
    const expected = expectedTrainLines(mirror, lr, 50, "train", 50, 9);
    t.push(...expected);
    t.push(entry("s2c", { type: "shutdown", reason: "done" }));

    const divergenceReports = expected.filter((e) => e.line.includes('"value":1e+30'));
    expect(divergenceReports.length).toBe(1);

    const { server, port, done } = await replayServer(t, (got, want) => {
      expect(got).toStrictEqual(want);
    });
    try {
      const outcome = await attach(quadraticBinding(CURVATURE), { host: "127.0.0.1", port });
      await done;
      expect(outcome.shutdownReason).toBe("done");
    } finally {
      server.close();
    }
  });
});
