import { describe, expect, it } from "vitest";

import {
  MAX_LINE_BYTES,
  Message,
  ProtocolError,
  decode,
  encode,
} from "../src/messages.js";

function kindOf(line: Buffer | string): string {
  try {
    decode(line);
    return "ok";
  } catch (err) {
    if (err instanceof ProtocolError) return err.kind;
    throw err;
  }
}

describe("encode", () => {
  it("writes canonical field order with no spaces", () => {
    expect(
      encode({ type: "hello", protocolVersion: "autolrs/1", configOverrides: {} }).toString(),
    ).toBe('{"type":"hello","protocol_version":"autolrs/1","config_overrides":{}}\n');
    expect(
      encode({ type: "loss", step: 42, value: 1.5, source: "train" }).toString(),
    ).toBe('{"type":"loss","step":42,"value":1.5,"source":"train"}\n');
    expect(encode({ type: "command_done", commandId: 7 }).toString()).toBe(
      '{"type":"command_done","command_id":7}\n',
    );
    expect(encode({ type: "trainer_error", message: "boom" }).toString()).toBe(
      '{"type":"trainer_error","message":"boom"}\n',
    );
    expect(encode({ type: "stop" }).toString()).toBe('{"type":"stop"}\n');
  });

  it("keeps full float precision", () => {
    const value = 0.1 + 0.2;
    const round = decode(encode({ type: "loss", step: 1, value, source: "train" }));
    expect(round.type).toBe("loss");
    if (round.type === "loss") expect(round.value).toBe(value);
  });

  it("refuses non-finite numbers", () => {
    expect(() => encode({ type: "set_lr", lr: Infinity })).toThrow(RangeError);
    expect(() => encode({ type: "loss", step: 0, value: NaN, source: "train" })).toThrow(
      RangeError,
    );
  });
});

describe("decode round-trips", () => {
  const variants: Message[] = [
    { type: "hello", protocolVersion: "autolrs/1", configOverrides: {} },
    { type: "hello", protocolVersion: "autolrs/1", configOverrides: { k: 5, lr_min: 0.01 } },
    { type: "set_lr", lr: 0.25 },
    { type: "save_ckpt" },
    { type: "restore_ckpt" },
    { type: "train", steps: 500, lossSource: "validation", reportEvery: 50, commandId: 12 },
    { type: "eval_config", valMinibatches: 4, valEvery: 25 },
    { type: "shutdown", reason: "budget reached" },
    { type: "loss", step: 0, value: 0.6931471805599453, source: "validation" },
    { type: "loss", step: 99, value: 1e30, source: "train" },
    { type: "command_done", commandId: 12 },
    { type: "trainer_error", message: "lost my dataset" },
    { type: "stop" },
  ];
  for (const message of variants) {
    it(`round-trips ${message.type}`, () => {
      expect(decode(encode(message))).toStrictEqual(message);
    });
  }
});

describe("decode taxonomy", () => {
  it("classifies malformed input", () => {
    expect(kindOf("")).toBe("malformed");
    expect(kindOf("not json")).toBe("malformed");
    expect(kindOf("[1,2,3]")).toBe("malformed");
    expect(kindOf("null")).toBe("malformed");
    expect(kindOf(Buffer.from([0xff, 0xfe, 0x7b]))).toBe("malformed");
    expect(kindOf("Infinity")).toBe("malformed"); // JSON.parse rejects the literal outright
  });

  it("classifies missing and invalid fields", () => {
    expect(kindOf('{"lr":0.1}')).toBe("missing_field");
    expect(kindOf('{"type":"set_lr"}')).toBe("missing_field");
    expect(kindOf('{"type":3}')).toBe("invalid_field");
    expect(kindOf('{"type":"set_lr","lr":"fast"}')).toBe("invalid_field");
    expect(kindOf('{"type":"set_lr","lr":true}')).toBe("invalid_field");
    expect(kindOf('{"type":"set_lr","lr":0}')).toBe("invalid_field");
    expect(kindOf('{"type":"set_lr","lr":-0.5}')).toBe("invalid_field");
    expect(kindOf('{"type":"loss","step":-1,"value":1.0,"source":"train"}')).toBe(
      "invalid_field",
    );
    expect(kindOf('{"type":"loss","step":1.5,"value":1.0,"source":"train"}')).toBe(
      "invalid_field",
    );
    expect(kindOf('{"type":"loss","step":1,"value":1.0,"source":"test"}')).toBe(
      "invalid_field",
    );
    expect(kindOf('{"type":"train","steps":0,"loss_source":"train","report_every":1,"command_id":0}')).toBe(
      "invalid_field",
    );
    expect(kindOf('{"type":"hello","protocol_version":"autolrs/1","config_overrides":[1]}')).toBe(
      "invalid_field",
    );
  });

  it("classifies unknown types and non-finite numbers", () => {
    expect(kindOf('{"type":"warp_drive"}')).toBe("unknown_type");
    expect(kindOf('{"type":"set_lr","lr":1e999}')).toBe("non_finite");
    expect(kindOf('{"type":"loss","step":1,"value":-1e999,"source":"train"}')).toBe(
      "non_finite",
    );
  });

  it("ignores unknown fields and strips line endings", () => {
    const message = decode('{"type":"set_lr","lr":0.5,"debug_tag":"x"}\r\n');
    expect(message).toStrictEqual({ type: "set_lr", lr: 0.5 });
  });

  it("accepts integer-encoded floats", () => {
    const message = decode('{"type":"loss","step":1,"value":2,"source":"train"}');
    expect(message).toStrictEqual({ type: "loss", step: 1, value: 2, source: "train" });
  });

  it("rejects oversized lines as malformed", () => {
    const line = '{"type":"stop"' + " ".repeat(MAX_LINE_BYTES) + "}";
    expect(kindOf(line)).toBe("malformed");
  });

  it("accepts the divergence sentinel", () => {
    const message = decode('{"type":"loss","step":3,"value":1e30,"source":"train"}');
    if (message.type === "loss") expect(message.value).toBe(1e30);
  });
});
