/**
 * Wire model for the autolrs/1 protocol, trainer side.
 *
 * One JSON object per newline-terminated line. Decoding is total: every
 * input either yields a message or throws a ProtocolError carrying one of
 * five kinds. Unknown fields are ignored so servers can extend messages;
 * unknown types are rejected.
 */
export const PROTOCOL_VERSION = "autolrs/1";
export const DIVERGENCE_LOSS = 1e30;
export const MAX_LINE_BYTES = 1 << 20;
export class ProtocolError extends Error {
    kind;
    detail;
    constructor(kind, detail) {
        super(`${kind}: ${detail}`);
        this.name = "ProtocolError";
        this.kind = kind;
        this.detail = detail;
    }
}
function fail(kind, detail) {
    throw new ProtocolError(kind, detail);
}
function need(doc, field) {
    if (!(field in doc))
        fail("missing_field", `missing field: ${field}`);
    return doc[field];
}
function asString(name, value) {
    if (typeof value !== "string")
        fail("invalid_field", `${name} must be a string`);
    return value;
}
function asInt(name, value, minimum) {
    // booleans are not integers on this wire
    if (typeof value === "boolean" || typeof value !== "number" || !Number.isInteger(value)) {
        fail("invalid_field", `${name} must be an integer`);
    }
    if (value < minimum)
        fail("invalid_field", `${name} must be >= ${minimum}, got ${value}`);
    return value;
}
function asFloat(name, value, positive = false) {
    if (typeof value === "boolean" || typeof value !== "number") {
        fail("invalid_field", `${name} must be a number`);
    }
    if (!Number.isFinite(value))
        fail("non_finite", `${name} is not a finite number`);
    if (positive && value <= 0)
        fail("invalid_field", `${name} must be > 0, got ${value}`);
    return value;
}
function asSource(name, value) {
    if (value !== "train" && value !== "validation") {
        fail("invalid_field", `${name} must be "train" or "validation"`);
    }
    return value;
}
function checkFinite(name, value) {
    if (typeof value !== "number" || Number.isNaN(value) || !Number.isFinite(value)) {
        throw new RangeError(`${name} must be finite to encode`);
    }
    return value;
}
/** Serialize a message to one canonical newline-terminated line. */
export function encode(message) {
    let doc;
    switch (message.type) {
        case "hello":
            doc = {
                type: "hello",
                protocol_version: message.protocolVersion,
                config_overrides: message.configOverrides,
            };
            break;
        case "set_lr":
            doc = { type: "set_lr", lr: checkFinite("lr", message.lr) };
            break;
        case "save_ckpt":
        case "restore_ckpt":
        case "stop":
            doc = { type: message.type };
            break;
        case "train":
            doc = {
                type: "train",
                steps: message.steps,
                loss_source: message.lossSource,
                report_every: message.reportEvery,
                command_id: message.commandId,
            };
            break;
        case "eval_config":
            doc = {
                type: "eval_config",
                val_minibatches: message.valMinibatches,
                val_every: message.valEvery,
            };
            break;
        case "shutdown":
            doc = { type: "shutdown", reason: message.reason };
            break;
        case "loss":
            doc = {
                type: "loss",
                step: message.step,
                value: checkFinite("value", message.value),
                source: message.source,
            };
            break;
        case "command_done":
            doc = { type: "command_done", command_id: message.commandId };
            break;
        case "trainer_error":
            doc = { type: "trainer_error", message: message.message };
            break;
        default:
            throw new TypeError(`not a protocol message: ${JSON.stringify(message)}`);
    }
    return Buffer.from(JSON.stringify(doc) + "\n", "utf8");
}
const DECODERS = {
    hello: (doc) => {
        const overrides = "config_overrides" in doc ? doc.config_overrides : {};
        if (overrides === null || typeof overrides !== "object" || Array.isArray(overrides)) {
            fail("invalid_field", "config_overrides must be an object");
        }
        return {
            type: "hello",
            protocolVersion: asString("protocol_version", need(doc, "protocol_version")),
            configOverrides: overrides,
        };
    },
    set_lr: (doc) => ({ type: "set_lr", lr: asFloat("lr", need(doc, "lr"), true) }),
    save_ckpt: () => ({ type: "save_ckpt" }),
    restore_ckpt: () => ({ type: "restore_ckpt" }),
    train: (doc) => ({
        type: "train",
        steps: asInt("steps", need(doc, "steps"), 1),
        lossSource: asSource("loss_source", need(doc, "loss_source")),
        reportEvery: asInt("report_every", need(doc, "report_every"), 1),
        commandId: asInt("command_id", need(doc, "command_id"), 0),
    }),
    eval_config: (doc) => ({
        type: "eval_config",
        valMinibatches: asInt("val_minibatches", need(doc, "val_minibatches"), 1),
        valEvery: asInt("val_every", need(doc, "val_every"), 1),
    }),
    shutdown: (doc) => ({ type: "shutdown", reason: asString("reason", need(doc, "reason")) }),
    loss: (doc) => ({
        type: "loss",
        step: asInt("step", need(doc, "step"), 0),
        value: asFloat("value", need(doc, "value")),
        source: asSource("source", need(doc, "source")),
    }),
    command_done: (doc) => ({
        type: "command_done",
        commandId: asInt("command_id", need(doc, "command_id"), 0),
    }),
    trainer_error: (doc) => ({
        type: "trainer_error",
        message: asString("message", need(doc, "message")),
    }),
    stop: () => ({ type: "stop" }),
};
/**
 * Parse one line into a message.
 *
 * Notable corner: JSON.parse rejects the bare Infinity/NaN literals outright,
 * so those surface as malformed rather than non_finite; overflowing numerals
 * like 1e999 parse to Infinity and are classified non_finite.
 */
export function decode(line) {
    const buf = typeof line === "string" ? Buffer.from(line, "utf8") : line;
    let end = buf.length;
    while (end > 0 && (buf[end - 1] === 0x0a || buf[end - 1] === 0x0d))
        end -= 1;
    const body = buf.subarray(0, end);
    if (body.length > MAX_LINE_BYTES) {
        fail("malformed", `line exceeds ${MAX_LINE_BYTES} bytes`);
    }
    let text;
    try {
        text = new TextDecoder("utf-8", { fatal: true }).decode(body);
    }
    catch {
        fail("malformed", "line is not valid UTF-8");
    }
    let doc;
    try {
        doc = JSON.parse(text);
    }
    catch (err) {
        fail("malformed", `invalid JSON: ${err.message}`);
    }
    if (doc === null || typeof doc !== "object" || Array.isArray(doc)) {
        fail("malformed", "top level must be a JSON object");
    }
    const record = doc;
    if (!("type" in record))
        fail("missing_field", "missing field: type");
    const tag = record.type;
    if (typeof tag !== "string")
        fail("invalid_field", "type must be a string");
    const decoder = DECODERS[tag];
    if (decoder === undefined)
        fail("unknown_type", `unknown message type: ${tag}`);
    return decoder(record);
}
