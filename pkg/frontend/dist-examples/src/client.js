/**
 * attach() connects a training loop to an autolrs controller and runs the
 * session to completion. The adapter is a pure command translator: every
 * scheduling decision stays on the server, every training operation stays in
 * the binding's callbacks.
 */
import * as net from "node:net";
import { DIVERGENCE_LOSS, MAX_LINE_BYTES, PROTOCOL_VERSION, ProtocolError, decode, encode, } from "./messages.js";
/** Session-level failure that is not a wire-format problem. */
export class SessionError extends Error {
    constructor(message) {
        super(message);
        this.name = "SessionError";
    }
}
class LineFeed {
    chunks = [];
    buffered = 0;
    lines = [];
    waiter = null;
    ended = false;
    failure = null;
    push(chunk) {
        this.chunks.push(chunk);
        this.buffered += chunk.length;
        this.split();
        this.wake();
    }
    end() {
        this.ended = true;
        this.wake();
    }
    fail(err) {
        this.failure = err;
        this.wake();
    }
    wake() {
        if (this.waiter) {
            const w = this.waiter;
            this.waiter = null;
            w();
        }
    }
    split() {
        let data = this.chunks.length === 1 ? this.chunks[0] : Buffer.concat(this.chunks);
        for (;;) {
            const nl = data.indexOf(0x0a);
            if (nl < 0)
                break;
            this.lines.push(data.subarray(0, nl));
            data = data.subarray(nl + 1);
        }
        this.chunks = [data];
        this.buffered = data.length;
        if (this.buffered > MAX_LINE_BYTES) {
            this.failure = new ProtocolError("malformed", `line exceeds ${MAX_LINE_BYTES} bytes`);
        }
    }
    /** Next complete line, or null on clean end of stream. */
    async next() {
        for (;;) {
            if (this.lines.length > 0)
                return this.lines.shift();
            if (this.failure)
                throw this.failure;
            if (this.ended)
                return null;
            await new Promise((resolve) => {
                this.waiter = resolve;
            });
        }
    }
}
function isAsyncIterable(value) {
    return Symbol.asyncIterator in value;
}
async function* iterateSteps(source) {
    if (isAsyncIterable(source)) {
        for await (const pair of source)
            yield pair;
    }
    else {
        for (const pair of source)
            yield pair;
    }
}
function wireLoss(value) {
    return Number.isFinite(value) ? value : DIVERGENCE_LOSS;
}
/**
 * Run one full session against the controller at `address`.
 *
 * Resolves when the server sends shutdown. Rejects on connection loss, on a
 * malformed server line (ProtocolError), or on a callback exception; in the
 * last case a trainer_error is sent before the socket closes so the server
 * can log why the trainer left.
 */
export async function attach(binding, address) {
    const socket = net.createConnection({ host: address.host, port: address.port });
    socket.setNoDelay(true);
    const feed = new LineFeed();
    socket.on("data", (chunk) => feed.push(chunk));
    socket.on("end", () => feed.end());
    socket.on("error", (err) => feed.fail(err));
    // close without end or error still has to wake a parked reader
    socket.on("close", () => feed.end());
    await new Promise((resolve, reject) => {
        socket.once("connect", () => resolve());
        socket.once("error", reject);
    });
    // A write while the socket is backed up parks on drain; if the connection
    // dies in that window drain never fires, so the wait must also watch for
    // close and error or a mid-train failure leaves the session hanging.
    const send = async (message) => {
        if (socket.destroyed) {
            throw new SessionError("connection closed before shutdown");
        }
        if (!socket.write(encode(message))) {
            await new Promise((resolve, reject) => {
                const cleanup = () => {
                    socket.off("drain", onDrain);
                    socket.off("close", onClose);
                    socket.off("error", onError);
                };
                const onDrain = () => {
                    cleanup();
                    resolve();
                };
                const onClose = () => {
                    cleanup();
                    reject(new SessionError("connection closed before shutdown"));
                };
                const onError = (err) => {
                    cleanup();
                    reject(err);
                };
                socket.on("drain", onDrain);
                socket.on("close", onClose);
                socket.on("error", onError);
            });
        }
    };
    const handleTrain = async (command) => {
        const source = command.lossSource;
        if (source === "validation") {
            const anchor = await binding.evalValidation();
            await send({ type: "loss", step: 0, value: wireLoss(anchor), source });
        }
        for await (const [step, rawLoss] of iterateSteps(binding.trainSteps(command.steps))) {
            if (!Number.isFinite(rawLoss)) {
                await send({ type: "loss", step, value: DIVERGENCE_LOSS, source });
                break;
            }
            if (step % command.reportEvery === 0) {
                if (source === "train") {
                    await send({ type: "loss", step, value: rawLoss, source });
                }
                else {
                    const value = await binding.evalValidation();
                    if (!Number.isFinite(value)) {
                        await send({ type: "loss", step, value: DIVERGENCE_LOSS, source });
                        break;
                    }
                    await send({ type: "loss", step, value, source });
                }
            }
        }
        await send({ type: "command_done", commandId: command.commandId });
    };
    const handle = async (command) => {
        switch (command.type) {
            case "set_lr":
                await binding.setLr(command.lr);
                return null;
            case "save_ckpt":
                await binding.saveCheckpoint();
                return null;
            case "restore_ckpt":
                await binding.restoreCheckpoint();
                return null;
            case "eval_config":
                binding.evalConfig?.(command.valMinibatches, command.valEvery);
                return null;
            case "train":
                await handleTrain(command);
                return null;
            case "shutdown":
                return command.reason;
        }
    };
    let commandsHandled = 0;
    try {
        await send({
            type: "hello",
            protocolVersion: PROTOCOL_VERSION,
            configOverrides: binding.configOverrides ?? {},
        });
        for (;;) {
            const line = await feed.next();
            if (line === null) {
                throw new SessionError("connection closed before shutdown");
            }
            const message = decode(line);
            switch (message.type) {
                case "set_lr":
                case "save_ckpt":
                case "restore_ckpt":
                case "eval_config":
                case "train":
                case "shutdown":
                    break;
                default:
                    throw new SessionError(`unexpected server message: ${message.type}`);
            }
            commandsHandled += 1;
            let reason;
            try {
                reason = await handle(message);
            }
            catch (err) {
                // surface the training failure to the server, then give up
                if (err instanceof ProtocolError || err instanceof SessionError)
                    throw err;
                const detail = err instanceof Error ? err.message : String(err);
                await send({ type: "trainer_error", message: detail }).catch(() => { });
                throw err;
            }
            if (reason !== null) {
                return { shutdownReason: reason, commandsHandled };
            }
        }
    }
    finally {
        socket.destroy();
    }
}
