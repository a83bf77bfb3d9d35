export {
  attach,
  SessionError,
  type Address,
  type SessionOutcome,
  type TrainerBinding,
} from "./client.js";
export {
  DIVERGENCE_LOSS,
  MAX_LINE_BYTES,
  PROTOCOL_VERSION,
  ProtocolError,
  decode,
  encode,
  type Command,
  type CommandDone,
  type ErrorKind,
  type EvalConfig,
  type Event,
  type Hello,
  type LossReport,
  type LossSource,
  type Message,
  type RestoreCkpt,
  type SaveCkpt,
  type SetLr,
  type Shutdown,
  type Stop,
  type Train,
  type TrainerError,
} from "./messages.js";
