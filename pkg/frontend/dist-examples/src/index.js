export { attach, SessionError, } from "./client.js";
export { DIVERGENCE_LOSS, MAX_LINE_BYTES, PROTOCOL_VERSION, ProtocolError, decode, encode, } from "./messages.js";
