// Message schema for the bridge socket (JSON, one message per WS text frame).
// Mirrors docs/bridge_protocol.md on the simulator side.

export interface VehicleShape {
  id?: string;
  x: number;
  y: number;
  psi: number;
  v: number;
  length: number;
  width: number;
}

export interface StateFrame {
  type: "frame";
  t: number;
  fsm: "L" | "F" | "O" | "A";
  ego: VehicleShape;
  actors: VehicleShape[];
  p_ref: [number, number];
  p_interim: [number, number];
  v_ref: number;
  horizon: [number, number][];
  reach: [number, number][];
  ssr: [number, number][];
  solver_status: string;
  metrics: {
    collision_occurred: boolean;
    timeline: [string, number][];
    completion: boolean;
    [key: string]: unknown;
  };
  lane_count: number;
  lane_width: number;
}

export interface HelloMessage {
  type: "hello";
  protocol: string;
  schema_version: number;
  scenario: string;
  planner_period: number;
}

export interface AckMessage {
  type: "ack";
  id?: number;
  kind: string;
  status: "ok" | "applied" | "ignored";
}

export interface ErrorMessage {
  type: "error";
  message: string;
}

export interface EndMessage {
  type: "end";
  t: number;
  metrics: StateFrame["metrics"];
}

export type ServerMessage =
  | StateFrame
  | HelloMessage
  | AckMessage
  | ErrorMessage
  | EndMessage;

export type CommandKind =
  | "start"
  | "pause"
  | "resume"
  | "reset"
  | "set_speed_factor"
  | "trigger_overtake"
  | "trigger_abort"
  | "spawn_oncoming"
  | "shutdown";

export interface SessionCommand {
  type: "command";
  kind: CommandKind;
  id: number;
  issued_at: number;
  factor?: number;
  speed?: number;
  gap?: number;
}

export function parseServerMessage(text: string): ServerMessage | null {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof raw !== "object" || raw === null) return null;
  const kind = (raw as { type?: unknown }).type;
  if (kind === "frame" || kind === "hello" || kind === "ack" ||
      kind === "error" || kind === "end") {
    return raw as ServerMessage;
  }
  return null;
}
