// Cockpit state: latest frame, connection status, and the command lifecycle
// (buttons stay disabled until the server acknowledges or a timeout fires).

import {
  AckMessage,
  CommandKind,
  ServerMessage,
  SessionCommand,
  StateFrame,
} from "./protocol.js";

export type ConnectionStatus = "connecting" | "connected" | "closed";

export interface CommandRecord {
  id: number;
  kind: CommandKind;
  sentAt: number;
  status: "pending" | "ok" | "applied" | "ignored" | "timeout";
}

export interface CommandTransport {
  send(text: string): void;
}

export const ACK_TIMEOUT_MS = 2000;

export class CockpitViewModel {
  latestFrame: StateFrame | null = null;
  connection: ConnectionStatus = "connecting";
  scenarioName = "";
  history: CommandRecord[] = [];
  speedFactor = 1;
  lastError = "";
  ended = false;

  private nextId = 1;
  private transport: CommandTransport | null = null;
  private now: () => number;

  constructor(now: () => number = () => Date.now()) {
    this.now = now;
  }

  attach(transport: CommandTransport): void {
    this.transport = transport;
    this.connection = "connecting";
  }

  onClose(): void {
    this.connection = "closed";
  }

  handleMessage(msg: ServerMessage): void {
    switch (msg.type) {
      case "hello":
        this.connection = "connected";
        this.scenarioName = msg.scenario;
        break;
      case "frame":
        // stale frames (older or equal t) are discarded
        if (this.latestFrame === null || msg.t > this.latestFrame.t) {
          this.latestFrame = msg;
        }
        break;
      case "ack":
        this.resolveAck(msg);
        break;
      case "error":
        this.lastError = msg.message;
        break;
      case "end":
        this.ended = true;
        break;
    }
  }

  private resolveAck(ack: AckMessage): void {
    for (const record of this.history) {
      if (record.id === ack.id && record.status === "pending") {
        record.status = ack.status;
        return;
      }
    }
  }

  /** Expire pending commands past the ack timeout; call from a timer. */
  expireStale(): void {
    const cutoff = this.now() - ACK_TIMEOUT_MS;
    for (const record of this.history) {
      if (record.status === "pending" && record.sentAt <= cutoff) {
        record.status = "timeout";
      }
    }
  }

  /** A maneuver button is enabled only when nothing of its kind is pending. */
  canSend(kind: CommandKind): boolean {
    if (this.connection !== "connected") return false;
    return !this.history.some(
      (r) => r.kind === kind && r.status === "pending",
    );
  }

  command(kind: CommandKind, params: Partial<SessionCommand> = {}): number | null {
    if (!this.transport || !this.canSend(kind)) return null;
    const id = this.nextId++;
    const message: SessionCommand = {
      type: "command",
      kind,
      id,
      issued_at: this.now() / 1000,
      ...params,
    };
    if (kind === "set_speed_factor" && typeof params.factor === "number") {
      this.speedFactor = params.factor;
    }
    this.history.push({ id, kind, sentAt: this.now(), status: "pending" });
    this.transport.send(JSON.stringify(message));
    return id;
  }
}
