/**
 * Wire types mirroring the fedtrace server's JSON bodies and events.
 *
 * The dashboard never recomputes model math: every displayed number is a
 * verbatim copy out of one of these payloads.
 */

export type EventKind =
  | "ROUND_COMMITTED"
  | "BREAKPOINT_HIT"
  | "SESSION_STATE"
  | "LOCALIZATION_RESULT"
  | "FIX_APPLIED";

export interface ApiEvent {
  kind: EventKind;
  seq: number;
  payload: Record<string, unknown>;
}

export interface RoundSummary {
  round_id: number;
  participants: number[];
  num_participants: number;
  mean_training_loss: number | null;
  aggregation_duration: number;
  carried_forward: boolean;
  global_digest: string;
}

export interface BranchInfo {
  name: string;
  from_round: number;
  mode: string;
  faulty_ids: number[];
}

export interface RoundsResponse {
  rounds: RoundSummary[];
  head: string;
  branches: BranchInfo[];
}

export interface ClientMetricsBody {
  training_loss: number;
  response_time: number;
  dataset_size: number;
  learning_rate: number;
  epochs: number;
  batch_size: number;
  weight_decay: number;
}

export interface CursorBody {
  round: number;
  granularity: "round" | "client";
  client_position: number | null;
}

export interface SessionStateBody {
  cursor: CursorBody;
  participants: number[];
  metrics: Record<string, ClientMetricsBody>;
  partial_global: { digest: string; num_params: number };
  round_global_digest: string;
}

export interface OpenSessionResponse {
  session_id: number;
  state: SessionStateBody;
}

export interface StepResponse {
  state: SessionStateBody;
  moved: boolean;
  note: string | null;
}

export interface InputVerdictBody {
  input_index: number;
  accused: number;
  max_common_activations: number;
  tie: boolean;
}

export interface LocalizationBody {
  session_id: number;
  round_id: number;
  verdict: number;
  threshold: number;
  suite_size: number;
  per_input: InputVerdictBody[];
}

export interface FixBody {
  session_id: number;
  branch: string;
  mode: string;
  from_round: number;
  rounds: number[];
  carried_forward_rounds: number[];
  head_digest: string;
  adopted: boolean;
  barred: number[];
}

export type StepDirection = "next" | "back" | "in" | "out";
