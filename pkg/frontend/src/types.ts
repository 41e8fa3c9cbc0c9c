/** Wire types mirroring the service's JSON schemas (schema_version 1). */

export interface ActionChoice {
  id: string;
  dose: number;
  protocol: string;
}

export interface ActionListResponse {
  schema_version: number;
  actions: ActionChoice[];
}

export interface IntervalRow {
  qt_ms: number;
  rr_ms: number;
  qtc_ms: number;
  pr_ms: number;
  tpte_ms: number;
  sex: string;
  qtc_normal: boolean;
  pr_normal: boolean;
  tpte_normal: boolean;
}

export interface SimulationRequest {
  baseline: { preset: string };
  action_id: string;
  dose: number;
  k: number;
  lambda: number;
  seed: number;
}

export interface SimulationResponse {
  schema_version: number;
  seed: number;
  seeds: number[];
  action: { id: string; dose: number };
  k: number;
  lambda: number;
  baseline: { intervals: IntervalRow | null };
  epk_trace: number[];
  waveforms: number[][][]; // sample -> channel -> trace
  sample_rate: number;
  intervals: (IntervalRow | null)[];
  risk: { samples: number[]; mu: number; sigma2: number | null };
  score?: { S: number; lambda: number };
  failures: unknown[];
}

export interface RankRequest {
  baseline: { preset: string };
  k: number;
  lambda: number;
  seed: number;
  doses?: number[];
  action_ids?: string[];
}

export interface RankedAction {
  id: string;
  dose: number;
  mu: number;
  sigma2: number;
  S: number;
  rank: number;
  samples: number[];
}

export interface RankReport {
  schema_version: number;
  lambda: number;
  K: number;
  seed: number;
  seeds: Record<string, number[]>;
  actions: RankedAction[];
}

export interface MaskRejection {
  error: string;
  reason: string;
}
