// Wire types mirroring the service JSON payloads.

export interface StorySummary {
  story_id: string;
  title: string;
  event_count: number;
  character_count: number;
}

export interface CharacterEntry {
  character: string;
  popularity_rank: number;
  speech_events: number;
  has_profile: boolean;
}

export interface SceneSpan {
  scene_index: number;
  min_time: number;
  max_time: number;
}

export interface TraceFact {
  fact_id: string;
  text: string;
  status: 'retrieval_supported' | 'self_supported' | 'unsupported';
  k: number;
  m: number;
  evidence: string[];
}

export interface RetrievedDoc {
  doc_id: string;
  story_id: string;
  scene_index: number;
  time: number;
  kind: string;
  speaker: string | null;
  text: string;
  score: number;
}

export interface StageRecord {
  stage: string;
  prompt: string;
  completion: string;
}

export interface Trace {
  method: string;
  task: Record<string, unknown>;
  query: string;
  config: Record<string, unknown>;
  retrieved: RetrievedDoc[];
  intermediate: string;
  facts: TraceFact[];
  removed: string[];
  final: string;
  stages: StageRecord[];
  timings: Record<string, number>;
}

export interface MessageResponse {
  response: string;
  trace: Trace;
}

export interface SessionOverrides {
  t?: string;
  m?: number;
  n?: number;
  method?: string;
}
