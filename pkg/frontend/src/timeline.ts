// Cutoff-slider helpers over the story timeline.

import type { SceneSpan } from './types.js';

export function timelineBounds(spans: SceneSpan[]): { min: number; max: number } {
  if (spans.length === 0) {
    return { min: 0, max: 0 };
  }
  return {
    min: Math.min(...spans.map((s) => s.min_time)),
    max: Math.max(...spans.map((s) => s.max_time)),
  };
}

/** Scenes whose first event is within the cutoff; what the slider reveals. */
export function visibleScenes(spans: SceneSpan[], cutoff: number): SceneSpan[] {
  return spans.filter((span) => span.min_time <= cutoff);
}

export function cutoffLabel(spans: SceneSpan[], cutoff: number | null): string {
  if (cutoff === null) {
    return 'full story';
  }
  const visible = visibleScenes(spans, cutoff);
  const scene = visible.length ? visible[visible.length - 1]!.scene_index : 0;
  return `scene ${scene} · t=${cutoff}`;
}
