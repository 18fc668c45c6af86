// Browser wiring: session setup, chat, verification panel, and the
// threshold/sample-size/method controls. UI state is a pure projection of
// server responses; nothing is inferred client-side.

import { ApiError, ServiceClient } from './api.js';
import { cutoffLabel, timelineBounds } from './timeline.js';
import { escapeHtml, renderTraceHtml, toTraceView } from './traceView.js';
import type { SceneSpan, SessionOverrides } from './types.js';

declare global {
  interface Window {
    ROLEFACT_API_BASE?: string;
  }
}

const client = new ServiceClient(window.ROLEFACT_API_BASE ?? '');

interface UiState {
  sessionId: string | null;
  character: string;
  busy: boolean;
  timeline: SceneSpan[];
}

const state: UiState = { sessionId: null, character: '', busy: false, timeline: [] };

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function showBanner(message: string): void {
  const banner = el<HTMLDivElement>('banner');
  banner.textContent = message;
  banner.hidden = false;
}

function clearBanner(): void {
  el<HTMLDivElement>('banner').hidden = true;
}

function reportError(error: unknown): void {
  if (error instanceof ApiError) {
    showBanner(`request failed (HTTP ${error.status}): ${error.detail}`);
  } else {
    showBanner(`request failed: ${String(error)}`);
  }
}

function setChatEnabled(enabled: boolean): void {
  el<HTMLInputElement>('message-input').disabled = !enabled;
  el<HTMLButtonElement>('send-button').disabled = !enabled;
  el<HTMLInputElement>('t-slider').disabled = !enabled;
  el<HTMLSelectElement>('m-select').disabled = !enabled;
  el<HTMLSelectElement>('method-toggle').disabled = !enabled;
}

function currentOverrides(): SessionOverrides {
  const fifths = Number(el<HTMLInputElement>('t-slider').value);
  return {
    t: `${fifths}/5`,
    m: Number(el<HTMLSelectElement>('m-select').value),
    method: el<HTMLSelectElement>('method-toggle').value,
  };
}

function updateThresholdLabel(): void {
  const fifths = Number(el<HTMLInputElement>('t-slider').value);
  el<HTMLSpanElement>('t-label').textContent = `t = ${fifths}/5`;
}

function updateCutoffLabel(): void {
  const slider = el<HTMLInputElement>('cutoff-slider');
  const enabled = el<HTMLInputElement>('cutoff-enabled').checked;
  slider.disabled = !enabled;
  const cutoff = enabled ? Number(slider.value) : null;
  el<HTMLSpanElement>('cutoff-label').textContent = cutoffLabel(state.timeline, cutoff);
}

function appendChatLine(speaker: string, text: string, cssClass: string): void {
  const log = el<HTMLDivElement>('chat-log');
  const line = document.createElement('div');
  line.className = `chat-line ${cssClass}`;
  line.innerHTML = `<strong>${escapeHtml(speaker)}</strong> ${escapeHtml(text)}`;
  log.appendChild(line);
  log.scrollTop = log.scrollHeight;
}

async function populateStories(): Promise<void> {
  const stories = await client.listStories();
  const select = el<HTMLSelectElement>('story-select');
  select.innerHTML = stories
    .map(
      (s) =>
        `<option value="${escapeHtml(s.story_id)}">${escapeHtml(s.title)} (${s.event_count} events)</option>`,
    )
    .join('');
  await populateStoryDetails();
}

async function populateStoryDetails(): Promise<void> {
  const storyId = el<HTMLSelectElement>('story-select').value;
  const [characters, timeline] = await Promise.all([
    client.listCharacters(storyId),
    client.getTimeline(storyId),
  ]);
  el<HTMLSelectElement>('character-select').innerHTML = characters
    .map(
      (c) =>
        `<option value="${escapeHtml(c.character)}">${escapeHtml(c.character)} (rank ${c.popularity_rank})</option>`,
    )
    .join('');
  state.timeline = timeline;
  const bounds = timelineBounds(timeline);
  const slider = el<HTMLInputElement>('cutoff-slider');
  slider.min = String(bounds.min);
  slider.max = String(bounds.max);
  slider.value = String(bounds.max);
  updateCutoffLabel();
}

async function startSession(): Promise<void> {
  clearBanner();
  const storyId = el<HTMLSelectElement>('story-select').value;
  const character = el<HTMLSelectElement>('character-select').value;
  const method = el<HTMLSelectElement>('method-toggle').value;
  const cutoffEnabled = el<HTMLInputElement>('cutoff-enabled').checked;
  const cutoff = cutoffEnabled ? Number(el<HTMLInputElement>('cutoff-slider').value) : null;
  try {
    state.sessionId = await client.createSession({
      storyId,
      character,
      method,
      cutoff,
      overrides: { t: currentOverrides().t, m: currentOverrides().m },
    });
    state.character = character;
    el<HTMLDivElement>('chat-log').innerHTML = '';
    el<HTMLDivElement>('trace-panel').innerHTML =
      '<p class="no-verification">no messages yet</p>';
    setChatEnabled(true);
    el<HTMLSpanElement>('session-label').textContent =
      `talking to ${character} (${cutoff === null ? 'full story' : `cutoff t=${cutoff}`})`;
  } catch (error) {
    reportError(error);
  }
}

async function sendMessage(): Promise<void> {
  if (!state.sessionId || state.busy) {
    return;
  }
  const input = el<HTMLInputElement>('message-input');
  const text = input.value.trim();
  if (!text) {
    return;
  }
  clearBanner();
  state.busy = true;
  setChatEnabled(false);
  appendChatLine('you', text, 'user');
  try {
    const payload = await client.sendMessage(state.sessionId, text, currentOverrides());
    appendChatLine(state.character, payload.response, 'character');
    el<HTMLDivElement>('trace-panel').innerHTML = renderTraceHtml(toTraceView(payload.trace));
    input.value = '';
  } catch (error) {
    reportError(error);
  } finally {
    state.busy = false;
    setChatEnabled(true);
    input.focus();
  }
}

export function wireUp(): void {
  setChatEnabled(false);
  updateThresholdLabel();
  el<HTMLButtonElement>('start-button').addEventListener('click', () => void startSession());
  el<HTMLSelectElement>('story-select').addEventListener(
    'change',
    () => void populateStoryDetails().catch(reportError),
  );
  el<HTMLInputElement>('t-slider').addEventListener('input', updateThresholdLabel);
  el<HTMLInputElement>('cutoff-slider').addEventListener('input', updateCutoffLabel);
  el<HTMLInputElement>('cutoff-enabled').addEventListener('change', updateCutoffLabel);
  el<HTMLButtonElement>('send-button').addEventListener('click', () => void sendMessage());
  el<HTMLInputElement>('message-input').addEventListener('keydown', (event) => {
    if (event.key === 'Enter') {
      event.preventDefault();
      void sendMessage();
    }
  });
  populateStories().catch(reportError);
}

if (typeof document !== 'undefined' && document.getElementById('app')) {
  wireUp();
}
