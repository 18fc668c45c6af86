// Pure projection of a service trace into the verification panel model and
// its HTML rendering. No client-side inference: every row mirrors the trace.

import type { RetrievedDoc, Trace, TraceFact } from './types.js';

export const SNIPPET_LIMIT = 240;

export interface EvidenceSnippet {
  docId: string;
  stamp: string; // "scene s · t=n"
  shortText: string;
  fullText: string;
  truncated: boolean;
}

export interface FactRow {
  factId: string;
  text: string;
  badge: string;
  removed: boolean;
  evidence: EvidenceSnippet[];
}

export interface TraceView {
  method: string;
  finalResponse: string;
  verificationPerformed: boolean;
  factRows: FactRow[];
  stageTimings: Array<[string, number]>;
}

export function factBadge(fact: TraceFact): string {
  switch (fact.status) {
    case 'retrieval_supported':
      return 'retrieval-supported';
    case 'self_supported':
      return `self-supported ${fact.k}/${fact.m}`;
    default:
      return 'removed';
  }
}

function snippetFor(doc: RetrievedDoc): EvidenceSnippet {
  const text = doc.speaker ? `${doc.speaker}: ${doc.text}` : doc.text;
  const truncated = text.length > SNIPPET_LIMIT;
  return {
    docId: doc.doc_id,
    stamp: `scene ${doc.scene_index} · t=${doc.time}`,
    shortText: truncated ? `${text.slice(0, SNIPPET_LIMIT)}…` : text,
    fullText: text,
    truncated,
  };
}

export function toTraceView(trace: Trace): TraceView {
  const docsById = new Map(trace.retrieved.map((doc) => [doc.doc_id, doc]));
  const factRows = trace.facts.map((fact) => ({
    factId: fact.fact_id,
    text: fact.text,
    badge: factBadge(fact),
    removed: fact.status === 'unsupported',
    evidence: fact.evidence
      .map((docId) => docsById.get(docId))
      .filter((doc): doc is RetrievedDoc => doc !== undefined)
      .map(snippetFor),
  }));
  return {
    method: trace.method,
    finalResponse: trace.final,
    verificationPerformed: trace.method !== 'baseline',
    factRows,
    stageTimings: Object.entries(trace.timings),
  };
}

export function escapeHtml(text: string): string {
  return text
    .replaceAll('&', '&amp;')
    .replaceAll('<', '&lt;')
    .replaceAll('>', '&gt;')
    .replaceAll('"', '&quot;');
}

function renderSnippet(snippet: EvidenceSnippet): string {
  const stamp = `<span class="stamp">${escapeHtml(snippet.stamp)}</span>`;
  if (!snippet.truncated) {
    return `<li class="evidence">${stamp} ${escapeHtml(snippet.fullText)}</li>`;
  }
  // <details> gives expand-on-click without any script.
  return (
    `<li class="evidence">${stamp} <details>` +
    `<summary>${escapeHtml(snippet.shortText)}</summary>` +
    `<p>${escapeHtml(snippet.fullText)}</p>` +
    `</details></li>`
  );
}

function renderFactRow(row: FactRow): string {
  const badgeClass = row.removed
    ? 'badge removed'
    : row.badge.startsWith('retrieval')
      ? 'badge retrieval'
      : 'badge self';
  const text = row.removed
    ? `<s>${escapeHtml(row.text)}</s>`
    : escapeHtml(row.text);
  const evidence = row.evidence.length
    ? `<ul class="evidence-list">${row.evidence.map(renderSnippet).join('')}</ul>`
    : '';
  return (
    `<li class="fact-row" data-fact="${escapeHtml(row.factId)}">` +
    `<span class="${badgeClass}">${escapeHtml(row.badge)}</span> ` +
    `<span class="fact-text">${text}</span>${evidence}</li>`
  );
}

export function renderTraceHtml(view: TraceView): string {
  if (!view.verificationPerformed) {
    return '<p class="no-verification">no verification performed</p>';
  }
  const rows = view.factRows.map(renderFactRow).join('');
  const facts = rows
    ? `<ul class="fact-rows">${rows}</ul>`
    : '<p class="no-facts">no atomic facts extracted</p>';
  const timings = view.stageTimings
    .map(
      ([stage, seconds]) =>
        `<span class="timing">${escapeHtml(stage)}: ${(seconds * 1000).toFixed(1)}ms</span>`,
    )
    .join(' ');
  return `${facts}<div class="timings">${timings}</div>`;
}
