// Render functions: state in, HTML string out. No document access here,
// so the whole layer is testable under node.

import { patchUrl, type ClassesResponse, type QueuePage, type ReviewItem } from './api.js';
import { groupByClass, type LedgerView } from './state.js';
import type { AppState } from './app.js';

export function esc(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

export function renderBanner(state: AppState): string {
  if (state.error) {
    return `<div class="banner error" role="alert">${esc(state.error)}</div>`;
  }
  if (state.notice) {
    return `<div class="banner notice">${esc(state.notice)}</div>`;
  }
  return '';
}

export function renderClassOptions(classes: ClassesResponse | null, selected?: number): string {
  const options = ['<option value="">all classes</option>'];
  for (const c of classes?.classes ?? []) {
    const mark = c.id === selected ? ' selected' : '';
    options.push(`<option value="${c.id}"${mark}>${c.id} ${esc(c.name)}</option>`);
  }
  return options.join('');
}

function renderExemplars(item: ReviewItem): string {
  if (item.exemplars.length === 0) return '';
  const thumbs = item.exemplars
    .map(
      (ref) =>
        `<img class="exemplar" src="${patchUrl(ref)}" alt="exemplar ${esc(ref.key)}" title="${esc(ref.key)}">`,
    )
    .join('');
  return `<div class="exemplars">${thumbs}</div>`;
}

function renderCard(item: ReviewItem, selected: boolean): string {
  const classes = selected ? 'card selected' : 'card';
  const pct = (item.confidence * 100).toFixed(1);
  return [
    `<div class="${classes}" data-key="${esc(item.key)}">`,
    `<img class="patch" src="${patchUrl(item)}" alt="${esc(item.key)}">`,
    `<div class="meta"><span class="ref">${esc(item.key)}</span>`,
    `<span class="confidence">${pct}%</span></div>`,
    renderExemplars(item),
    '</div>',
  ].join('');
}

export function renderQueue(state: AppState): string {
  const queue = state.queue;
  if (!queue) return '<p class="empty">loading</p>';
  if (queue.items.length === 0) {
    return queue.total === 0
      ? '<p class="empty">queue is empty, nothing waiting for review</p>'
      : '<p class="empty">no items on this page</p>';
  }
  const selectedKey = queue.items[state.selected]?.key;
  const sections = groupByClass(queue.items).map((group) => {
    const cards = group.items.map((item) => renderCard(item, item.key === selectedKey)).join('');
    return [
      `<section class="class-group" data-class-id="${group.classId}">`,
      `<h2>${group.classId} ${esc(group.className)} <span class="count">${group.items.length}</span></h2>`,
      `<div class="cards">${cards}</div>`,
      '</section>',
    ].join('');
  });
  return sections.join('');
}

export function renderPager(queue: QueuePage | null): string {
  if (!queue) return '';
  return [
    '<button data-page="-1">prev</button>',
    `<span class="page-info">page ${queue.page} / ${queue.pages}, ${queue.total} pending</span>`,
    '<button data-page="1">next</button>',
  ].join(' ');
}

function cellText(cell: { predicted: number; correct: number; total: number } | null): string {
  if (!cell) return '<td class="cell empty-cell"></td>';
  return `<td class="cell">${cell.predicted} / ${cell.correct} / ${cell.total}</td>`;
}

export function renderLedger(view: LedgerView): string {
  if (view.iterations.length === 0) {
    return '<p class="empty">no labels recorded yet</p>';
  }
  const head = view.iterations.map((it) => `<th>iter ${it} (P / C / T)</th>`).join('');
  const body = view.perClass
    .map((row) => {
      const cells = row.cells.map(cellText).join('');
      return `<tr><th class="class-name">${row.classId} ${esc(row.className)}</th>${cells}</tr>`;
    })
    .join('');
  const totals = view.totals.map((cell) => cellText(cell)).join('');
  return [
    '<table class="ledger">',
    `<thead><tr><th>class</th>${head}</tr></thead>`,
    `<tbody>${body}</tbody>`,
    `<tfoot><tr><th>all classes</th>${totals}</tr></tfoot>`,
    '</table>',
  ].join('');
}

export function renderPicker(state: AppState): string {
  if (!state.picking) return '';
  const target = state.relabelBuffer === '' ? '&#95;' : esc(state.relabelBuffer);
  const rows = (state.classes?.classes ?? [])
    .map((c) => `<li data-class-id="${c.id}"><b>${c.id}</b> ${esc(c.name)}</li>`)
    .join('');
  return [
    '<div class="picker-backdrop">',
    '<div class="picker">',
    `<p>relabel as class <span class="buffer">${target}</span>, Enter to apply, Esc to cancel</p>`,
    `<ul class="class-list">${rows}</ul>`,
    '</div></div>',
  ].join('');
}

export function renderHelp(): string {
  const entries: [string, string][] = [
    ['&#8594; / j', 'next item'],
    ['&#8592; / k', 'previous item'],
    ['n / ]', 'next page'],
    ['p / [', 'previous page'],
    ['Enter / c', 'confirm predicted class'],
    ['Backspace / x', 'reject'],
    ['r', 'relabel (type class id, Enter)'],
    ['Esc', 'cancel relabel'],
  ];
  const items = entries
    .map(([key, what]) => `<li><kbd>${key}</kbd> ${esc(what)}</li>`)
    .join('');
  return `<ul class="help">${items}</ul>`;
}
