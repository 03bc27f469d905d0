// Pure state transforms; everything here is synchronous and DOM-free.

import type { ClassInfo, LedgerRow, QueuePage, ReviewItem } from './api.js';

export interface ClassGroup {
  classId: number;
  className: string;
  items: ReviewItem[];
}

/**
 * Group a page's items by predicted class without reordering them.
 * The backend sorts ascending by confidence, so groups appear in order
 * of their hardest item and stay sorted inside.
 */
export function groupByClass(items: ReviewItem[]): ClassGroup[] {
  const groups: ClassGroup[] = [];
  const index = new Map<number, ClassGroup>();
  for (const item of items) {
    let group = index.get(item.predicted_class);
    if (!group) {
      group = { classId: item.predicted_class, className: item.predicted_class_name, items: [] };
      index.set(item.predicted_class, group);
      groups.push(group);
    }
    group.items.push(item);
  }
  return groups;
}

export function pageCount(total: number, pageSize: number): number {
  return Math.max(1, Math.ceil(total / pageSize));
}

/** Drop one decided item from the current page. */
export function removeItem(page: QueuePage, key: string): QueuePage {
  const items = page.items.filter((item) => item.key !== key);
  if (items.length === page.items.length) return page;
  const total = page.total - 1;
  return { ...page, items, total, pages: pageCount(total, page.page_size) };
}

export function clampSelection(count: number, wanted: number): number {
  if (count === 0) return 0;
  return Math.min(Math.max(wanted, 0), count - 1);
}

export interface LedgerCell {
  predicted: number;
  correct: number;
  total: number;
}

export interface LedgerView {
  iterations: number[];
  perClass: { classId: number; className: string; cells: (LedgerCell | null)[] }[];
  totals: LedgerCell[];
}

/** Pivot flat ledger rows into class x iteration cells plus a totals row. */
export function ledgerView(rows: LedgerRow[], classes: ClassInfo[]): LedgerView {
  const iterations = [...new Set(rows.map((r) => r.iteration))].sort((a, b) => a - b);
  const names = new Map(classes.map((c) => [c.id, c.name]));
  const byClass = new Map<number, Map<number, LedgerCell>>();
  for (const row of rows) {
    if (!byClass.has(row.class_id)) byClass.set(row.class_id, new Map());
    byClass.get(row.class_id)!.set(row.iteration, {
      predicted: row.predicted,
      correct: row.correct,
      total: row.total,
    });
  }
  const perClass = [...byClass.keys()]
    .sort((a, b) => a - b)
    .map((classId) => ({
      classId,
      className: names.get(classId) ?? `class ${classId}`,
      cells: iterations.map((it) => byClass.get(classId)!.get(it) ?? null),
    }));
  const totals = iterations.map((_, column) => {
    const cell = { predicted: 0, correct: 0, total: 0 };
    for (const entry of perClass) {
      const c = entry.cells[column];
      if (c) {
        cell.predicted += c.predicted;
        cell.correct += c.correct;
        cell.total += c.total;
      }
    }
    return cell;
  });
  return { iterations, perClass, totals };
}

/** Relabel target being typed digit by digit; empty means no target yet. */
export function pushDigit(buffer: string, digit: string): string {
  // leading zero only alone: class 0 is real, "01" is not a new class
  if (buffer === '0') return digit;
  return buffer + digit;
}

export function bufferedClassId(buffer: string, classes: ClassInfo[]): number | null {
  if (!buffer) return null;
  const id = Number(buffer);
  return classes.some((c) => c.id === id) ? id : null;
}
