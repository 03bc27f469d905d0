import type { ClassInfo, LedgerRow, QueuePage, ReviewItem } from '../src/api.js';
import type { AppState } from '../src/app.js';

export const CLASSES: ClassInfo[] = [
  { id: 0, name: 'flat-hand' },
  { id: 1, name: 'fist' },
  { id: 2, name: 'index-point' },
  { id: 3, name: 'garbage' },
];

export function item(
  videoId: string,
  frameIndex: number,
  side: string,
  predicted: number,
  confidence: number,
  iteration = 2,
): ReviewItem {
  const name = CLASSES.find((c) => c.id === predicted)?.name ?? `class ${predicted}`;
  return {
    video_id: videoId,
    frame_index: frameIndex,
    side,
    key: `${videoId}/${side}/${frameIndex}`,
    predicted_class: predicted,
    predicted_class_name: name,
    confidence,
    iteration,
    exemplars: [],
  };
}

export function page(items: ReviewItem[], pageSize = 24): QueuePage {
  return {
    iteration: 2,
    total: items.length,
    page: 1,
    pages: Math.max(1, Math.ceil(items.length / pageSize)),
    page_size: pageSize,
    items,
  };
}

export function row(
  classId: number,
  iteration: number,
  predicted: number,
  correct: number,
  total: number,
): LedgerRow {
  return { class_id: classId, iteration, predicted, correct, total };
}

export function state(partial: Partial<AppState> = {}): AppState {
  return {
    classes: { classes: CLASSES, uninformative: [3] },
    queue: null,
    ledger: [],
    selected: 0,
    picking: false,
    relabelBuffer: '',
    error: null,
    notice: null,
    query: { sort: 'confidence', page: 1, pageSize: 24 },
    ...partial,
  };
}
