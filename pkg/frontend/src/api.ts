// Types and fetch client for the annotation backend.

export interface ClassInfo {
  id: number;
  name: string;
}

export interface ClassesResponse {
  classes: ClassInfo[];
  uninformative: number[];
}

export interface ExemplarRef {
  video_id: string;
  frame_index: number;
  side: string;
  key: string;
}

export interface ReviewItem {
  video_id: string;
  frame_index: number;
  side: string;
  key: string;
  predicted_class: number;
  predicted_class_name: string;
  confidence: number;
  iteration: number;
  exemplars: ExemplarRef[];
}

export interface QueuePage {
  iteration: number;
  total: number;
  page: number;
  pages: number;
  page_size: number;
  items: ReviewItem[];
}

export interface LedgerRow {
  class_id: number;
  iteration: number;
  predicted: number;
  correct: number;
  total: number;
}

export type DecisionAction = 'confirm' | 'relabel' | 'reject';

export interface DecisionOutcome {
  resolved: string;
  action: DecisionAction;
  final_class: number | null;
  summary: { confirmed: number; relabeled: number; rejected: number };
  ledger: LedgerRow[];
}

/** The item was decided elsewhere first; refresh and move on. */
export class ConflictError extends Error {
  known: boolean;

  constructor(message: string, known: boolean) {
    super(message);
    this.name = 'ConflictError';
    this.known = known;
  }
}

export interface QueueQuery {
  iteration?: number;
  sort?: 'confidence' | 'ref';
  classId?: number;
  page?: number;
  pageSize?: number;
}

export function queueUrl(q: QueueQuery): string {
  const params = new URLSearchParams();
  if (q.iteration !== undefined) params.set('iteration', String(q.iteration));
  if (q.sort) params.set('sort', q.sort);
  if (q.classId !== undefined) params.set('class_id', String(q.classId));
  params.set('page', String(q.page ?? 1));
  params.set('page_size', String(q.pageSize ?? 24));
  return `/queue?${params.toString()}`;
}

export function patchUrl(ref: { video_id: string; side: string; frame_index: number }): string {
  return `/patch/${encodeURIComponent(ref.video_id)}/${ref.side}/${ref.frame_index}`;
}

/** What the app needs from the backend; tests substitute a fake. */
export interface BackendClient {
  fetchClasses(): Promise<ClassesResponse>;
  fetchQueue(q: QueueQuery): Promise<QueuePage>;
  fetchLedger(): Promise<LedgerRow[]>;
  submitDecision(
    item: ReviewItem,
    action: DecisionAction,
    classId?: number,
  ): Promise<DecisionOutcome>;
}

async function getJson<T>(url: string): Promise<T> {
  const response = await fetch(url);
  if (!response.ok) {
    throw new Error(`GET ${url} failed: ${response.status} ${response.statusText}`);
  }
  return response.json() as Promise<T>;
}

export const backend: BackendClient = {
  fetchClasses: () => getJson<ClassesResponse>('/classes'),
  fetchQueue: (q) => getJson<QueuePage>(queueUrl(q)),

  async fetchLedger() {
    const data = await getJson<{ rows: LedgerRow[] }>('/ledger');
    return data.rows;
  },

  async submitDecision(item, action, classId) {
    const body: Record<string, unknown> = {
      video_id: item.video_id,
      frame_index: item.frame_index,
      side: item.side,
      iteration: item.iteration,
      action,
    };
    if (action === 'relabel') body.class_id = classId;
    const response = await fetch('/decision', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
    if (response.status === 409) {
      const detail = (await response.json()) as { detail: string; known?: boolean };
      throw new ConflictError(detail.detail, Boolean(detail.known));
    }
    if (!response.ok) {
      throw new Error(`decision failed: ${response.status} ${response.statusText}`);
    }
    return response.json() as Promise<DecisionOutcome>;
  },
};
