// App controller: owns the state, talks to the backend, stays DOM-free.
// main.ts renders on every onChange; tests drive it with a fake backend.

import {
  ConflictError,
  type BackendClient,
  type ClassesResponse,
  type DecisionAction,
  type LedgerRow,
  type QueuePage,
  type QueueQuery,
  type ReviewItem,
} from './api.js';
import type { KeyAction } from './keyboard.js';
import { bufferedClassId, clampSelection, pushDigit, removeItem } from './state.js';

export interface AppState {
  classes: ClassesResponse | null;
  queue: QueuePage | null;
  ledger: LedgerRow[];
  selected: number;
  picking: boolean;
  relabelBuffer: string;
  error: string | null;
  notice: string | null;
  query: QueueQuery;
}

export class App {
  state: AppState = {
    classes: null,
    queue: null,
    ledger: [],
    selected: 0,
    picking: false,
    relabelBuffer: '',
    error: null,
    notice: null,
    query: { sort: 'confidence', page: 1, pageSize: 24 },
  };

  constructor(
    private backend: BackendClient,
    private onChange: (state: AppState) => void = () => {},
  ) {}

  private emit(): void {
    this.onChange(this.state);
  }

  private fail(context: string, err: unknown): void {
    const message = err instanceof Error ? err.message : String(err);
    // keep whatever data is already on screen; just raise the banner
    this.state.error = `${context}: ${message}`;
    this.emit();
  }

  async load(): Promise<void> {
    try {
      const [classes, ledger] = await Promise.all([
        this.backend.fetchClasses(),
        this.backend.fetchLedger(),
      ]);
      this.state.classes = classes;
      this.state.ledger = ledger;
      this.state.error = null;
    } catch (err) {
      this.fail('backend unreachable', err);
      return;
    }
    await this.refreshQueue();
  }

  async refreshQueue(): Promise<void> {
    try {
      let page = await this.backend.fetchQueue(this.state.query);
      if (page.page > page.pages) {
        this.state.query.page = page.pages;
        page = await this.backend.fetchQueue(this.state.query);
      }
      this.state.queue = page;
      this.state.selected = clampSelection(page.items.length, this.state.selected);
      this.state.error = null;
    } catch (err) {
      this.fail('queue fetch failed', err);
      return;
    }
    this.emit();
  }

  selectedItem(): ReviewItem | null {
    const queue = this.state.queue;
    if (!queue || queue.items.length === 0) return null;
    return queue.items[clampSelection(queue.items.length, this.state.selected)];
  }

  move(delta: number): void {
    const queue = this.state.queue;
    if (!queue) return;
    this.state.selected = clampSelection(queue.items.length, this.state.selected + delta);
    this.emit();
  }

  selectKey(key: string): void {
    const queue = this.state.queue;
    if (!queue) return;
    const index = queue.items.findIndex((item) => item.key === key);
    if (index < 0) return;
    this.state.selected = index;
    this.emit();
  }

  async page(delta: number): Promise<void> {
    const queue = this.state.queue;
    if (!queue) return;
    const next = Math.min(Math.max((this.state.query.page ?? 1) + delta, 1), queue.pages);
    if (next === this.state.query.page) return;
    this.state.query.page = next;
    this.state.selected = 0;
    await this.refreshQueue();
  }

  /** Filter, sort or iteration change; resets to the first page. */
  async setQuery(partial: Partial<QueueQuery>): Promise<void> {
    this.state.query = { ...this.state.query, ...partial, page: 1 };
    this.state.selected = 0;
    await this.refreshQueue();
  }

  startRelabel(): void {
    if (!this.selectedItem()) return;
    this.state.picking = true;
    this.state.relabelBuffer = '';
    this.emit();
  }

  pushRelabelDigit(digit: string): void {
    this.state.relabelBuffer = pushDigit(this.state.relabelBuffer, digit);
    this.emit();
  }

  cancelRelabel(): void {
    this.state.picking = false;
    this.state.relabelBuffer = '';
    this.emit();
  }

  /** Relabel straight to a class chosen by click instead of typed id. */
  async pickClass(classId: number): Promise<void> {
    this.cancelRelabel();
    await this.decide('relabel', classId);
  }

  async commitRelabel(): Promise<void> {
    const classes = this.state.classes?.classes ?? [];
    const classId = bufferedClassId(this.state.relabelBuffer, classes);
    if (classId === null) {
      this.state.notice = `no class ${this.state.relabelBuffer || '?'}`;
      this.emit();
      return;
    }
    this.cancelRelabel();
    await this.decide('relabel', classId);
  }

  async decide(action: DecisionAction, classId?: number): Promise<void> {
    const item = this.selectedItem();
    if (!item || !this.state.queue) return;
    try {
      const outcome = await this.backend.submitDecision(item, action, classId);
      this.state.queue = removeItem(this.state.queue, item.key);
      this.state.ledger = outcome.ledger;
      this.state.selected = clampSelection(this.state.queue.items.length, this.state.selected);
      this.state.notice = `${action} ${item.key}`;
      this.state.error = null;
      if (this.state.queue.items.length === 0 && this.state.queue.total > 0) {
        await this.refreshQueue();
        return;
      }
    } catch (err) {
      if (err instanceof ConflictError) {
        // someone else got there first; pull the current truth
        this.state.notice = `already decided elsewhere: ${item.key}`;
        try {
          this.state.ledger = await this.backend.fetchLedger();
        } catch {
          // the queue refresh below will surface connectivity problems
        }
        await this.refreshQueue();
        return;
      }
      this.fail('decision failed', err);
      return;
    }
    this.emit();
  }

  async handleKey(action: KeyAction): Promise<void> {
    switch (action.kind) {
      case 'move':
        this.move(action.delta);
        break;
      case 'page':
        await this.page(action.delta);
        break;
      case 'confirm':
        await this.decide('confirm');
        break;
      case 'reject':
        await this.decide('reject');
        break;
      case 'startRelabel':
        this.startRelabel();
        break;
      case 'digit':
        this.pushRelabelDigit(action.digit);
        break;
      case 'commitRelabel':
        await this.commitRelabel();
        break;
      case 'cancel':
        this.cancelRelabel();
        break;
    }
  }
}
